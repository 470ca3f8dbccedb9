"""Monte Carlo simulation of the distorted Heston state under feedback controls.

Wealth is stepped in log coordinates (so it stays positive) and the variance
with full-truncation Euler. Every path owns a xoshiro256+ stream seeded from
``hash(seed, path_index)``; results therefore do not depend on how paths are
blocked. Controls and the closed-form ``g`` are tabulated on the time steps
and a uniform variance grid, then linearly interpolated in ``y``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from numba import njit
from scipy.integrate import cumulative_simpson, simpson

from .closed_form import DEFAULT_QUADRATURE_N, eval_g, riccati_tau
from .errors import AdmissibilityViolation, DomainError
from .params import DerivedConstants, ModelParams

_MASK64 = (1 << 64) - 1
BLOCK = 512


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class SimConfig:
    n_paths: int
    dt: float = 1e-3
    seed: int = 0
    t_start: float = 0.0
    t_end: float = 9.95
    antithetic: bool = False
    record_times: tuple[float, ...] = ()
    # keep every n-th step of the trajectory as well (0: endpoints and record_times only)
    record_every: int = 0

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if not 0 < self.dt <= 1e-2:
            raise ValueError("dt must lie in (0, 1e-2]")
        if self.t_end < self.t_start:
            raise ValueError("t_end must not precede t_start")
        if self.antithetic and self.n_paths % 2:
            raise ValueError("antithetic sampling needs an even number of paths")
        if not 0 <= self.seed <= _MASK64:
            raise ValueError("seed must fit in 64 bits")
        steps = (self.t_end - self.t_start) / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError("(t_end - t_start) / dt must be an integer")
        for t in self.record_times:
            if not self.t_start <= t <= self.t_end:
                raise ValueError(f"record time {t} outside [t_start, t_end]")
            k = (t - self.t_start) / self.dt
            if abs(k - round(k)) > 1e-9 * max(1.0, k):
                raise ValueError(f"record time {t} is not on the time grid")

    @property
    def n_steps(self) -> int:
        return int(round((self.t_end - self.t_start) / self.dt))

    def record_steps(self) -> np.ndarray:
        steps = {0, self.n_steps}
        steps.update(int(round((t - self.t_start) / self.dt)) for t in self.record_times)
        if self.record_every > 0:
            steps.update(range(0, self.n_steps + 1, self.record_every))
        return np.array(sorted(steps), dtype=np.int64)


@dataclass(frozen=True)
class FeedbackControls:
    """Consumption ratio, portfolio and variance distortion as vectorised
    callables of (t, y); the wealth distortion is ``v1 = -a1 / x``."""

    pi: Callable[[float, np.ndarray], np.ndarray]
    cx: Callable[[float, np.ndarray], np.ndarray]
    v2: Callable[[float, np.ndarray], np.ndarray]
    a1: float = 0.0

    @classmethod
    def constant(cls, pi: float = 0.0, cx: float = 0.0, v2: float = 0.0, a1: float = 0.0):
        return cls(
            pi=lambda t, y: np.full_like(y, pi),
            cx=lambda t, y: np.full_like(y, cx),
            v2=lambda t, y: np.full_like(y, v2),
            a1=a1,
        )


@dataclass
class PathBundle:
    config: SimConfig
    times: np.ndarray            # recorded times
    X: np.ndarray                # (n_paths, n_times) wealth
    Y: np.ndarray                # (n_paths, n_times) variance, truncated at 0
    reward: np.ndarray           # int (f + penalty) dr per path
    stochastic_integral: np.ndarray  # int w_z^T Lambda dB per path
    path_seeds: np.ndarray       # uint64
    comparison_excess: np.ndarray | None = None  # max_s (Y_s - Ytilde_s) per path
    info: dict = field(default_factory=dict)

    @property
    def t_end(self) -> float:
        return float(self.times[-1])


@dataclass(frozen=True)
class McEstimate:
    mean: float
    standard_error: float
    n_effective: int


# ------------------------------------------------------------------ RNG


def path_seed(seed: int, index: int) -> int:
    """splitmix64 of ``seed`` mixed with a splitmix64 of ``index``."""

    def mix(z: int) -> int:
        z = (z + 0x9E3779B97F4A7C15) & _MASK64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    return mix(seed ^ mix(index))


def _path_seeds(seed: int, n: int) -> np.ndarray:
    return np.array([path_seed(seed, i) for i in range(n)], dtype=np.uint64)


@njit(cache=True, error_model="numpy")
def _splitmix(x):
    x = x + np.uint64(0x9E3779B97F4A7C15)
    z = x
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x, z ^ (z >> np.uint64(31))


@njit(cache=True, error_model="numpy")
def _seed_states(seeds):
    st = np.empty((seeds.size, 4), dtype=np.uint64)
    for p in range(seeds.size):
        x = seeds[p]
        for q in range(4):
            x, st[p, q] = _splitmix(x)
    return st


@njit(cache=True, error_model="numpy")
def _next_u64(st, p):
    # xoshiro256+
    s0, s1, s2, s3 = st[p, 0], st[p, 1], st[p, 2], st[p, 3]
    out = s0 + s3
    t = s1 << np.uint64(17)
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = (s3 << np.uint64(45)) | (s3 >> np.uint64(19))
    st[p, 0], st[p, 1], st[p, 2], st[p, 3] = s0, s1, s2, s3
    return out


@njit(cache=True, error_model="numpy")
def _signed_uniform(st, p):
    # top 53 bits mapped to [-1, 1)
    return np.int64(_next_u64(st, p) >> np.uint64(11)) * (2.0 / 9007199254740992.0) - 1.0


@njit(cache=True, error_model="numpy")
def _normal_pair(st, p):
    # Marsaglia polar method
    while True:
        u1 = _signed_uniform(st, p)
        u2 = _signed_uniform(st, p)
        s = u1 * u1 + u2 * u2
        if 0.0 < s < 1.0:
            f = math.sqrt(-2.0 * math.log(s) / s)
            return u1 * f, u2 * f


# ------------------------------------------------------------------ kernel

@njit(cache=True, error_model="numpy")
def _fill_normals(states, antithetic, z1s, z2s):
    if antithetic:
        for q in range(z1s.size // 2):
            z1, z2 = _normal_pair(states, q)
            z1s[2 * q], z2s[2 * q] = z1, z2
            z1s[2 * q + 1], z2s[2 * q + 1] = -z1, -z2
    else:
        for p in range(z1s.size):
            z1s[p], z2s[p] = _normal_pair(states, p)


# scalar parameter slots
_R, _LAM, _NU, _M, _BB, _RHO, _A, _A1, _GAMMA, _K, _DTHETA, _ZETA, _K2 = range(13)
# table slots
_LNG, _GYG, _PI, _CX, _CXB, _V2 = range(6)


@njit(cache=True, error_model="numpy", fastmath={"contract", "arcp", "afn", "reassoc", "nsz"})
def _simulate_block(states, antithetic, n_steps, dt, x0, y0, prm, inv_dy, tab,
                    rec_steps, out_L, out_Y, out_reward, out_mart, out_excess):
    n_paths = out_reward.size
    r, lam, nu, m, bb = prm[_R], prm[_LAM], prm[_NU], prm[_M], prm[_BB]
    rho, a, a1, gamma, k = prm[_RHO], prm[_A], prm[_A1], prm[_GAMMA], prm[_K]
    dtheta, zeta, k2 = prm[_DTHETA], prm[_ZETA], prm[_K2]
    one_g = 1.0 - gamma
    inv_one_g = 1.0 / one_g
    pen_scale = one_g / (2.0 * a) if a > 0.0 else 0.0
    rc = math.sqrt(max(1.0 - rho * rho, 0.0))
    sqdt = math.sqrt(dt)
    n_y = tab.shape[2]
    track_cmp = not math.isnan(k2)

    L = np.full(n_paths, math.log(x0))
    Y = np.full(n_paths, y0)
    Yc = np.full(n_paths, y0)
    z1s = np.empty(n_paths)
    z2s = np.empty(n_paths)
    for p in range(n_paths):
        out_reward[p] = 0.0
        out_mart[p] = 0.0
        out_excess[p] = -np.inf

    rec = 0
    if rec_steps[0] == 0:
        for p in range(n_paths):
            out_L[p, 0] = L[p]
            out_Y[p, 0] = y0
        rec = 1

    for j in range(n_steps):
        _fill_normals(states, antithetic, z1s, z2s)
        row = tab[j]
        for p in range(n_paths):
            yp = Y[p] if Y[p] > 0.0 else 0.0
            sy = math.sqrt(yp)
            pos = yp * inv_dy
            i = int(pos)
            if i > n_y - 2:
                i = n_y - 2
            fr = pos - i
            lg = row[_LNG, i] + fr * (row[_LNG, i + 1] - row[_LNG, i])
            gyg = row[_GYG, i] + fr * (row[_GYG, i + 1] - row[_GYG, i])
            pi = row[_PI, i] + fr * (row[_PI, i + 1] - row[_PI, i])
            cx = row[_CX, i] + fr * (row[_CX, i + 1] - row[_CX, i])
            cxb = row[_CXB, i] + fr * (row[_CXB, i + 1] - row[_CXB, i])
            v2 = row[_V2, i] + fr * (row[_V2, i + 1] - row[_V2, i])

            w = math.exp(one_g * L[p] + k * lg) * inv_one_g
            api = a1 * pi
            bv = bb * v2
            quad = yp * (api * api - 2.0 * rho * api * bv + bv * bv)
            if a > 0.0:
                pen = pen_scale * w * quad
            elif quad == 0.0:
                pen = 0.0
            else:
                pen = np.inf
            out_reward[p] += (dtheta * w * (cxb - 1.0) + pen) * dt

            dw1 = sqdt * z1s[p]
            dw2 = sqdt * z2s[p]
            wy_sig = k * w * gyg * bb * sy
            out_mart[p] += (one_g * w * pi * sy + wy_sig * rho) * dw1 + wy_sig * rc * dw2

            L[p] += (r + pi * lam * yp - cx - a1 * pi * pi * yp + pi * rho * bb * v2 * yp
                     - 0.5 * pi * pi * yp) * dt + pi * sy * dw1
            dnoise = bb * (rho * dw1 + rc * dw2)
            Y[p] += (nu - m * yp - rho * bb * pi * a1 * yp + bb * bb * v2 * yp) * dt + sy * dnoise
            if track_cmp:
                ycp = Yc[p] if Yc[p] > 0.0 else 0.0
                Yc[p] += (nu - k2 * ycp) * dt + math.sqrt(ycp) * dnoise
                yn = Y[p] if Y[p] > 0.0 else 0.0
                ycn = Yc[p] if Yc[p] > 0.0 else 0.0
                if yn - ycn > out_excess[p]:
                    out_excess[p] = yn - ycn
        if rec < rec_steps.size and rec_steps[rec] == j + 1:
            for p in range(n_paths):
                out_L[p, rec] = L[p]
                out_Y[p, rec] = Y[p] if Y[p] > 0.0 else 0.0
            rec += 1


# ------------------------------------------------------------------ tables


def default_y_grid(p: ModelParams, n_y: int = 256) -> np.ndarray:
    hi = max(0.5, 4 * p.y0, 20 * p.nu / p.m)
    return np.linspace(0.0, hi, n_y)


def g_tables(t_nodes: np.ndarray, y_nodes: np.ndarray, p: ModelParams, c: DerivedConstants,
             quadrature_n: int = DEFAULT_QUADRATURE_N):
    """ln g and g_y/g on (t_nodes, y_nodes) for a uniform ascending ``t_nodes``.

    Uses one Simpson integral up to the shortest remaining horizon and a
    cumulative Simpson sum along the time grid for the rest.
    """
    t_nodes = np.asarray(t_nodes, dtype=float)
    tau_min = p.T - t_nodes[-1]
    if tau_min <= 0:
        raise DomainError("tabulated times must stay below T")
    base = eval_g(t_nodes[-1], y_nodes, c, p, quadrature_n)
    g = np.empty((t_nodes.size, y_nodes.size))
    gy = np.empty_like(g)
    if t_nodes.size > 1:
        h = t_nodes[1] - t_nodes[0]
        tau = tau_min + h * np.arange(t_nodes.size)
        rp = riccati_tau(tau, c, p)
        kern = np.exp(rp.A[:, None] - rp.B[:, None] * y_nodes[None, :])
        cg = cumulative_simpson(kern, dx=h, axis=0, initial=0.0)
        cgy = -cumulative_simpson(kern * rp.B[:, None], dx=h, axis=0, initial=0.0)
        g[:] = (base.g + c.delta_psi * cg)[::-1]
        gy[:] = (base.g_y + c.delta_psi * cgy)[::-1]
    else:
        g[0], gy[0] = base.g, base.g_y
    return np.log(g), gy / g


def consumption_bound_constant(p: ModelParams, c: DerivedConstants) -> float:
    """Default K in the admissible consumption bound c/x <= 1/(T-s) + b y + K.

    ``nu b T / 2`` alone is too tight when the level rate is negative: near
    maturity c*/x behaves like ``1/tau - level_rate/2``. The extra terms come
    from bounding ``1/int_0^tau exp(-alpha u) du`` by ``1/tau + alpha/2 + alpha^2 tau/12``.
    """
    neg = max(-c.level_rate, 0.0)
    alpha = p.nu * c.b + neg
    return 0.5 * p.nu * c.b * p.T + 0.5 * neg + alpha**2 * p.T / 12


def check_admissible(t_nodes, y_nodes, pi, cx, v2, a1, p: ModelParams, c: DerivedConstants,
                     K: float | None = None, tol: float = 1e-9):
    K = consumption_bound_constant(p, c) if K is None else K
    if a1 < 0:
        raise AdmissibilityViolation("a1 must be nonnegative")
    if np.any(pi < -tol) or np.any(pi > c.K_pi * (1 + tol)):
        raise AdmissibilityViolation(f"portfolio leaves [0, K_pi={c.K_pi:.6g}]")
    bound = 1 / (p.T - t_nodes)[:, None] + c.b * y_nodes[None, :] + K
    if np.any(cx < -tol) or np.any(cx > bound + tol * np.abs(bound)):
        raise AdmissibilityViolation("consumption ratio exceeds the admissible bound")
    if np.any(v2 > tol):
        raise AdmissibilityViolation("variance distortion v2 must be nonpositive")
    if not np.all(np.isfinite(v2)):
        raise AdmissibilityViolation("variance distortion v2 must be bounded")


# ------------------------------------------------------------------ driver


def simulate_paths(cfg: SimConfig, p: ModelParams, c: DerivedConstants,
                   controls: FeedbackControls | None = None,
                   comparison: bool = False, K: float | None = None,
                   n_y: int = 256) -> PathBundle:
    """Simulate the distorted state; ``controls=None`` means the optimal ones.

    With ``comparison=True`` the dominating CIR process with rate
    ``m - a1 beta K_pi`` is driven by the same noise and the per-path maximum
    of ``Y - Ytilde`` is reported.
    """
    if cfg.t_end > p.T * (1 + 1e-12) or cfg.t_start < 0:
        raise DomainError("simulation window must lie inside [0, T]")
    n = cfg.n_steps
    t_nodes = cfg.t_start + cfg.dt * np.arange(n)
    y_nodes = default_y_grid(p, n_y)
    tab = np.zeros((max(n, 1), 6, n_y))
    a1 = p.distortion_scale if controls is None else controls.a1

    if n > 0:
        lng, gyg = g_tables(t_nodes, y_nodes, p, c)
        if controls is None:
            g_, a = p.gamma, p.a
            pi = p.lambda_bar / (g_ + a) + (1 - g_ - a) * c.k * p.beta_bar * p.rho / ((g_ + a) * (1 - g_)) * gyg
            cx = c.delta_psi * np.exp(-lng)
            v2 = a * c.k / (g_ - 1) * gyg
        else:
            pi = np.array([np.broadcast_to(controls.pi(t, y_nodes), y_nodes.shape) for t in t_nodes])
            cx = np.array([np.broadcast_to(controls.cx(t, y_nodes), y_nodes.shape) for t in t_nodes])
            v2 = np.array([np.broadcast_to(controls.v2(t, y_nodes), y_nodes.shape) for t in t_nodes])
        check_admissible(t_nodes, y_nodes, pi, cx, v2, a1, p, c, K)
        with np.errstate(divide="ignore", over="ignore"):
            cxb = cx ** (1 - c.phi) * np.exp(c.zeta * lng)
        for slot, arr in ((_LNG, lng), (_GYG, gyg), (_PI, pi), (_CX, cx), (_CXB, cxb), (_V2, v2)):
            tab[:, slot, :] = arr

    prm = np.zeros(13)
    prm[[_R, _LAM, _NU, _M, _BB, _RHO, _A, _A1, _GAMMA, _K]] = (
        p.r, p.lambda_bar, p.nu, p.m, p.beta_bar, p.rho, p.a, a1, p.gamma, c.k)
    prm[_DTHETA] = p.delta * c.theta
    prm[_ZETA] = c.zeta
    prm[_K2] = p.m - a1 * p.beta_bar * c.K_pi if comparison else np.nan
    inv_dy = 1.0 / (y_nodes[1] - y_nodes[0])

    rec_steps = cfg.record_steps()
    n_rec = rec_steps.size
    N = cfg.n_paths
    stride = 2 if cfg.antithetic else 1
    seeds = _path_seeds(cfg.seed, N // stride)
    L = np.empty((N, n_rec))
    Yr = np.empty((N, n_rec))
    reward = np.empty(N)
    mart = np.empty(N)
    excess = np.empty(N)
    for lo in range(0, N, BLOCK):
        hi = min(lo + BLOCK, N)
        states = _seed_states(seeds[lo // stride:(hi + stride - 1) // stride])
        _simulate_block(states, cfg.antithetic, n, cfg.dt, p.x0, p.y0, prm, inv_dy, tab,
                        rec_steps, L[lo:hi], Yr[lo:hi], reward[lo:hi], mart[lo:hi], excess[lo:hi])

    if cfg.antithetic:
        path_seeds = np.repeat(seeds, 2)
    else:
        path_seeds = seeds
    return PathBundle(
        config=cfg,
        times=cfg.t_start + cfg.dt * rec_steps,
        X=np.exp(L),
        Y=Yr,
        reward=reward,
        stochastic_integral=mart,
        path_seeds=path_seeds,
        comparison_excess=excess if comparison else None,
        info={"a1": a1, "optimal": controls is None, "feller_ratio": 2 * p.nu / p.beta_bar**2},
    )


# ------------------------------------------------------------------ estimators


def mc_estimate(samples: np.ndarray, antithetic: bool = False) -> McEstimate:
    s = np.asarray(samples, dtype=float)
    if antithetic:
        s = 0.5 * (s[0::2] + s[1::2])
    n = s.size
    if n > 1 and np.all(s == s[0]):
        return McEstimate(float(s[0]), 0.0, n)
    se = float(s.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return McEstimate(float(s.mean()), se, n)


def terminal_value(bundle: PathBundle, p: ModelParams, c: DerivedConstants,
                   chunk: int = 4096) -> np.ndarray:
    """Closed-form w at (t_end, X_end, Y_end) for every path."""
    t = bundle.t_end
    x = bundle.X[:, -1]
    y = bundle.Y[:, -1]
    g = np.empty_like(y)
    for lo in range(0, y.size, chunk):
        g[lo:lo + chunk] = eval_g(t, y[lo:lo + chunk], c, p).g
    return x ** (1 - p.gamma) * g**c.k / (1 - p.gamma)


def feynman_kac_estimate(bundle: PathBundle, p: ModelParams, c: DerivedConstants) -> McEstimate:
    """Estimate w(t_start, x0, y0) as E[int (f + penalty) dr + w(t_end, Z_end)]."""
    samples = bundle.reward + terminal_value(bundle, p, c)
    return mc_estimate(samples, bundle.config.antithetic)


def martingale_diagnostic(bundle: PathBundle) -> McEstimate:
    return mc_estimate(bundle.stochastic_integral, bundle.config.antithetic)


def cir_mean(t: float, s, y: float, p: ModelParams):
    """E[Y_s | Y_t = y] for the undistorted variance process."""
    e = np.exp(-p.m * (np.asarray(s) - t))
    return y * e + p.nu / p.m * (1 - e)


def variance_at(bundle: PathBundle, s: float) -> np.ndarray:
    idx = np.flatnonzero(np.isclose(bundle.times, s, rtol=0, atol=1e-9))
    if idx.size == 0:
        raise ValueError(f"time {s} was not recorded")
    return bundle.Y[:, idx[0]]


def wealth_moment(bundle: PathBundle, power: float) -> McEstimate:
    return mc_estimate(bundle.X[:, -1] ** power, bundle.config.antithetic)


# ------------------------------------------------------------------ binary dump

_MAGIC = b"RZEH"
_VERSION = 1
_HEADER = struct.Struct("<4sIQQd")


def write_path_dump(bundle: PathBundle, path: str | Path) -> None:
    """Little-endian dump: header {magic, version u32, n_paths u64, n_steps u64,
    dt f64} then X (n_paths x (n_steps+1)) and Y, both f64 row-major.

    ``n_steps`` counts recorded intervals and ``dt`` is their spacing, which
    must be uniform.
    """
    times = bundle.times
    n_steps = times.size - 1
    if n_steps > 0:
        gaps = np.diff(times)
        if not np.allclose(gaps, gaps[0], rtol=1e-9, atol=1e-12):
            raise ValueError("path dump needs uniformly spaced records")
        dt = float(gaps[0])
    else:
        dt = bundle.config.dt
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, bundle.X.shape[0], n_steps, dt))
        fh.write(np.ascontiguousarray(bundle.X, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(bundle.Y, dtype="<f8").tobytes())


def read_path_dump(path: str | Path):
    data = Path(path).read_bytes()
    magic, version, n_paths, n_steps, dt = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ValueError("not a path dump (bad magic)")
    if version != _VERSION:
        raise ValueError(f"unsupported dump version {version}")
    shape = (n_paths, n_steps + 1)
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.size != 2 * n_paths * (n_steps + 1):
        raise ValueError("truncated path dump")
    X = body[: body.size // 2].reshape(shape)
    Y = body[body.size // 2:].reshape(shape)
    return {"version": version, "n_paths": n_paths, "n_steps": n_steps, "dt": dt}, X, Y
