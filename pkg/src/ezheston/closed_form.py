"""Explicit Heston solution: Riccati functions, the g surface and optimal controls.

Everything is time-homogeneous, so ``A(t, s)`` and ``B(t, s)`` depend on
``tau = s - t`` only. ``g`` is

    g(t, y) = delta**psi * int_0^{T-t} exp(A(tau) - B(tau) * y) dtau

and its y-derivatives come from differentiating under the integral sign.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from .errors import DomainError, TerminalSingularity
from .params import DEFAULT_T_GUARD, DerivedConstants, ModelParams

DEFAULT_QUADRATURE_N = 512


@dataclass(frozen=True)
class RiccatiPair:
    A: np.ndarray | float
    B: np.ndarray | float


@dataclass(frozen=True)
class GTriple:
    g: np.ndarray | float
    g_y: np.ndarray | float
    g_yy: np.ndarray | float
    # exact: -delta**psi * exp(A(T-t) - B(T-t) y)
    g_t: np.ndarray | float


@dataclass(frozen=True)
class StrategyPoint:
    pi_star: np.ndarray | float
    cx_star: np.ndarray | float
    w: np.ndarray | float
    v1_star: np.ndarray | float
    v2_star: np.ndarray | float


def _log1p_ratio(x):
    """log1p(x)/x, equal to 1 at x = 0."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 - x / 2, np.log1p(safe) / safe)


def riccati_tau(tau, c: DerivedConstants, p: ModelParams) -> RiccatiPair:
    """A and B as functions of the time to maturity ``tau >= 0``."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise DomainError("Riccati functions need t <= s")
    kappa, d, b = c.kappa, c.d, c.b
    em = -np.expm1(-d * tau)        # 1 - exp(-d tau), no overflow for large tau
    e = 1.0 - em
    B = 2 * b * em / ((kappa + d) + (d - kappa) * e)
    # d - kappa = 2 b beta^2 / (kappa + d), so the log term stays finite as beta -> 0
    u = b * em / (d * (kappa + d))
    log_term = -u * _log1p_ratio(-p.beta_bar**2 * u)
    A = -2 * p.nu * (log_term + b * tau / (kappa + d)) + c.level_rate * tau
    if A.ndim == 0:
        return RiccatiPair(float(A), float(B))
    return RiccatiPair(A, B)


def riccati_closed_form(t, s, c: DerivedConstants, p: ModelParams) -> RiccatiPair:
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(t > s):
        raise DomainError("riccati_closed_form requires t <= s")
    return riccati_tau(s - t, c, p)


def long_horizon_B(c: DerivedConstants) -> float:
    return 2 * c.b / (c.kappa + c.d)


def _check_ty(t, y, p: ModelParams):
    if not 0 <= t <= p.T:
        raise DomainError(f"t={t} outside [0, T={p.T}]")
    if np.any(np.asarray(y) < 0):
        raise DomainError("variance y must be nonnegative")


def eval_g(t: float, y, c: DerivedConstants, p: ModelParams,
           quadrature_n: int = DEFAULT_QUADRATURE_N) -> GTriple:
    """g and its derivatives at a single time ``t`` for scalar or array ``y``."""
    t = float(t)
    _check_ty(t, y, p)
    if quadrature_n < 2 or quadrature_n % 2:
        raise ValueError("quadrature_n must be a positive even integer")
    y_arr = np.atleast_1d(np.asarray(y, dtype=float))
    horizon = p.T - t
    if horizon <= 0:
        zero = np.zeros_like(y_arr)
        out = GTriple(zero, zero, zero, np.full_like(y_arr, -c.delta_psi))
    else:
        tau = np.linspace(0.0, horizon, quadrature_n + 1)
        rp = riccati_tau(tau, c, p)
        kern = np.exp(rp.A[None, :] - rp.B[None, :] * y_arr[:, None])
        dx = horizon / quadrature_n
        g = simpson(kern, dx=dx, axis=-1)
        g_y = -simpson(kern * rp.B, dx=dx, axis=-1)
        g_yy = simpson(kern * rp.B**2, dx=dx, axis=-1)
        g_t = -kern[:, -1]
        out = GTriple(*(c.delta_psi * v for v in (g, g_y, g_yy, g_t)))
    if np.ndim(y) == 0:
        return GTriple(*(float(v[0]) for v in (out.g, out.g_y, out.g_yy, out.g_t)))
    return out


def _strategy_from_g(gt: GTriple, x, c: DerivedConstants, p: ModelParams) -> StrategyPoint:
    g_, a = p.gamma, p.a
    ratio = gt.g_y / gt.g
    pi = p.lambda_bar / (g_ + a) + (1 - g_ - a) * c.k * p.beta_bar * p.rho / ((g_ + a) * (1 - g_)) * ratio
    cx = c.delta_psi / gt.g
    w = x ** (1 - g_) * gt.g**c.k / (1 - g_)
    v1 = -a / x * np.ones_like(ratio)
    v2 = a * c.k / (g_ - 1) * ratio
    return StrategyPoint(pi, cx, w, v1, v2)


def optimal_strategy(t: float, x, y, c: DerivedConstants, p: ModelParams,
                     t_guard: float = DEFAULT_T_GUARD,
                     quadrature_n: int = DEFAULT_QUADRATURE_N) -> StrategyPoint:
    """Optimal portfolio, consumption ratio, value and worst-case distortion."""
    if np.any(np.asarray(x) <= 0):
        raise DomainError("wealth must be positive")
    if p.T - t < t_guard * (1 - 1e-9):
        raise TerminalSingularity(
            f"T - t = {p.T - t:.3g} below t_guard = {t_guard:.3g}; consumption ratio diverges at T")
    return _strategy_from_g(eval_g(t, y, c, p, quadrature_n), x, c, p)


def value_function(t: float, x, y, c: DerivedConstants, p: ModelParams,
                   quadrature_n: int = DEFAULT_QUADRATURE_N):
    if np.any(np.asarray(x) <= 0):
        raise DomainError("wealth must be positive")
    gt = eval_g(t, y, c, p, quadrature_n)
    w = np.asarray(x, dtype=float) ** (1 - p.gamma) * np.asarray(gt.g) ** c.k / (1 - p.gamma)
    return float(w) if w.ndim == 0 else w


# ------------------------------------------------------------ bounds

def B_upper(c: DerivedConstants) -> float:
    return c.b / c.kappa


def A_band(c: DerivedConstants, p: ModelParams) -> tuple[float, float]:
    lr = abs(c.level_rate) * p.T
    return -(c.b / c.kappa) * p.nu * p.T - lr, lr


def pi_band(c: DerivedConstants, p: ModelParams) -> tuple[float, float]:
    return p.lambda_bar / (p.gamma + p.a), c.K_pi


def cx_upper(t, y, c: DerivedConstants, p: ModelParams):
    h = p.T - np.asarray(t, dtype=float)
    return 1 / h + c.b * np.asarray(y) + 0.5 * p.nu * c.b * h


# ------------------------------------------------------------ surfaces

@dataclass(frozen=True)
class SolutionSurface:
    """Closed-form quantities on a (t, y) grid; arrays have shape (n_t, n_y)."""

    t: np.ndarray
    y: np.ndarray
    A: np.ndarray
    B: np.ndarray
    g: np.ndarray
    g_y: np.ndarray
    g_yy: np.ndarray
    pi_star: np.ndarray
    cx_star: np.ndarray
    w: np.ndarray       # at x = 1
    v1_star: np.ndarray  # at x = 1
    v2_star: np.ndarray


def solution_surface(t_nodes, y_nodes, c: DerivedConstants, p: ModelParams,
                     t_guard: float = DEFAULT_T_GUARD,
                     quadrature_n: int = DEFAULT_QUADRATURE_N) -> SolutionSurface:
    t_nodes = np.asarray(t_nodes, dtype=float)
    y_nodes = np.asarray(y_nodes, dtype=float)
    rows = {k: [] for k in ("A", "B", "g", "g_y", "g_yy", "pi_star", "cx_star", "w", "v1_star", "v2_star")}
    for t in t_nodes:
        if p.T - t < t_guard * (1 - 1e-9):
            raise TerminalSingularity(f"grid time t={t} is within t_guard of T")
        rp = riccati_tau(p.T - t, c, p)
        gt = eval_g(t, y_nodes, c, p, quadrature_n)
        sp = _strategy_from_g(gt, 1.0, c, p)
        rows["A"].append(np.full_like(y_nodes, rp.A))
        rows["B"].append(np.full_like(y_nodes, rp.B))
        for name in ("g", "g_y", "g_yy"):
            rows[name].append(getattr(gt, name))
        rows["pi_star"].append(sp.pi_star)
        rows["cx_star"].append(sp.cx_star)
        rows["w"].append(sp.w)
        rows["v1_star"].append(sp.v1_star)
        rows["v2_star"].append(sp.v2_star)
    return SolutionSurface(t=t_nodes, y=y_nodes, **{k: np.array(v) for k, v in rows.items()})
