"""Epstein-Zin aggregator, robustness penalty and the HJBI Hamiltonian.

Used to check numerically that the closed-form triple (c*, pi*, v*) makes the
max-min Hamiltonian vanish and is a local saddle point of it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .closed_form import DEFAULT_QUADRATURE_N, GTriple, _strategy_from_g, eval_g
from .errors import DomainError, TerminalSingularity
from .params import DEFAULT_T_GUARD, DerivedConstants, ModelParams


def aggregator_f(c, v, gamma: float, psi: float, delta: float):
    """Epstein-Zin aggregator

        f(c, v) = delta theta v [ (c / ((1-gamma) v)^(1/(1-gamma)))^(1 - 1/psi) - 1 ]

    with theta = (1-gamma)/(1-1/psi). Requires c > 0 and (1-gamma) v > 0.
    """
    c = np.asarray(c, dtype=float)
    v = np.asarray(v, dtype=float)
    u = (1 - gamma) * v
    if np.any(c <= 0):
        raise DomainError("aggregator needs positive consumption")
    if np.any(u <= 0):
        raise DomainError("aggregator needs (1 - gamma) v > 0")
    phi = 1.0 / psi
    theta = (1 - gamma) / (1 - phi)
    ce = u ** (1 / (1 - gamma))
    out = delta * theta * v * ((c / ce) ** (1 - phi) - 1)
    return float(out) if out.ndim == 0 else out


def sample_case(case: str, n: int, rng: np.random.Generator):
    """Draw (gamma, psi, delta) arrays inside one admissible (gamma, psi) regime.

    Ranges stay away from gamma = 1 and psi -> 0, where the internal powers
    overflow and the absolute slack stops being meaningful.
    """
    u = rng.uniform
    if case == "a":
        g, psi = u(1.1, 3, n), u(1.1, 3, n)
    elif case == "b":
        g = u(1.1, 3, n)
        psi = u(0.5, 1, n) / g
    elif case == "c":
        g, psi = u(0.2, 0.9, n), u(0.3, 0.95, n)
    elif case == "d":
        g = u(0.2, 0.9, n)
        psi = 1 / g + u(0, 3, n)
    else:
        raise ValueError(f"unknown case {case!r}")
    return g, psi, u(0.01, 0.2, n)


def monotonicity_probe(case: str, n: int = 10_000, seed: int = 0, slack: float = 1e-10):
    """Count draws with f(c, v1) - f(c, v2) > |delta theta| (v1 - v2) + slack, v1 > v2.

    Returns (violations, worst excess).
    """
    rng = np.random.default_rng(seed)
    g, psi, delta = sample_case(case, n, rng)
    c = np.exp(rng.uniform(np.log(0.5), np.log(2), n))
    sign = np.sign(1 - g)
    m1, m2 = np.exp(rng.uniform(np.log(0.5), np.log(2), (2, n)))
    v1 = np.maximum(sign * m1, sign * m2)
    v2 = np.minimum(sign * m1, sign * m2)
    theta = (1 - g) / (1 - 1 / psi)
    lhs = aggregator_f(c, v1, g, psi, delta) - aggregator_f(c, v2, g, psi, delta)
    excess = lhs - np.abs(delta * theta) * (v1 - v2)
    return int(np.sum(excess > slack)), float(excess.max())


def covariance(x, y, pi, p: ModelParams) -> np.ndarray:
    """Sigma = Lambda Lambda^T for the (wealth, variance) state."""
    s11 = x * x * pi * pi * y
    s12 = x * pi * p.rho * p.beta_bar * y
    s22 = p.beta_bar**2 * y
    return np.array([[s11, s12], [s12, s22]])


def penalty(v, t, x, y, pi, p: ModelParams, c: DerivedConstants, w: float | None = None,
            quadrature_n: int = DEFAULT_QUADRATURE_N) -> float:
    """(1 / (2 eta)) v^T Sigma v with eta = a / ((1-gamma) w).

    ``w`` defaults to the closed-form value function at (t, x, y).
    """
    v = np.asarray(v, dtype=float)
    if not np.any(v):
        return 0.0
    if w is None:
        gt = eval_g(t, y, c, p, quadrature_n)
        w = x ** (1 - p.gamma) * gt.g**c.k / (1 - p.gamma)
    if w == 0:
        raise DomainError("penalty undefined where the value function vanishes")
    quad = float(v @ covariance(x, y, pi, p) @ v)
    if p.a == 0:
        return np.inf if quad != 0 else 0.0
    return (1 - p.gamma) * w / (2 * p.a) * quad


@dataclass(frozen=True)
class WDerivatives:
    w: float
    w_t: float
    w_x: float
    w_y: float
    w_xx: float
    w_yy: float
    w_xy: float


def w_derivatives_from_g(x: float, gt: GTriple, p: ModelParams, c: DerivedConstants) -> WDerivatives:
    g, k = p.gamma, c.k
    w = x ** (1 - g) * gt.g**k / (1 - g)
    ry = gt.g_y / gt.g
    return WDerivatives(
        w=w,
        w_t=k * w * gt.g_t / gt.g,
        w_x=(1 - g) * w / x,
        w_y=k * w * ry,
        w_xx=-g * (1 - g) * w / x**2,
        w_yy=w * (k * (k - 1) * ry**2 + k * gt.g_yy / gt.g),
        w_xy=(1 - g) * k / x * w * ry,
    )


def w_derivatives(t, x, y, p: ModelParams, c: DerivedConstants,
                  quadrature_n: int = DEFAULT_QUADRATURE_N) -> WDerivatives:
    return w_derivatives_from_g(x, eval_g(t, y, c, p, quadrature_n), p, c)


@dataclass(frozen=True)
class HamiltonianInput:
    t: float
    x: float
    y: float
    consumption: float
    pi: float
    v1: float
    v2: float
    derivs: WDerivatives
    params: ModelParams
    consts: DerivedConstants

    def __post_init__(self):
        if not self.x > 0 or not self.y >= 0 or not self.consumption >= 0:
            raise DomainError("need x > 0, y >= 0, c >= 0")


def hamiltonian_terms(inp: HamiltonianInput) -> dict[str, float]:
    p, c, dw = inp.params, inp.consts, inp.derivs
    x, y, pi = inp.x, inp.y, inp.pi
    v = np.array([inp.v1, inp.v2])
    grad = np.array([dw.w_x, dw.w_y])
    sigma = covariance(x, y, pi, p)
    return {
        "aggregator": aggregator_f(inp.consumption, dw.w, p.gamma, c.psi, p.delta),
        "time": dw.w_t,
        "wealth_drift": x * (p.r + pi * p.lambda_bar * y) * dw.w_x,
        "consumption": -inp.consumption * dw.w_x,
        "wealth_diffusion": 0.5 * x * x * pi * pi * y * dw.w_xx,
        "factor_drift": (p.nu - p.m * y) * dw.w_y,
        "factor_diffusion": 0.5 * p.beta_bar**2 * y * dw.w_yy,
        "cross_diffusion": x * pi * y * p.beta_bar * p.rho * dw.w_xy,
        "distortion_tilt": float(v @ sigma @ grad),
        "penalty": penalty(v, inp.t, x, y, pi, p, c, w=dw.w),
    }


def hamiltonian(inp: HamiltonianInput) -> float:
    return float(sum(hamiltonian_terms(inp).values()))


def optimal_input(t: float, x: float, y: float, p: ModelParams, c: DerivedConstants,
                  quadrature_n: int = DEFAULT_QUADRATURE_N,
                  t_guard: float = DEFAULT_T_GUARD) -> HamiltonianInput:
    """Hamiltonian input at the closed-form optimum with analytic w-derivatives."""
    if p.T - t < t_guard * (1 - 1e-9):
        raise TerminalSingularity(f"t={t} within t_guard of T")
    gt = eval_g(t, y, c, p, quadrature_n)
    sp = _strategy_from_g(gt, x, c, p)
    return HamiltonianInput(
        t=t, x=x, y=y, consumption=float(sp.cx_star) * x, pi=float(sp.pi_star),
        v1=float(sp.v1_star), v2=float(sp.v2_star),
        derivs=w_derivatives_from_g(x, gt, p, c), params=p, consts=c,
    )


@dataclass(frozen=True)
class ResidualReport:
    residual: float
    normalized_residual: float
    term_breakdown: dict
    g_pde_residual: float
    g_pde_normalized: float


def g_pde_terms(t: float, y: float, gt: GTriple, p: ModelParams, c: DerivedConstants) -> dict[str, float]:
    g_, a = p.gamma, p.a
    h1 = ((1 - g_) * p.r + (1 - g_) * p.lambda_bar**2 * y / (2 * (g_ + a)) - p.delta * c.theta) / c.k
    h2 = (1 - g_ - a) / (g_ + a) * p.beta_bar * p.rho * p.lambda_bar * y + p.nu - p.m * y
    return {
        "g_t": gt.g_t,
        "h1_g": h1 * gt.g,
        "h2_g_y": h2 * gt.g_y,
        "diffusion": 0.5 * p.beta_bar**2 * y * gt.g_yy,
        "source": c.delta_psi,
    }


def hjbi_residual(t: float, x: float, y: float, p: ModelParams, c: DerivedConstants,
                  quadrature_n: int = DEFAULT_QUADRATURE_N,
                  t_guard: float = DEFAULT_T_GUARD) -> ResidualReport:
    if not x > 0 or not y > 0:
        raise DomainError("residual checks need x > 0 and y > 0")
    inp = optimal_input(t, x, y, p, c, quadrature_n, t_guard)
    terms = hamiltonian_terms(inp)
    res = sum(terms.values())
    gterms = g_pde_terms(t, y, eval_g(t, y, c, p, quadrature_n), p, c)
    gres = sum(gterms.values())
    return ResidualReport(
        residual=res,
        normalized_residual=res / (1 + sum(abs(v) for v in terms.values())),
        term_breakdown=terms,
        g_pde_residual=gres,
        g_pde_normalized=gres / (1 + sum(abs(v) for v in gterms.values())),
    )


@dataclass(frozen=True)
class SaddleReport:
    # min over v-perturbations of H(perturbed) - H(optimum); should be >= -slack
    v_gain_min: float
    # max over (c, pi)-perturbations of H(perturbed) - H(optimum); should be <= slack
    u_gain_max: float
    ok: bool


def saddle_check(inp: HamiltonianInput, step: float = 1e-3, slack: float = 1e-10) -> SaddleReport:
    from dataclasses import replace

    base = hamiltonian(inp)
    v_gains = [hamiltonian(replace(inp, **{f: getattr(inp, f) + s}))
               - base for f in ("v1", "v2") for s in (step, -step)]
    u_gains = [hamiltonian(replace(inp, pi=inp.pi + s)) - base for s in (step, -step)]
    u_gains += [hamiltonian(replace(inp, consumption=inp.consumption + s * inp.x)) - base
                for s in (step, -step) if inp.consumption + s * inp.x > 0]
    vmin, umax = min(v_gains), max(u_gains)
    return SaddleReport(vmin, umax, vmin >= -slack and umax <= slack)


# ------------------------------------------------------------------ check suite


@dataclass(frozen=True)
class CheckResult:
    name: str
    measured: float
    tolerance: float
    passed: bool
    worst_at: str = ""


@dataclass(frozen=True)
class VerificationReport:
    checks: tuple[CheckResult, ...]

    @property
    def ok(self) -> bool:
        return all(ch.passed for ch in self.checks)

    def worst(self) -> CheckResult | None:
        failed = [ch for ch in self.checks if not ch.passed]
        return failed[0] if failed else None


def riccati_check(p: ModelParams, c: DerivedConstants, n: int = 100, h_max: float = 1e-3,
                  tol: float = 1e-8) -> CheckResult:
    """Closed-form A, B against RK4 on an n x n grid of (t, s) pairs with t <= s.

    One RK4 sweep suffices: both are functions of s - t, and every pair
    difference is a multiple of the coarse spacing.
    """
    from .closed_form import riccati_closed_form
    from .oracles import solve_riccati_ode

    nodes = np.linspace(0.0, p.T, n)
    sub = int(np.ceil((p.T / (n - 1)) / h_max))
    fine = np.linspace(0.0, p.T, (n - 1) * sub + 1)
    A_rk, B_rk = solve_riccati_ode(p.T, fine, p, c)
    ti, si = np.triu_indices(n)
    # tau index in the fine grid counted back from T
    idx = fine.size - 1 - (si - ti) * sub
    ref_A, ref_B = A_rk[idx], B_rk[idx]
    cf = riccati_closed_form(nodes[ti], nodes[si], c, p)
    err = np.maximum(np.abs(cf.A - ref_A) / (1 + np.abs(ref_A)),
                     np.abs(cf.B - ref_B) / (1 + np.abs(ref_B)))
    j = int(np.argmax(err))
    return CheckResult("riccati_ode", float(err[j]), tol, bool(err[j] < tol),
                       f"t={nodes[ti[j]]:.6g} s={nodes[si[j]]:.6g}")


def pde_relative_error(p: ModelParams, c: DerivedConstants, n: int = 256,
                       interior: float = 0.8) -> tuple[float, str]:
    """Max relative gap between quadrature g and the Crank-Nicolson g on the
    central ``interior`` share of an n x n grid."""
    from .oracles import PdeGrid, heston_instance, solve_g_pde

    grid = solve_g_pde(heston_instance(p), PdeGrid.for_heston(p, n, n), p, c)
    lo = int(round(n * (1 - interior) / 2))
    hi = n - lo
    worst, where = 0.0, ""
    for i in range(lo, hi):
        t = grid.t_nodes[i]
        ref = eval_g(t, grid.y_nodes[lo:hi], c, p).g
        rel = np.abs(grid.values[i, lo:hi] - ref) / np.abs(ref)
        j = int(np.argmax(rel))
        if rel[j] > worst:
            worst, where = float(rel[j]), f"t={t:.6g} y={grid.y_nodes[lo + j]:.6g}"
    return worst, where


def pde_check(p: ModelParams, c: DerivedConstants, n: int = 256, tol: float = 1e-3) -> CheckResult:
    err, where = pde_relative_error(p, c, n)
    return CheckResult("g_pde", err, tol, bool(err < tol), where)


def default_states(p: ModelParams, n_t: int = 20, n_y: int = 20, t_max: float | None = None,
                   y_range: tuple[float, float] = (0.005, 0.09)):
    t_max = min(9.9, p.T - 0.1) if t_max is None else t_max
    return np.linspace(0.0, t_max, n_t), np.linspace(*y_range, n_y)


def residual_check(p: ModelParams, c: DerivedConstants, tol: float = 1e-6, x: float = 1.3,
                   states=None) -> CheckResult:
    ts, ys = default_states(p) if states is None else states
    worst, where = -1.0, ""
    for t in ts:
        for y in ys:
            r = abs(hjbi_residual(t, x, y, p, c).normalized_residual)
            if not np.isfinite(r):
                r = np.inf
            if r > worst:
                worst, where = float(r), f"t={t:.6g} y={y:.6g}"
    return CheckResult("hjbi_residual", worst, tol, bool(worst < tol), where)


def saddle_suite(p: ModelParams, c: DerivedConstants, step: float = 1e-3, slack: float = 1e-10,
                 x: float = 1.3, states=None) -> tuple[CheckResult, CheckResult]:
    """Worst v-gain (should be >= -slack) and worst (c, pi)-gain (<= slack)."""
    ts, ys = default_states(p) if states is None else states
    vmin, umax = np.inf, -np.inf
    v_at = u_at = ""
    for t in ts:
        for y in ys:
            rep = saddle_check(optimal_input(t, x, y, p, c), step, slack)
            if rep.v_gain_min < vmin or not v_at:
                vmin, v_at = rep.v_gain_min, f"t={t:.6g} y={y:.6g}"
            if rep.u_gain_max > umax or not u_at:
                umax, u_at = rep.u_gain_max, f"t={t:.6g} y={y:.6g}"
    return (CheckResult("saddle_v", float(vmin), -slack, bool(vmin >= -slack), v_at),
            CheckResult("saddle_u", float(umax), slack, bool(umax <= slack), u_at))


def run_verification(p: ModelParams, c: DerivedConstants, tol_ode: float = 1e-8,
                     tol_pde: float = 1e-3, tol_residual: float = 1e-6) -> VerificationReport:
    checks = [riccati_check(p, c, tol=tol_ode), pde_check(p, c, tol=tol_pde),
              residual_check(p, c, tol=tol_residual), *saddle_suite(p, c)]
    return VerificationReport(tuple(checks))
