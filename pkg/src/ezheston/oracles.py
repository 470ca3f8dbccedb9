"""Independent numerical solvers used to cross-check the closed form.

Two routes that share nothing with ``closed_form`` beyond the raw inputs and
the pinned exponents ``k``, ``theta``, ``psi``: a classical RK4 integrator for
the Riccati system and a Crank-Nicolson solver for the linear parabolic PDE
satisfied by ``g`` (or by ``h`` when the source is dropped).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import InstabilityDetected, StepTooLarge
from .params import DerivedConstants, ModelParams

Coef = Callable[[float, np.ndarray], np.ndarray]


# ------------------------------------------------------------------ Riccati

def integrate_riccati(n_steps: int, h: float, kappa: float, beta_bar: float,
                      const: float, nu: float, level_rate: float):
    """RK4 in tau = s - t for

        dB/dtau = -(kappa B + beta^2 B^2 / 2 + const),   B(0) = 0
        dA/dtau = level_rate - nu B,                       A(0) = 0

    Returns arrays of length ``n_steps + 1`` on tau = 0, h, ..., n_steps h.
    """
    half_b2 = 0.5 * beta_bar**2

    def rhs(B):
        return -(kappa * B + half_b2 * B * B + const), level_rate - nu * B

    A = np.zeros(n_steps + 1)
    B = np.zeros(n_steps + 1)
    a_cur = b_cur = 0.0
    for i in range(n_steps):
        k1b, k1a = rhs(b_cur)
        k2b, k2a = rhs(b_cur + 0.5 * h * k1b)
        k3b, k3a = rhs(b_cur + 0.5 * h * k2b)
        k4b, k4a = rhs(b_cur + h * k3b)
        b_cur += h / 6 * (k1b + 2 * k2b + 2 * k3b + k4b)
        a_cur += h / 6 * (k1a + 2 * k2a + 2 * k3a + k4a)
        A[i + 1] = a_cur
        B[i + 1] = b_cur
    return A, B


def solve_riccati_ode(s_terminal: float, t_grid, p: ModelParams, c: DerivedConstants):
    """Backward RK4 from ``s_terminal`` down a uniform ascending ``t_grid``.

    The grid must end at ``s_terminal``; its spacing is the RK4 step.
    Coefficients are rebuilt from the raw parameters rather than taken from
    ``c.kappa`` / ``c.b``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0:
        raise ValueError("t_grid must be a non-empty 1-d array")
    if not np.isclose(t_grid[-1], s_terminal, rtol=0, atol=1e-12 * max(1.0, abs(s_terminal))):
        raise ValueError("t_grid must end at s_terminal")
    if t_grid.size == 1:
        return np.zeros(1), np.zeros(1)
    steps = np.diff(t_grid)
    h = steps[0]
    if h <= 0 or not np.allclose(steps, h, rtol=1e-9, atol=0):
        raise ValueError("t_grid must be uniform and ascending")
    if h > 1e-2:
        raise StepTooLarge(f"RK4 step {h:.3g} exceeds 1e-2")
    g, a = p.gamma, p.a
    kappa = p.m - (1 - g - a) / (g + a) * p.rho * p.lambda_bar * p.beta_bar
    const = (1 - g) / (2 * c.k * (g + a)) * p.lambda_bar**2
    level = ((1 - g) * p.r - p.delta * c.theta) / c.k
    A_tau, B_tau = integrate_riccati(t_grid.size - 1, h, kappa, p.beta_bar, const, p.nu, level)
    # tau index 0 corresponds to the last grid node
    return A_tau[::-1].copy(), B_tau[::-1].copy()


# ------------------------------------------------------------------ PDE

@dataclass(frozen=True)
class CoefficientSet:
    """Coefficients of the general factor model as vectorised callables of (t, y).

    ``sharpe`` (lambda/sigma) may be given explicitly to avoid 0/0 where the
    volatility vanishes.
    """

    lam: Coef
    sigma: Coef
    alpha: Coef
    beta: Coef
    sharpe: Coef | None = None

    def market_price_of_risk(self, t, y):
        if self.sharpe is not None:
            return self.sharpe(t, y)
        return self.lam(t, y) / self.sigma(t, y)


def heston_instance(p: ModelParams) -> CoefficientSet:
    return CoefficientSet(
        lam=lambda t, y: p.lambda_bar * y,
        sigma=lambda t, y: np.sqrt(y),
        alpha=lambda t, y: p.nu - p.m * y,
        beta=lambda t, y: p.beta_bar * np.sqrt(y),
        sharpe=lambda t, y: p.lambda_bar * np.sqrt(y),
    )


@dataclass(frozen=True)
class PdeGrid:
    t_nodes: np.ndarray
    y_nodes: np.ndarray
    values: np.ndarray | None = None   # shape (n_t, n_y)

    def __post_init__(self):
        for name in ("t_nodes", "y_nodes"):
            arr = getattr(self, name)
            if arr.ndim != 1 or arr.size < 64:
                raise ValueError(f"{name} needs at least 64 nodes")
            steps = np.diff(arr)
            if not np.allclose(steps, steps[0], rtol=1e-9, atol=0) or steps[0] <= 0:
                raise ValueError(f"{name} must be uniform and ascending")
        if self.y_nodes[0] < 0:
            raise ValueError("y grid must start at a nonnegative value")

    @classmethod
    def uniform(cls, t_end: float, y_max: float, n_t: int = 256, n_y: int = 256,
                t_start: float = 0.0) -> "PdeGrid":
        return cls(np.linspace(t_start, t_end, n_t), np.linspace(0.0, y_max, n_y))

    @classmethod
    def for_heston(cls, p: ModelParams, n_t: int = 256, n_y: int = 256,
                   y_max: float | None = None) -> "PdeGrid":
        """Grid on [0, T] x [0, y_max] with ``y_max`` ten stationary means by default."""
        return cls.uniform(p.T, 10 * p.nu / p.m if y_max is None else y_max, n_t, n_y)


def pde_coefficients(coeffs: CoefficientSet, p: ModelParams, c: DerivedConstants):
    """Return (H1, H2, half_beta_sq) callables for the linear PDE in g."""
    g, a = p.gamma, p.a

    def h1(t, y):
        mpr = coeffs.market_price_of_risk(t, y)
        return ((1 - g) * p.r + (1 - g) * mpr**2 / (2 * (g + a)) - p.delta * c.theta) / c.k

    def h2(t, y):
        return (1 - g - a) / (g + a) * coeffs.beta(t, y) * p.rho * coeffs.market_price_of_risk(t, y) \
            + coeffs.alpha(t, y)

    def half_beta_sq(t, y):
        return 0.5 * coeffs.beta(t, y) ** 2

    return h1, h2, half_beta_sq


def _difference_matrices(n: int, dy: float):
    main = np.zeros(n)
    d1 = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [-1, 1], shape=(n, n), format="lil") / (2 * dy)
    d2 = sp.diags([np.ones(n - 1), -2 * np.ones(n), np.ones(n - 1)], [-1, 0, 1], shape=(n, n),
                  format="lil") / dy**2
    # y = 0: second-order one-sided differences
    d1[0, :] = main
    d1[0, 0], d1[0, 1], d1[0, 2] = -3 / (2 * dy), 4 / (2 * dy), -1 / (2 * dy)
    d2[0, :] = main
    d2[0, 0], d2[0, 1], d2[0, 2], d2[0, 3] = 2 / dy**2, -5 / dy**2, 4 / dy**2, -1 / dy**2
    # y = y_max: g_yy = 0 via linear ghost node, which reduces g_y to a backward difference
    d1[n - 1, :] = main
    d1[n - 1, n - 2], d1[n - 1, n - 1] = -1 / dy, 1 / dy
    d2[n - 1, :] = main
    return d1.tocsr(), d2.tocsr()


def solve_linear_parabolic(h1: Coef, h2: Coef, half_beta_sq: Coef, t_nodes, y_nodes,
                           source=0.0, terminal=0.0, nonnegative: bool = True) -> np.ndarray:
    """Crank-Nicolson, backward from ``t_nodes[-1]``, for

        u_t + h1 u + h2 u_y + half_beta_sq u_yy + source = 0.

    ``source`` is a constant or a callable of (t, y); ``terminal`` a constant
    or an array on ``y_nodes``. Returns values of shape (n_t, n_y).
    """
    t_nodes = np.asarray(t_nodes, dtype=float)
    y = np.asarray(y_nodes, dtype=float)
    n = y.size
    d1, d2 = _difference_matrices(n, y[1] - y[0])
    eye = sp.identity(n, format="csr")

    def operator(t):
        return (sp.diags(np.broadcast_to(h1(t, y), (n,)))
                + sp.diags(np.broadcast_to(h2(t, y), (n,))) @ d1
                + sp.diags(np.broadcast_to(half_beta_sq(t, y), (n,))) @ d2)

    def src(t):
        return np.broadcast_to(source(t, y) if callable(source) else source, (n,)).astype(float)

    out = np.empty((t_nodes.size, n))
    out[-1] = np.broadcast_to(terminal, (n,))
    L_next, s_next = operator(t_nodes[-1]), src(t_nodes[-1])
    for i in range(t_nodes.size - 2, -1, -1):
        dt = t_nodes[i + 1] - t_nodes[i]
        L_cur, s_cur = operator(t_nodes[i]), src(t_nodes[i])
        rhs = (eye + 0.5 * dt * L_next) @ out[i + 1] + 0.5 * dt * (s_cur + s_next)
        out[i] = splu((eye - 0.5 * dt * L_cur).tocsc()).solve(rhs)
        if not np.all(np.isfinite(out[i])) or (nonnegative and out[i].min() < -1e-8):
            raise InstabilityDetected(f"PDE solution broke down at t={t_nodes[i]:.6g}")
        L_next, s_next = L_cur, s_cur
    return out


def solve_g_pde(coeffs: CoefficientSet, grid: PdeGrid, p: ModelParams, c: DerivedConstants,
                source: float | Coef | None = None, terminal=None) -> PdeGrid:
    """Solve the g-PDE on ``grid``; terminal time is ``grid.t_nodes[-1]``.

    Defaults: source ``delta**psi`` and terminal ``epsilon**(1/k)``. Passing
    ``source=0, terminal=1`` on a grid ending at ``s`` gives ``h(., .; s)``.
    """
    h1, h2, hb = pde_coefficients(coeffs, p, c)
    src = c.delta_psi if source is None else source
    term = p.epsilon ** (1 / c.k) if terminal is None else terminal
    values = solve_linear_parabolic(h1, h2, hb, grid.t_nodes, grid.y_nodes, src, term)
    return replace(grid, values=values)
