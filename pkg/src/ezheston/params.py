"""Model parameters, derived constants and validity gates.

The elasticity of intertemporal substitution is never an input: the
linearising ansatz for the value function only works when ``psi`` and the
exponent ``k`` are tied to ``(gamma, a, rho)``, so both are computed here.
"""

from __future__ import annotations

import math
from dataclasses import MISSING, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError, InvalidParams, ValidationFailed, ZeroDenominator

DEFAULT_Q = 2.01
DEFAULT_T_GUARD = 1e-6


@dataclass(frozen=True)
class ModelParams:
    """Raw market, preference and robustness inputs.

    ``a1`` is the scale of the wealth component of the distortion
    (``v1 = -a1/x``); ``None`` means it follows ``a``.
    """

    gamma: float
    delta: float
    rho: float
    r: float
    lambda_bar: float
    m: float
    nu: float
    beta_bar: float
    a: float = 0.0
    a1: float | None = None
    epsilon: float = 0.0
    T: float = 10.0
    t0: float = 0.0
    x0: float = 1.0
    y0: float = 0.0225

    def __post_init__(self):
        problems = []
        if not self.gamma > 0 or self.gamma == 1:
            problems.append(f"gamma must be > 0 and != 1 (got {self.gamma})")
        for name in ("delta", "r", "m", "nu", "beta_bar", "T", "x0"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be > 0 (got {getattr(self, name)})")
        if not abs(self.rho) <= 1:
            problems.append(f"|rho| must be <= 1 (got {self.rho})")
        for name in ("a", "epsilon", "y0"):
            if not getattr(self, name) >= 0:
                problems.append(f"{name} must be >= 0 (got {getattr(self, name)})")
        if self.a1 is not None and not self.a1 >= 0:
            problems.append(f"a1 must be >= 0 (got {self.a1})")
        if not 0 <= self.t0 < self.T:
            problems.append(f"t0 must lie in [0, T) (got {self.t0})")
        if not math.isfinite(self.lambda_bar):
            problems.append("lambda_bar must be finite")
        if problems:
            raise InvalidParams("; ".join(problems))

    @property
    def distortion_scale(self) -> float:
        return self.a if self.a1 is None else self.a1

    @classmethod
    def figure_defaults(cls, a: float = 0.0, **overrides) -> "ModelParams":
        """Parameter set used for the robust vs non-robust comparison figures.

        Long-run variance 0.0225 (volatility 0.15), Sharpe ratio
        ``lambda_bar * sqrt(ybar) = 0.07`` at the long-run variance,
        ``nu = m * ybar``, ten-year horizon.
        """
        ybar = 0.15**2
        base = dict(
            gamma=1.4, delta=0.08, rho=-0.5, r=0.05,
            lambda_bar=0.07 / math.sqrt(ybar), m=5.0, nu=5.0 * ybar, beta_bar=0.25,
            a=a, T=10.0, t0=0.0, x0=1.0, y0=ybar,
        )
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class DerivedConstants:
    psi: float
    phi: float
    theta: float
    k: float
    zeta: float
    b: float
    kappa: float
    d: float
    K_pi: float
    b_tilde: float
    # ((1-gamma) r - delta theta) / k: constant part of the A-drift
    level_rate: float
    delta_psi: float


def k_denominator(gamma: float, a: float, rho: float) -> float:
    return (1 - gamma - a) ** 2 * rho**2 / ((gamma + a) * (1 - gamma)) + 1 - a / (1 - gamma)


def pinned_psi(gamma: float, a: float, rho: float) -> float:
    return 2 - gamma - a + (1 - gamma - a) ** 2 / (gamma + a) * rho**2


def derive_constants(p: ModelParams) -> DerivedConstants:
    g, a, rho = p.gamma, p.a, p.rho
    den = k_denominator(g, a, rho)
    if den == 0:
        raise ZeroDenominator("k-denominator vanishes for these (gamma, a, rho)")
    k = 1.0 / den
    psi = pinned_psi(g, a, rho)
    # psi <= 0 is left to validation, which reports the regime as violated
    if psi == 0:
        raise ZeroDenominator("pinned psi == 0 makes 1/psi undefined")
    if psi == 1:
        raise ZeroDenominator("psi == 1 makes theta undefined")
    phi = 1.0 / psi
    theta = (1 - g) / (1 - phi)
    zeta = -k / theta
    b = -(1.0 / (2 * k)) * (1 - g) / (g + a) * p.lambda_bar**2
    kappa = p.m - (1 - g - a) / (g + a) * rho * p.lambda_bar * p.beta_bar
    rad = kappa**2 + 2 * b * p.beta_bar**2
    d = math.sqrt(rad) if rad >= 0 else math.nan
    b_over_kappa = b / kappa if kappa != 0 else math.inf
    K_pi = p.lambda_bar / (g + a) + (1 - g - a) / ((g + a) * (1 - g)) * k * p.beta_bar * abs(rho) * b_over_kappa
    b_tilde = b + ((2 * g - 1) / 2 + p.distortion_scale) * K_pi**2
    level_rate = ((1 - g) * p.r - p.delta * theta) / k
    return DerivedConstants(
        psi=psi, phi=phi, theta=theta, k=k, zeta=zeta, b=b, kappa=kappa, d=d,
        K_pi=K_pi, b_tilde=b_tilde, level_rate=level_rate, delta_psi=p.delta**psi,
    )


def validate_assumption31(gamma: float, psi: float) -> str:
    """Return which of the four admissible (gamma, psi) regimes applies.

    Cases: 'a' gamma>1, psi>1; 'b' gamma>1, psi<1, gamma*psi<=1;
    'c' gamma<1, psi<1; 'd' gamma<1, psi>1, gamma*psi>=1.
    """
    if not psi > 0:
        return "violated"
    if gamma > 1 and psi > 1:
        return "a"
    if gamma > 1 and psi < 1 and gamma * psi <= 1:
        return "b"
    if gamma < 1 and psi < 1:
        return "c"
    if gamma < 1 and psi > 1 and gamma * psi >= 1:
        return "d"
    return "violated"


@dataclass(frozen=True)
class ValidationReport:
    assumption31_case: str
    assumption32_ok: bool
    h1_ok: bool
    h2_ok: bool
    h3_ok: bool
    h1_slack: float
    h2_slack: float
    h3_slack: float
    heston_ok: bool
    nonstandard: bool
    feller_ratio: float
    messages: tuple[str, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return (
            self.assumption31_case != "violated"
            and self.assumption32_ok
            and self.h1_ok and self.h2_ok and self.h3_ok
            and self.heston_ok
        )

    def failed_checks(self) -> list[str]:
        out = []
        if self.assumption31_case == "violated":
            out.append("assumption31")
        if not self.assumption32_ok:
            out.append("assumption32")
        for name in ("h1", "h2", "h3"):
            if not getattr(self, f"{name}_ok"):
                out.append(name.upper())
        if not self.heston_ok:
            out.append("heston")
        return out


def validate_heston(
    p: ModelParams,
    c: DerivedConstants,
    q: float = DEFAULT_Q,
    psi_expected: float | None = None,
) -> ValidationReport:
    if not q > 2:
        raise InvalidParams(f"oversampling exponent q must exceed 2 (got {q})")
    msgs = []
    g, a, a1 = p.gamma, p.a, p.distortion_scale

    case = validate_assumption31(g, c.psi)
    if case == "violated":
        msgs.append(f"risk-aversion/EIS regime violated: gamma={g:.6g}, psi={c.psi:.6g}, gamma*psi={g * c.psi:.6g}")

    identity_err = abs(c.k * c.psi - c.theta) / max(abs(c.theta), 1e-300)
    a32 = identity_err <= 1e-12 and c.k > 0
    if not a32:
        msgs.append(f"pinned (k, psi) inconsistent: k={c.k:.6g}, k*psi-theta rel err={identity_err:.3g}")
    if psi_expected is not None and not math.isclose(psi_expected, c.psi, rel_tol=1e-6):
        a32 = False
        msgs.append(f"psi_expected={psi_expected:.9g} differs from pinned psi={c.psi:.9g}")

    upper = min(c.k + 2, 1 / q + 1)
    h1_slack = min(g - 1, upper - g)
    h1 = g > 1 and g < upper and p.rho <= 0 and p.lambda_bar > 0
    if not h1:
        msgs.append(
            f"H1 failed: need 1 < gamma={g:.6g} < min(k+2, 1/q+1)={upper:.6g}, "
            f"rho={p.rho:.6g} <= 0, lambda_bar={p.lambda_bar:.6g} > 0"
        )

    lower_m = max((1 - g - a) / (g + a) * p.lambda_bar * p.beta_bar * p.rho,
                  p.beta_bar * c.K_pi * (2 * (g - 1) + a1))
    h2_slack = p.m - lower_m
    h2 = h2_slack > 0
    if not h2:
        msgs.append(f"H2 failed: m={p.m:.6g} <= {lower_m:.6g}")

    lhs = 4 * (g - 1) * p.beta_bar**2 * c.b_tilde
    rhs = (p.m - p.beta_bar * c.K_pi * (2 * (g - 1) + a1)) ** 2
    h3_slack = rhs - lhs
    h3 = lhs < rhs
    if not h3:
        msgs.append(f"H3 failed: {lhs:.6g} >= {rhs:.6g}")

    heston = p.epsilon == 0 and math.isfinite(c.d) and c.d >= c.kappa > 0
    if p.epsilon != 0:
        msgs.append("Heston solver requires epsilon = 0 (no bequest)")
    if not (math.isfinite(c.d) and c.d >= c.kappa > 0):
        msgs.append(f"need d >= kappa > 0 (kappa={c.kappa:.6g}, d={c.d:.6g})")

    nonstandard = p.a1 is not None and p.a1 != p.a
    if nonstandard:
        msgs.append(f"nonstandard: a1={p.a1:.6g} differs from a={p.a:.6g}")

    return ValidationReport(
        assumption31_case=case, assumption32_ok=a32,
        h1_ok=h1, h2_ok=h2, h3_ok=h3,
        h1_slack=h1_slack, h2_slack=h2_slack, h3_slack=h3_slack,
        heston_ok=heston, nonstandard=nonstandard,
        feller_ratio=2 * p.nu / p.beta_bar**2,
        messages=tuple(msgs),
    )


def prepare(p: ModelParams, q: float = DEFAULT_Q, psi_expected: float | None = None, strict: bool = True):
    """Derive constants and validate; raise ``ValidationFailed`` when strict."""
    c = derive_constants(p)
    report = validate_heston(p, c, q=q, psi_expected=psi_expected)
    if strict and not report.ok:
        raise ValidationFailed(report)
    return c, report


# ---------------------------------------------------------------- config file

@dataclass(frozen=True)
class SolverConfig:
    params: ModelParams
    q_exponent: float = DEFAULT_Q
    psi_expected: float | None = None
    t_guard: float = DEFAULT_T_GUARD


_PARAM_KEYS = {f.name for f in fields(ModelParams)}
_EXTRA_KEYS = {"q_exponent", "psi_expected", "t_guard"}


def parse_config(text: str) -> SolverConfig:
    values: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = (s.strip() for s in line.partition("="))
        if key not in _PARAM_KEYS | _EXTRA_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = float(val)
        except ValueError:
            raise ConfigError(f"line {lineno}: value for {key!r} is not a number: {val!r}") from None

    extras = {k: values.pop(k) for k in list(values) if k in _EXTRA_KEYS}
    missing = [f.name for f in fields(ModelParams) if f.name not in values and f.default is MISSING]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")
    try:
        params = ModelParams(**values)
    except InvalidParams as exc:
        raise ConfigError(str(exc)) from exc
    return SolverConfig(params=params, **extras)


def load_config(path: str | Path) -> SolverConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def format_config(cfg: SolverConfig) -> str:
    lines = []
    for f in fields(ModelParams):
        val = getattr(cfg.params, f.name)
        if val is not None:
            lines.append(f"{f.name} = {val!r}")
    lines.append(f"q_exponent = {cfg.q_exponent!r}")
    lines.append(f"t_guard = {cfg.t_guard!r}")
    if cfg.psi_expected is not None:
        lines.append(f"psi_expected = {cfg.psi_expected!r}")
    return "\n".join(lines) + "\n"


def with_robustness(p: ModelParams, a: float) -> ModelParams:
    """Same market with a different robustness preference (``a1`` follows ``a``)."""
    return replace(p, a=a, a1=None)
