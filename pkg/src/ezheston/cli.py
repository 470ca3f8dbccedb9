"""Command-line entry point: ``ezheston {validate,solve,figures,simulate,verify}``.

Exit codes: 0 success, 1 validation or check failure, 2 I/O or numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .closed_form import optimal_strategy, solution_surface, value_function
from .errors import (AdmissibilityViolation, ConfigError, DomainError, EzHestonError,
                     InstabilityDetected, InvalidParams, StepTooLarge, ValidationFailed,
                     ZeroDenominator)
from .params import SolverConfig, ModelParams, derive_constants, load_config, validate_heston, with_robustness
from .simulation import (FeedbackControls, SimConfig, cir_mean, feynman_kac_estimate,
                         martingale_diagnostic, mc_estimate, simulate_paths, variance_at)
from .verification import run_verification

EXIT_OK, EXIT_CHECK, EXIT_IO = 0, 1, 2
FIGURE_A = (0.0, 0.1, 0.2)
FIGURE_GAMMA = (1.2, 1.4, 1.6)


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ------------------------------------------------------------------ CSV


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, str):
        return v
    return format(float(v) + 0.0, ".9g")  # folds -0 into 0


def render_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def _emit(text: str, args, name: str) -> None:
    if args.out is None:
        sys.stdout.write(text)
        return
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text, encoding="utf-8", newline="")
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot write {out / name}: {exc}") from exc


def _note(args, msg: str) -> None:
    if not args.quiet:
        print(msg, file=sys.stderr)


# ------------------------------------------------------------------ helpers


def _load(args) -> SolverConfig:
    if args.config is None:
        return SolverConfig(ModelParams.figure_defaults())
    try:
        return load_config(args.config)
    except ConfigError as exc:
        code = EXIT_CHECK if isinstance(exc.__cause__, InvalidParams) else EXIT_IO
        raise _Fail(code, str(exc)) from exc


def _prepared(cfg: SolverConfig, p: ModelParams | None = None):
    p = cfg.params if p is None else p
    try:
        c = derive_constants(p)
    except (ZeroDenominator, InvalidParams) as exc:
        raise _Fail(EXIT_CHECK, f"cannot derive constants: {exc}") from exc
    report = validate_heston(p, c, q=cfg.q_exponent, psi_expected=cfg.psi_expected)
    return c, report


def _require(cfg: SolverConfig, p: ModelParams | None = None, label: str = ""):
    c, report = _prepared(cfg, p)
    if not report.ok:
        raise _Fail(EXIT_CHECK, f"validation failed{label}: " + "; ".join(report.messages))
    return c


def _grid(spec: str, name: str) -> np.ndarray:
    try:
        lo, hi, n = spec.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError:
        raise _Fail(EXIT_IO, f"{name} must look like min:max:n, got {spec!r}") from None
    if n < 1 or hi < lo:
        raise _Fail(EXIT_IO, f"{name}: need n >= 1 and max >= min")
    return np.linspace(lo, hi, n)


# ------------------------------------------------------------------ commands


def cmd_validate(args) -> int:
    cfg = _load(args)
    c, report = _prepared(cfg)
    lines = [f"{k} = {fmt(v)}" for k, v in vars(c).items()]
    lines += [
        f"assumption31_case = {report.assumption31_case}",
        f"assumption32_ok = {fmt(report.assumption32_ok)}",
        f"h1_ok = {fmt(report.h1_ok)}", f"h1_slack = {fmt(report.h1_slack)}",
        f"h2_ok = {fmt(report.h2_ok)}", f"h2_slack = {fmt(report.h2_slack)}",
        f"h3_ok = {fmt(report.h3_ok)}", f"h3_slack = {fmt(report.h3_slack)}",
        f"heston_ok = {fmt(report.heston_ok)}",
        f"nonstandard = {fmt(report.nonstandard)}",
        f"feller_ratio = {fmt(report.feller_ratio)}",
        f"ok = {fmt(report.ok)}",
    ]
    lines += [f"# {m}" for m in report.messages]
    sys.stdout.write("\n".join(lines) + "\n")
    if not report.ok:
        _note(args, "validation failed: " + ", ".join(report.failed_checks()))
        return EXIT_CHECK
    return EXIT_OK


SOLVE_HEADER = ["t", "y", "volatility", "A", "B_ref", "g", "g_y_over_g", "pi_star", "cx_star",
                "w_at_x1", "v1_star_at_x1", "v2_star"]


def solve_rows(t_nodes, y_nodes, p, c, t_guard):
    surf = solution_surface(t_nodes, y_nodes, c, p, t_guard=t_guard)
    for i, t in enumerate(surf.t):
        for j, y in enumerate(surf.y):
            yield (t, y, math.sqrt(y), surf.A[i, j], surf.B[i, j], surf.g[i, j],
                   surf.g_y[i, j] / surf.g[i, j], surf.pi_star[i, j], surf.cx_star[i, j],
                   surf.w[i, j], surf.v1_star[i, j], surf.v2_star[i, j])


def cmd_solve(args) -> int:
    cfg = _load(args)
    p = cfg.params
    c = _require(cfg)
    if args.grid_t is not None:
        ts = _grid(args.grid_t, "--grid-t")
    else:
        ts = np.array([p.t0 if args.t is None else args.t])
    ys = _grid(args.grid_y, "--grid-y") if args.grid_y else np.array([p.y0])
    rows = list(solve_rows(ts, ys, p, c, cfg.t_guard))
    _emit(render_csv(SOLVE_HEADER, rows), args, "solve.csv")
    return EXIT_OK


def _vol_grid():
    return np.linspace(0.05, 0.50, 100)


def figure_tables(cfg: SolverConfig, which: str, warn=lambda msg: None):
    """Return ``{filename: (header, rows)}`` for the requested figures."""
    base = cfg.params
    tg = cfg.t_guard
    vols = _vol_grid()
    times = np.linspace(0.0, base.T - tg, 101)
    out = {}

    def strategies(p, c):
        s1 = optimal_strategy(0.0, 1.0, vols**2, c, p, tg)
        s2 = np.array([optimal_strategy(t, 1.0, 0.04, c, p, tg).pi_star for t in times])
        return s1.pi_star, s2, s1.cx_star

    if which in ("1", "2", "3", "all"):
        cols = []
        for a in FIGURE_A:
            p = with_robustness(base, a)
            c = _require(cfg, p, f" for a={a:g}")
            cols.append(strategies(p, c))
        names = [f"a{a:g}" for a in FIGURE_A]
        if which in ("1", "all"):
            out["fig1.csv"] = (["volatility"] + [f"pi_star_{n}" for n in names],
                               np.column_stack([vols] + [c[0] for c in cols]))
        if which in ("2", "all"):
            out["fig2.csv"] = (["t"] + [f"pi_star_{n}" for n in names],
                               np.column_stack([times] + [c[1] for c in cols]))
        if which in ("3", "all"):
            out["fig3.csv"] = (["volatility"] + [f"cx_star_{n}" for n in names],
                               np.column_stack([vols] + [c[2] for c in cols]))
    if which in ("gamma-sweep", "all"):
        cols = []
        for g in FIGURE_GAMMA:
            p = replace(base, gamma=g, a=0.0, a1=None)
            c, report = _prepared(cfg, p)
            if not report.ok:
                # the sweep is a comparison, so out-of-regime curves are still drawn
                warn(f"gamma={g:g}: " + "; ".join(report.messages))
            cols.append(strategies(p, c))
        header = ["panel", "x"] + [f"gamma{g:g}" for g in FIGURE_GAMMA]
        blocks = []
        for panel, xs in ((1, vols), (2, times), (3, vols)):
            blocks.append(np.column_stack([np.full_like(xs, panel), xs] + [c[panel - 1] for c in cols]))
        out["figG.csv"] = (header, np.vstack(blocks))
    return out


def cmd_figures(args) -> int:
    cfg = _load(args)
    tables = figure_tables(cfg, args.which, warn=lambda m: _note(args, "warning: " + m))
    out = Path(args.out or ".")
    for name, (header, rows) in tables.items():
        text = render_csv(header, rows)
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / name).write_text(text, encoding="utf-8", newline="")
        except OSError as exc:
            raise _Fail(EXIT_IO, f"cannot write {out / name}: {exc}") from exc
        _note(args, f"wrote {out / name}")
    return EXIT_OK


SIM_HEADER = ["check", "estimate", "reference", "std_error", "pass"]


def simulate_rows(cfg: SolverConfig, c, n_paths: int, dt: float, seed: int, cut: float = 0.05,
                  antithetic: bool = False):
    p = cfg.params
    n_steps = int(round((p.T - cut - p.t0) / dt))
    if n_steps < 0:
        raise _Fail(EXIT_IO, "horizon cut exceeds the remaining horizon")
    t_end = p.t0 + n_steps * dt
    sc = SimConfig(n_paths=n_paths, dt=dt, seed=seed, t_start=p.t0, t_end=t_end, antithetic=antithetic)
    bundle = simulate_paths(sc, p, c)
    fk = feynman_kac_estimate(bundle, p, c)
    w_ref = value_function(p.t0, p.x0, p.y0, c, p)
    mart = martingale_diagnostic(bundle)

    # undistorted CIR run from independent seeds
    cir_cfg = replace(sc, seed=(seed + 1) & ((1 << 64) - 1))
    cir = simulate_paths(cir_cfg, p, c, FeedbackControls.constant())
    cm = mc_estimate(variance_at(cir, t_end), antithetic)
    cm_ref = float(cir_mean(p.t0, t_end, p.y0, p))

    rows = []
    for name, est, ref in (("feynman_kac", fk, w_ref), ("cir_mean", cm, cm_ref), ("martingale", mart, 0.0)):
        if not math.isfinite(est.mean):
            raise _Fail(EXIT_IO, f"{name}: non-finite estimate")
        rows.append((name, est.mean, ref, est.standard_error,
                     bool(abs(est.mean - ref) <= 3 * est.standard_error)))
    return rows


def cmd_simulate(args) -> int:
    cfg = _load(args)
    c = _require(cfg)
    if args.paths < 1:
        raise _Fail(EXIT_IO, "--paths must be >= 1")
    try:
        rows = simulate_rows(cfg, c, args.paths, args.dt, args.seed, args.horizon_cut, args.antithetic)
    except ValueError as exc:
        raise _Fail(EXIT_IO, str(exc)) from exc
    _emit(render_csv(SIM_HEADER, rows), args, "simulate.csv")
    failed = [r[0] for r in rows if not r[-1]]
    if failed:
        _note(args, "outside 3 standard errors: " + ", ".join(failed))
        return EXIT_CHECK
    return EXIT_OK


VERIFY_HEADER = ["check", "measured", "tolerance", "pass", "worst_at"]


def cmd_verify(args) -> int:
    cfg = _load(args)
    p = cfg.params
    c = _require(cfg)
    if args.corrupt_b is not None:
        c = replace(c, b=c.b * args.corrupt_b)
    report = run_verification(p, c, args.tol_ode, args.tol_pde, args.tol_residual)
    rows = [(ch.name, ch.measured, ch.tolerance, ch.passed, ch.worst_at) for ch in report.checks]
    _emit(render_csv(VERIFY_HEADER, rows), args, "verify.csv")
    worst = report.worst()
    if worst is not None:
        _note(args, f"check failed: {worst.name} measured {worst.measured:.3g} "
                    f"(tolerance {worst.tolerance:.3g}) at {worst.worst_at}")
        return EXIT_CHECK
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="key = value parameter file (default: figure parameters)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="RNG seed")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="ezheston", parents=[common],
                                     description="Robust Epstein-Zin consumption-investment under Heston")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("validate", parents=[common], help="derive constants and check parameter conditions")

    sp = sub.add_parser("solve", parents=[common], help="closed-form surface as CSV")
    grp = sp.add_mutually_exclusive_group()
    grp.add_argument("--t", type=float, help="single evaluation time")
    grp.add_argument("--grid-t", help="time grid min:max:n")
    sp.add_argument("--grid-y", help="variance grid min:max:n (default: y0)")

    sp = sub.add_parser("figures", parents=[common], help="figure CSVs")
    sp.add_argument("--which", choices=["1", "2", "3", "gamma-sweep", "all"], default="all")

    sp = sub.add_parser("simulate", parents=[common], help="Monte Carlo consistency checks")
    sp.add_argument("--paths", type=int, default=10_000)
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.add_argument("--horizon-cut", type=float, default=0.05,
                    help="stop this long before T to avoid the consumption singularity")
    sp.add_argument("--antithetic", action="store_true")

    sp = sub.add_parser("verify", parents=[common], help="oracle cross-checks")
    sp.add_argument("--tol-ode", type=float, default=1e-8)
    sp.add_argument("--tol-pde", type=float, default=1e-3)
    sp.add_argument("--tol-residual", type=float, default=1e-6)
    sp.add_argument("--corrupt-b", type=float, default=None, help=argparse.SUPPRESS)
    return parser


COMMANDS = {
    "validate": cmd_validate,
    "solve": cmd_solve,
    "figures": cmd_figures,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name, default in (("config", None), ("out", None), ("seed", 0), ("quiet", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    try:
        return COMMANDS[args.command](args)
    except _Fail as exc:
        _note(args, f"error: {exc}")
        return exc.code
    except ValidationFailed as exc:
        _note(args, f"error: {exc}")
        return EXIT_CHECK
    except (DomainError, InstabilityDetected, StepTooLarge, AdmissibilityViolation,
            FloatingPointError, OverflowError, ZeroDivisionError) as exc:
        _note(args, f"numerical failure: {exc}")
        return EXIT_IO
    except EzHestonError as exc:
        _note(args, f"error: {exc}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
