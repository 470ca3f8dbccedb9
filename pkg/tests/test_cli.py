import csv
import io
import subprocess
import sys

import numpy as np
import pytest

from ezheston.cli import main
from ezheston.params import ModelParams, SolverConfig, format_config

from conftest import EXAMPLE_LAMBDA


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows_of(text):
    return list(csv.DictReader(io.StringIO(text)))


@pytest.fixture
def example_config(tmp_path):
    from dataclasses import replace
    p = replace(ModelParams.figure_defaults(), lambda_bar=EXAMPLE_LAMBDA)
    f = tmp_path / "example.cfg"
    f.write_text(format_config(SolverConfig(p)))
    return f


def test_validate_defaults(capsys):
    code, out, _ = run(capsys, "validate")
    assert code == 0
    assert "assumption31_case = b" in out and "ok = true" in out


def test_validate_failing_regime(tmp_path, capsys):
    from dataclasses import replace
    f = tmp_path / "bad.cfg"
    f.write_text(format_config(SolverConfig(replace(ModelParams.figure_defaults(), m=0.1))))
    code, out, err = run(capsys, "validate", "--config", str(f))
    assert code == 1 and "ok = false" in out and "validation failed" in err


def test_missing_config_is_io_error(tmp_path, capsys):
    code, _, err = run(capsys, "validate", "--config", str(tmp_path / "nope.cfg"))
    assert code == 2 and err


def test_unknown_key_is_io_error(tmp_path, capsys):
    f = tmp_path / "x.cfg"
    f.write_text("gamma = 1.4\nbogus = 1\n")
    assert run(capsys, "validate", "--config", str(f))[0] == 2


def test_invalid_parameter_value_is_check_failure(tmp_path, capsys):
    f = tmp_path / "x.cfg"
    f.write_text(format_config(SolverConfig(ModelParams.figure_defaults())).replace(
        "delta = 0.08", "delta = -0.08"))
    assert run(capsys, "validate", "--config", str(f))[0] == 1


def test_solve_example_point(example_config, capsys):
    code, out, _ = run(capsys, "solve", "--config", str(example_config), "--t", "0")
    assert code == 0
    (row,) = rows_of(out)
    assert 2.2222 <= float(row["pi_star"]) <= 2.2475
    assert float(row["y"]) == pytest.approx(0.0225)


def test_solve_near_maturity(capsys):
    p = ModelParams.figure_defaults()
    code, out, _ = run(capsys, "solve", "--t", repr(p.T - 1e-6))
    assert code == 0
    assert float(rows_of(out)[0]["cx_star"]) >= 5e5


def test_solve_inside_guard_fails(capsys):
    code, _, _ = run(capsys, "solve", "--t", "9.9999999")
    assert code == 2


def test_solve_grid(capsys):
    code, out, _ = run(capsys, "solve", "--grid-t", "0:9:4", "--grid-y", "0.01:0.09:3")
    rows = rows_of(out)
    assert code == 0 and len(rows) == 12
    assert list(rows[0]) == ["t", "y", "volatility", "A", "B_ref", "g", "g_y_over_g", "pi_star",
                             "cx_star", "w_at_x1", "v1_star_at_x1", "v2_star"]


def test_solve_bad_grid(capsys):
    assert run(capsys, "solve", "--grid-y", "0.1:0.2")[0] == 2


def test_t_options_are_exclusive(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["solve", "--t", "1", "--grid-t", "0:1:3"])
    assert exc.value.code == 2


def test_figures_written(tmp_path, capsys):
    code, _, err = run(capsys, "figures", "--out", str(tmp_path))
    assert code == 0
    assert sorted(f.name for f in tmp_path.iterdir()) == ["fig1.csv", "fig2.csv", "fig3.csv", "figG.csv"]
    fig1 = np.loadtxt(tmp_path / "fig1.csv", delimiter=",", skiprows=1)
    assert fig1.shape == (100, 4)
    assert np.all(fig1[:, 1] > fig1[:, 2]) and np.all(fig1[:, 2] > fig1[:, 3])
    assert "gamma=1.6" in err


def test_figures_single(tmp_path, capsys):
    assert run(capsys, "figures", "--which", "2", "--out", str(tmp_path), "--quiet")[0] == 0
    assert [f.name for f in tmp_path.iterdir()] == ["fig2.csv"]
    fig2 = np.loadtxt(tmp_path / "fig2.csv", delimiter=",", skiprows=1)
    assert fig2.shape == (101, 4) and fig2[-1, 0] < 10.0


def test_verify_passes(capsys):
    code, out, _ = run(capsys, "verify")
    assert code == 0
    assert [r["check"] for r in rows_of(out)] == ["riccati_ode", "g_pde", "hjbi_residual",
                                                  "saddle_v", "saddle_u"]


def test_verify_detects_corrupted_constant(capsys):
    code, out, err = run(capsys, "verify", "--corrupt-b", "1.01")
    assert code == 1
    failed = {r["check"] for r in rows_of(out) if r["pass"] == "false"}
    assert "hjbi_residual" in failed and "check failed" in err


def test_verify_unattainable_tolerance(capsys):
    assert run(capsys, "verify", "--tol-residual", "1e-15")[0] == 1


def test_simulate_small(capsys):
    code, out, _ = run(capsys, "simulate", "--paths", "400", "--dt", "1e-2", "--seed", "3")
    rows = rows_of(out)
    assert [r["check"] for r in rows] == ["feynman_kac", "cir_mean", "martingale"]
    assert code in (0, 1)
    assert code == (0 if all(r["pass"] == "true" for r in rows) else 1)


def test_simulate_single_path(capsys):
    code, out, _ = run(capsys, "simulate", "--paths", "1", "--dt", "1e-2")
    assert code == 0
    assert all(r["std_error"] == "inf" for r in rows_of(out))


def test_simulate_rejects_bad_arguments(capsys):
    assert run(capsys, "simulate", "--paths", "0")[0] == 2
    assert run(capsys, "simulate", "--paths", "3", "--antithetic", "--dt", "1e-2")[0] == 2
    assert run(capsys, "simulate", "--paths", "4", "--dt", "0.5")[0] == 2


def test_seeded_output_is_byte_identical(tmp_path, capsys):
    outs = []
    for d in ("r1", "r2"):
        assert run(capsys, "simulate", "--paths", "200", "--dt", "1e-2", "--seed", "17",
                   "--out", str(tmp_path / d))[0] in (0, 1)
        outs.append((tmp_path / d / "simulate.csv").read_bytes())
    assert outs[0] == outs[1]


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "ezheston", "validate", "--quiet"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "k = " in res.stdout
