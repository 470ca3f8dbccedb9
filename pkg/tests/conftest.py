import math
import sys

import pytest

from ezheston import ModelParams, derive_constants

# slope used by the hand-evaluated numeric examples (Sharpe 0.07 per unit variance)
EXAMPLE_LAMBDA = 0.07 / 0.0225


def figure_params(a=0.0, **kw):
    return ModelParams.figure_defaults(a=a, **kw)


def example_params(a=0.0, **kw):
    kw.setdefault("lambda_bar", EXAMPLE_LAMBDA)
    return ModelParams.figure_defaults(a=a, **kw)


@pytest.fixture
def fig0():
    p = figure_params()
    return p, derive_constants(p)


@pytest.fixture(params=[0.0, 0.1, 0.2], ids=lambda a: f"a={a}")
def fig_a(request):
    p = figure_params(request.param)
    return p, derive_constants(p)


@pytest.fixture
def ex0():
    p = example_params()
    return p, derive_constants(p)


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


__all__ = ["EXAMPLE_LAMBDA", "figure_params", "example_params", "rel", "math"]


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        status, title, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d} {status}  {title}" + (f"  [{detail}]" if detail else ""))
