import dataclasses

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ezheston import DomainError, derive_constants
from ezheston.closed_form import eval_g, optimal_strategy
from ezheston.verification import (aggregator_f, hamiltonian, hamiltonian_terms, hjbi_residual,
                                   monotonicity_probe, optimal_input, penalty, riccati_check,
                                   residual_check, run_verification, saddle_check, sample_case,
                                   w_derivatives)

from conftest import figure_params


def test_aggregator_vanishes_at_certainty_equivalent():
    g, psi, v = 1.4, 0.6285714, -2.5
    c = ((1 - g) * v) ** (1 / (1 - g))
    assert aggregator_f(c, v, g, psi, 0.08) == pytest.approx(0.0, abs=1e-15)


def test_aggregator_high_precision():
    mp.mp.dps = 50
    g, psi, d = mp.mpf("1.4"), mp.mpf("0.6285714"), mp.mpf("0.08")
    v, c = mp.mpf(-1), mp.mpf(1)
    theta = (1 - g) / (1 - 1 / psi)
    ref = d * theta * v * ((c / ((1 - g) * v) ** (1 / (1 - g))) ** (1 - 1 / psi) - 1)
    got = aggregator_f(1.0, -1.0, 1.4, 0.6285714, 0.08)
    assert np.isfinite(got)
    assert got == pytest.approx(float(ref), rel=1e-13)


@pytest.mark.parametrize("c, v", [(0.0, -1.0), (-1.0, -1.0), (1.0, 1.0), (1.0, 0.0)])
def test_aggregator_domain(c, v):
    with pytest.raises(DomainError):
        aggregator_f(c, v, 1.4, 0.6, 0.08)


@pytest.mark.parametrize("case", "abcd")
def test_monotonicity_probe(case):
    violations, worst = monotonicity_probe(case, 10_000, seed=7)
    assert violations == 0, worst


@settings(max_examples=300, deadline=None)
@given(case=st.sampled_from("abcd"), seed=st.integers(0, 2**32 - 1))
def test_monotonicity_random_seeds(case, seed):
    assert monotonicity_probe(case, 64, seed=seed)[0] == 0


def test_sampler_stays_in_case():
    from ezheston.params import validate_assumption31
    rng = np.random.default_rng(3)
    for case in "abcd":
        g, psi, _ = sample_case(case, 2000, rng)
        assert {validate_assumption31(a, b) for a, b in zip(g, psi)} == {case}


def test_penalty_zero_distortion(fig_a):
    p, c = fig_a
    assert penalty([0.0, 0.0], 1.0, 1.0, 0.04, 0.3, p, c) == 0.0


def test_penalty_blows_up_as_robustness_vanishes():
    vals = []
    for a in (1e-2, 1e-4, 1e-6):
        p = figure_params(a=a)
        c = derive_constants(p)
        vals.append(abs(penalty([-0.1, -0.05], 1.0, 1.0, 0.04, 0.3, p, c)))
    # roughly 1/a; the pinned exponents also move a little with a
    assert vals[1] / vals[0] > 50 and vals[2] / vals[1] > 95
    p = figure_params()
    assert penalty([-0.1, -0.05], 1.0, 1.0, 0.04, 0.3, p, derive_constants(p)) == np.inf


def test_penalty_heston_expansion():
    p = figure_params(a=0.1)
    c = derive_constants(p)
    t, x, y, pi, v2 = 2.0, 1.7, 0.03, 0.25, -0.02
    gk = eval_g(t, y, c, p).g ** c.k
    expected = gk * x ** (1 - p.gamma) / (2 * p.a) * y * (
        p.a**2 * pi**2 - 2 * p.a * pi * p.rho * p.beta_bar * v2 + p.beta_bar**2 * v2**2)
    assert penalty([-p.a / x, v2], t, x, y, pi, p, c) == pytest.approx(expected, rel=1e-13)


def test_penalty_needs_nonzero_value():
    p = figure_params(a=0.1)
    c = derive_constants(p)
    with pytest.raises(DomainError):
        penalty([-0.1, 0.0], p.T, 1.0, 0.04, 0.3, p, c)


def test_w_derivatives_against_finite_differences(fig_a):
    p, c = fig_a
    t, x, y = 3.0, 1.3, 0.05
    d = w_derivatives(t, x, y, p, c)

    def w(t_, x_, y_):
        return w_derivatives(t_, x_, y_, p, c).w

    h = 1e-4
    assert d.w_x == pytest.approx((w(t, x + h, y) - w(t, x - h, y)) / (2 * h), rel=1e-7)
    assert d.w_y == pytest.approx((w(t, x, y + h) - w(t, x, y - h)) / (2 * h), rel=1e-6)
    assert d.w_t == pytest.approx((w(t + h, x, y) - w(t - h, x, y)) / (2 * h), rel=1e-6)
    h2 = 1e-3
    assert d.w_yy == pytest.approx((w(t, x, y + h2) - 2 * d.w + w(t, x, y - h2)) / h2**2, rel=1e-4)
    assert d.w_xy == pytest.approx(
        (w(t, x + h, y + h) - w(t, x + h, y - h) - w(t, x - h, y + h) + w(t, x - h, y - h)) / (4 * h * h),
        rel=1e-4)


def test_breakdown_sums_to_residual(fig_a):
    p, c = fig_a
    rep = hjbi_residual(1.0, 1.3, 0.04, p, c)
    assert sum(rep.term_breakdown.values()) == pytest.approx(rep.residual, abs=1e-12)
    assert np.isfinite(rep.normalized_residual)


def test_tilt_is_minus_twice_penalty():
    p = figure_params(a=0.1)
    c = derive_constants(p)
    for t, y in [(0.0, 0.01), (5.0, 0.05), (9.5, 0.09)]:
        terms = hamiltonian_terms(optimal_input(t, 1.3, y, p, c))
        assert terms["distortion_tilt"] == pytest.approx(-2 * terms["penalty"], rel=1e-12)


def test_residual_small_on_default_grid():
    p = figure_params(a=0.1)
    ch = residual_check(p, derive_constants(p))
    assert ch.passed and ch.measured < 1e-6


def test_residual_needs_positive_variance(fig0):
    p, c = fig0
    with pytest.raises(DomainError):
        hjbi_residual(1.0, 1.0, 0.0, p, c)


def test_g_pde_terminal_limit(fig0):
    p, c = fig0
    gaps = [abs(eval_g(p.T - h, 0.04, c, p).g_t + c.delta_psi) for h in (1e-1, 1e-2, 1e-3)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-3


def test_saddle_at_optimum(fig_a):
    p, c = fig_a
    rep = saddle_check(optimal_input(2.0, 1.3, 0.04, p, c))
    assert rep.ok


def test_saddle_detects_off_optimum_portfolio():
    p = figure_params(a=0.1)
    c = derive_constants(p)
    inp = optimal_input(2.0, 1.3, 0.04, p, c)
    shifted = dataclasses.replace(inp, pi=inp.pi + 0.05)
    assert not saddle_check(shifted).ok
    assert hamiltonian(shifted) < hamiltonian(inp)


def test_corrupted_constant_fails_checks():
    p = figure_params(a=0.1)
    c = derive_constants(p)
    bad = dataclasses.replace(c, b=c.b * 1.01)
    assert riccati_check(p, c).passed
    assert not riccati_check(p, bad).passed


@pytest.mark.slow
def test_full_suite_passes(fig_a):
    p, c = fig_a
    rep = run_verification(p, c)
    assert rep.ok, rep.worst()
    assert rep.worst() is None
