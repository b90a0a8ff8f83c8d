import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from perclab.errors import ParameterError
from perclab.kernels import (
    bernoulli_nn,
    edge_prob,
    estimate_delta_eff,
    eval_phi,
    geometric_grid,
    kernel_from_mapping,
    long_range,
    mark_integral,
    mark_square_integral,
    scale_free,
    wdrcm,
)

GRID = geometric_grid(1e2, 1e2 * 4.0 ** 6, 7)
marks = st.floats(1e-6, 1 - 1e-6)


def test_long_range_value():
    assert eval_phi(long_range(1.0, 2.0, 1), 0.5, 0.5, 2.0) == pytest.approx(0.25)


def test_scale_free_marks_to_one():
    sf, lr = scale_free(1.3, 0.7, 1.5, 2), long_range(1.3, 1.5, 2)
    s = 1 - 1e-12
    assert eval_phi(sf, s, s, 3.0) == pytest.approx(eval_phi(lr, 0.5, 0.5, 3.0), rel=1e-9)


@given(marks, marks, st.floats(1.0, 1e3))
def test_wdrcm_gamma_zero_is_long_range(s, t, r):
    w = wdrcm("product", 2.0, 1.7, 2, gamma=0.0)
    assert eval_phi(w, s, t, r) == pytest.approx(eval_phi(long_range(2.0, 1.7, 2), s, t, r), rel=1e-12)


@given(marks, marks, st.floats(0.01, 100.0))
def test_kernels_symmetric_and_nonnegative(s, t, r):
    for k in (scale_free(1, 0.6, 2, 2), wdrcm("min", 1, 2, 1, gamma=0.5, gamma2=0.2),
              wdrcm("max", 1, 2, 1, gamma=0.5), wdrcm("product", 1, 1.5, 2, gamma=0.3, rho_kind="min")):
        a, b = eval_phi(k, s, t, r), eval_phi(k, t, s, r)
        assert a >= 0 and a == pytest.approx(b, rel=1e-12)


def test_bernoulli_nn():
    k = bernoulli_nn(0.3, 2)
    assert edge_prob(k, 0.5, 0.5, 1.0) == pytest.approx(0.3)
    assert edge_prob(k, 0.5, 0.5, 1.5) == 0.0
    assert edge_prob(bernoulli_nn(1.0, 2), 0.5, 0.5, 1.0) == 1.0


def test_edge_prob_identities():
    assert edge_prob(long_range(0.0 + 1e-300, 1, 1), 0.5, 0.5, 1e10) == pytest.approx(0.0)
    assert edge_prob(long_range(1.0, 1.0, 1), 0.5, 0.5, 0.0) == 1.0
    assert edge_prob(long_range(math.log(2), 1.0, 1), 0.5, 0.5, 1.0) == pytest.approx(0.5)


@given(marks, marks, st.floats(0.0, 1e4))
def test_edge_prob_in_unit_interval(s, t, r):
    p = edge_prob(scale_free(2.0, 0.9, 1.2, 1), s, t, r)
    assert 0.0 <= p <= 1.0


def test_invalid_arguments():
    with pytest.raises(ParameterError):
        eval_phi(long_range(1, 1, 1), 0.0, 0.5, 1.0)
    with pytest.raises(ParameterError):
        eval_phi(long_range(1, 1, 1), 0.5, 0.5, -1.0)
    with pytest.raises(ParameterError):
        long_range(-1, 1, 1)
    with pytest.raises(ParameterError):
        kernel_from_mapping({"family": "long_range", "d": 2, "bogus": 1})
    with pytest.raises(ParameterError):
        wdrcm("median", 1, 1, 1)


def test_kernel_from_mapping_roundtrip():
    k = scale_free(1.0, 0.8, 2.5, 1)
    assert kernel_from_mapping(k.as_dict()) == k


def test_long_range_mark_integral_closed_form():
    k = long_range(2.0, 1.5, 2)
    r, mu = 37.0, 0.2
    lo = r ** (2 * (mu - 1))
    expect = 2.0 * r ** -3.0 * (1 - 2 * lo) ** 2
    assert mark_integral(k, r, mu) == pytest.approx(expect, rel=1e-12)


def test_closed_and_quadrature_agree():
    k = scale_free(1.0, 0.8, 2.5, 1)
    for r in (10.0, 1e3):
        a = mark_integral(k, r, 0.1, "closed")
        b = mark_integral(k, r, 0.1, "quad")
        assert a == pytest.approx(b, rel=1e-7)


def test_mark_integral_swap_symmetry():
    k = wdrcm("min", 1.0, 2.0, 1, gamma=0.5, gamma2=0.3)
    f = lambda t, s: float(eval_phi(k, s, t, 5.0))
    a, _ = integrate.dblquad(f, 0.1, 0.6, 0.2, 0.9)
    b, _ = integrate.dblquad(lambda t, s: f(s, t), 0.2, 0.9, 0.1, 0.6)
    assert a == pytest.approx(b, rel=1e-8)


def test_wdrcm_quadrature_vs_dblquad():
    k = wdrcm("product", 1.5, 2.0, 1, gamma=0.6)
    lo, hi, r = 0.01, 0.99, 3.0
    ref, _ = integrate.dblquad(lambda t, s: float(eval_phi(k, s, t, r)), lo, hi, lo, hi, epsrel=1e-10)
    assert mark_square_integral(k, lo, hi, r) == pytest.approx(ref, rel=1e-6)


def test_scale_free_integral_matches_monte_carlo(frozen):
    k = scale_free(1.0, 0.8, 2.5, 1)
    val = mark_integral(k, 1e3, 0.0)
    assert abs(val - frozen["scale_free_square_mc_mean"]) < 3 * frozen["scale_free_square_mc_se"]


def test_mark_integral_bounds():
    with pytest.raises(ParameterError):
        mark_integral(long_range(1, 1, 1), 1.5, 0.0)
    with pytest.raises(ParameterError):
        mark_square_integral(long_range(1, 1, 1), 0.5, 0.4, 1.0)


@pytest.mark.parametrize("delta", [0.8, 1.5, 2.5])
def test_delta_eff_long_range(delta):
    est = estimate_delta_eff(long_range(1.0, delta, 2), 0.0, GRID)
    assert est.slope == pytest.approx(delta, abs=0.05)


@given(st.floats(1e-3, 1e3))
def test_delta_eff_beta_invariance(c):
    k = scale_free(1.0, 0.8, 2.5, 1)
    a = estimate_delta_eff(k, 0.1, GRID)
    b = estimate_delta_eff(k.with_beta(c), 0.1, GRID)
    assert abs(a.slope - b.slope) <= max(a.residual, 1e-9) + 1e-9


def test_delta_eff_scale_free_refined_oracle(frozen):
    est = estimate_delta_eff(scale_free(1.0, 0.8, 2.5, 1), 0.0, GRID)
    assert est.slope == pytest.approx(frozen["scale_free_delta_eff_refined"], abs=0.05)
    # asymptotic value delta + 2 - 2 gamma delta
    assert est.slope == pytest.approx(0.5, abs=0.05)


def test_delta_eff_grid_validation():
    k = long_range(1, 1, 1)
    with pytest.raises(ParameterError):
        estimate_delta_eff(k, 0.0, [1e2, 1e3, 1e4])
    with pytest.raises(ParameterError):
        estimate_delta_eff(k, 0.0, [1e2, 1.5e2, 2.25e2, 3.375e2])
