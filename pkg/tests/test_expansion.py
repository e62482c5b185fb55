import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import gamma as gamma_fn

from affine_ldp.errors import GrowthBoundViolated, UnsupportedOrder
from affine_ldp.expansion import (DUAL_PATH_RTOL, Indicator, LatticeCallable, Power, Series,
                                  a_k_sequence, clt_tail, lattice_coeffs, nonlattice_coeffs,
                                  tail_expectation, tail_probability)
from affine_ldp.ode import psi_derivatives
from affine_ldp.transform import solve_saddlepoint

from oracles import (compound_model, compound_tail, laplace_integral, poisson_stop_loss,
                     poisson_tail)


@pytest.mark.parametrize("s", [0.0, 0.5, 1.0, 2.5])
def test_a_k_series_matches_quadrature(s):
    lam = 1e4
    a = a_k_sequence(s, 6)
    series = sum(gamma_fn(k + s + 1) * a[k] / lam ** (s + 1 + k) for k in range(7))
    assert series == pytest.approx(laplace_integral(s, lam), rel=1e-10)


def test_a_k_first_terms():
    # a_1 = -(1 + s/2) follows from the recursion
    for s in (0.0, 1.0, 3.0):
        a = a_k_sequence(s, 1)
        assert a[0] == 1.0 and a[1] == pytest.approx(-(1 + s / 2))


@pytest.mark.parametrize("name,R", [("lattice", 25.0), ("exponential", 25.0), ("poisson", 2.0)])
@pytest.mark.parametrize("functional", [Indicator(), Power(1.0), Power(0.5), Power(2.0)])
def test_dual_paths_agree(all_models, name, R, functional):
    model = all_models[name]
    cum = solve_saddlepoint(model, R)
    pack = psi_derivatives(model, cum.h, sol=cum.tilt)
    if name == "exponential":
        closed, general = nonlattice_coeffs(cum, pack, functional, 1, return_general=True)
    else:
        closed, general = lattice_coeffs(cum, pack, functional, 1, 1.0, return_general=True)
    for c, g in zip(closed, general):
        assert abs(c - g) <= DUAL_PATH_RTOL * abs(g)


@pytest.mark.parametrize("t", [50, 100, 200])
def test_poisson_tail_and_stop_loss(poisson_model, t):
    p = tail_probability(poisson_model, 2.0, t)
    e = tail_expectation(poisson_model, 2.0, t, Power(1.0))
    assert p.value == pytest.approx(poisson_tail(2.0, t), rel=0.05)
    assert e.value == pytest.approx(poisson_stop_loss(2.0, t), rel=0.05)


def test_refinement_improves_on_poisson(poisson_model):
    exact = poisson_tail(2.0, 100)
    errs = [abs(tail_probability(poisson_model, 2.0, 100, order=k, experimental=True).value / exact - 1)
            for k in (0, 1, 2)]
    assert errs[0] > errs[1] > errs[2]


def test_order_two_needs_the_experimental_flag(poisson_model):
    with pytest.raises(UnsupportedOrder):
        tail_probability(poisson_model, 2.0, 100, order=2)


@pytest.mark.parametrize("power", [0.0, 1.0])
def test_nonlattice_first_correction_is_second_order(power):
    # error of the first-order expansion should fall like 1/t^2 on an exact compound-Poisson tail
    model = compound_model()
    functional = Indicator() if power == 0 else Power(1.0)
    ts = [50, 100, 200, 400]
    errs = np.array([tail_expectation(model, 2.0, t, functional).value / compound_tail(2.0, t, power) - 1
                     for t in ts])
    slopes = np.diff(np.log(np.abs(errs))) / np.diff(np.log(ts))
    assert np.all(slopes < -1.7), slopes
    # a weight of 1 on the third-cumulant ratio only reaches 1/t
    bad = np.array([tail_expectation(model, 2.0, t, functional, skew_weight=1.0).value
                    / compound_tail(2.0, t, power) - 1 for t in ts])
    ratio = np.abs(bad) / np.abs(errs)
    assert np.all(ratio > 1) and np.all(np.diff(ratio) > 0)
    assert np.log(abs(bad[-1] / bad[-2])) / np.log(ts[-1] / ts[-2]) > -1.3


def test_lattice_regime_rounds_the_level(poisson_model):
    res = tail_probability(poisson_model, 2.004, 100)
    assert res.adjusted_level == pytest.approx(2.0)
    assert res.regime == "lattice"


def test_lattice_callable_matches_power(poisson_model):
    cum = solve_saddlepoint(poisson_model, 2.0)
    pack = psi_derivatives(poisson_model, cum.h, sol=cum.tilt)
    a = lattice_coeffs(cum, pack, Power(2.0), 1, 1.0)
    b = lattice_coeffs(cum, pack, LatticeCallable(lambda x: x**2), 1, 1.0)
    np.testing.assert_allclose(a, b, rtol=1e-10)


def test_series_matches_power(exponential_model):
    cum = solve_saddlepoint(exponential_model, 25.0)
    pack = psi_derivatives(exponential_model, cum.h, sol=cum.tilt)
    a = nonlattice_coeffs(cum, pack, Power(2.0), 1)
    b = nonlattice_coeffs(cum, pack, Series((0.0, 0.0, 1.0), abar=1e4, hbar=0.03), 1)
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_growth_bound(poisson_model):
    cum = solve_saddlepoint(poisson_model, 2.0)
    with pytest.raises(GrowthBoundViolated):
        lattice_coeffs(cum, psi_derivatives(poisson_model, cum.h, sol=cum.tilt),
                       LatticeCallable(np.exp, 1.0, 1.0), 1, 1.0)


def test_order_zero_is_the_leading_term(poisson_model):
    res = tail_probability(poisson_model, 2.0, 100, order=0)
    lead = math.exp(-100 * res.rate) / math.sqrt(2 * math.pi * 100 * res.eta2)
    assert res.value == lead * res.coefficients[0]


@settings(max_examples=20, deadline=None)
@given(y=st.floats(-2.0, 3.0), t=st.floats(10.0, 500.0))
def test_clt_threshold(lattice_model, y, t):
    res = clt_tail(lattice_model, y, t)
    assert res.threshold == pytest.approx(res.r * t + res.sigma * math.sqrt(t) * y)
    assert 0.0 < res.probability < 1.0


def test_tail_probability_is_monotone_in_time(lattice_model):
    vals = [tail_probability(lattice_model, 25.0, t).value for t in (50, 100, 200)]
    assert vals[0] > vals[1] > vals[2] > 0
