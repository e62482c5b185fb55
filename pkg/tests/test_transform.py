import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from affine_ldp.errors import BeyondCriticalTilt, LevelBelowMean, UnsupportedOrder
from affine_ldp.transform import (eta_derivatives, rate_function, residual, solve_saddlepoint,
                                  solve_u_star, u_star_derivatives)


@settings(max_examples=25, deadline=None)
@given(theta=st.floats(-0.5, 0.08))
def test_u_star_solves_the_tilt_equation(lattice_model, theta):
    sol = solve_u_star(lattice_model, theta)
    assert np.max(np.abs(residual(lattice_model, theta, sol.u_star))) < 1e-11


@pytest.mark.parametrize("name", ["lattice", "exponential"])
def test_u_star_and_eta_derivatives_match_differences(all_models, name):
    model = all_models[name]
    theta, s = 0.04, 1e-3
    us = u_star_derivatives(model, theta, 3)
    e = eta_derivatives(model, theta, 3, us)
    grid = [solve_u_star(model, theta + k * s) for k in (-2, -1, 0, 1, 2)]
    u = np.array([g.u_star for g in grid])
    et = np.array([g.eta for g in grid])
    w1 = np.array([1, -8, 0, 8, -1]) / (12 * s)
    w2 = np.array([-1, 16, -30, 16, -1]) / (12 * s * s)
    np.testing.assert_allclose(w1 @ u, us[1], rtol=1e-7)
    np.testing.assert_allclose(w2 @ u, us[2], rtol=1e-5)
    assert w1 @ et == pytest.approx(e[1], rel=1e-6)
    assert w2 @ et == pytest.approx(e[2], rel=1e-5)


def test_poisson_closed_forms(poisson_model):
    # kappa = 0, unit marks: u* = 0 and eta(theta) = e^theta - 1
    for theta in (-1.0, 0.3, 1.2):
        e = eta_derivatives(poisson_model, theta, 4)
        assert e[0] == pytest.approx(math.expm1(theta))
        for k in range(1, 5):
            assert e[k] == pytest.approx(math.exp(theta))
    cum = solve_saddlepoint(poisson_model, 2.0)
    assert cum.h == pytest.approx(math.log(2.0))
    assert cum.rate == pytest.approx(2 * math.log(2) - 1)


@pytest.mark.parametrize("name,R", [("lattice", 25.0), ("lattice", 30.0),
                                    ("exponential", 25.0), ("exponential", 30.0)])
def test_saddlepoint_postcondition(all_models, name, R):
    cum = solve_saddlepoint(all_models[name], R)
    assert cum.eta_derivs[1] == pytest.approx(R, rel=1e-10)
    assert cum.h > 0 and cum.eta2 > 0
    assert cum.rate == pytest.approx(cum.h * R - cum.eta_derivs[0])


def test_rate_is_convex_and_increasing(lattice_model):
    levels = [20.0, 22.5, 25.0, 27.5, 30.0]
    rates = [rate_function(lattice_model, R) for R in levels]
    assert all(np.diff(rates) > 0)
    assert all(np.diff(rates, 2) > 0)


def test_level_below_mean(lattice_model):
    with pytest.raises(LevelBelowMean):
        solve_saddlepoint(lattice_model, 5.0)


def test_beyond_critical_tilt(lattice_model):
    with pytest.raises(BeyondCriticalTilt) as info:
        solve_u_star(lattice_model, 5.0)
    assert info.value.last_theta is not None and info.value.last_theta < 5.0


def test_unsupported_order(lattice_model):
    with pytest.raises(UnsupportedOrder):
        u_star_derivatives(lattice_model, 0.01, 5)
    assert len(u_star_derivatives(lattice_model, 0.01, 6, experimental=True)) == 7
