import math

import numpy as np
import pytest

from affine_ldp.errors import BeyondCriticalTilt, StencilOutOfDomain
from affine_ldp.ode import (beta_star, integrate_AB, psi, psi_derivatives,
                            psi_higher_derivatives, tilt_dynamics)
from affine_ldp.transform import solve_saddlepoint, solve_u_star


def test_psi_is_one_without_excitation(poisson_model):
    # kappa = 0, gamma = 0, x0 = 0: the tilted state does not feed back into V
    for theta in (0.2, 0.7):
        assert psi(poisson_model, theta) == pytest.approx(1.0, abs=1e-12)


def test_psi_at_zero(lattice_model):
    assert psi(lattice_model, 0.0) == 1.0
    # the transform ODE with delta = 0 stays at zero
    res = integrate_AB(lattice_model, 0.0, np.zeros(3))
    assert abs(res.B_inf) < 1e-14


def test_tilted_dynamics(lattice_model):
    sol = solve_u_star(lattice_model, 0.05)
    td = tilt_dynamics(lattice_model, 0.05, sol.u_star)
    s = 0.05 + lattice_model.gamma @ sol.u_star
    np.testing.assert_allclose(td.kappa_star, lattice_model.kappa * np.exp(s)[:, None])
    np.testing.assert_allclose(np.diag(td.beta_star),
                               np.diag(lattice_model.beta) - np.array([0.5, 0.6, 0.7]) * sol.u_star)
    assert td.decay_rate(lattice_model.gamma) > 0
    np.testing.assert_allclose(beta_star(lattice_model, sol.u_star), td.beta_star)


@pytest.mark.parametrize("name", ["lattice", "exponential"])
@pytest.mark.parametrize("feedback", [True, False])
def test_fd_and_sensitivity_agree(all_models, name, feedback):
    model = all_models[name]
    cum = solve_saddlepoint(model, 25.0, order=2)
    fd = psi_derivatives(model, cum.h, "fd", sol=cum.tilt, tilt_feedback=feedback)
    ode = psi_derivatives(model, cum.h, "ode", sol=cum.tilt, tilt_feedback=feedback)
    assert ode.psi == pytest.approx(fd.psi, rel=1e-9)
    assert ode.psi_d1 == pytest.approx(fd.psi_d1, rel=1e-6)
    assert ode.psi_d2 == pytest.approx(fd.psi_d2, rel=1e-5)


def test_feedback_changes_the_derivatives(lattice_model):
    cum = solve_saddlepoint(lattice_model, 25.0, order=2)
    a = psi_derivatives(lattice_model, cum.h, sol=cum.tilt)
    b = psi_derivatives(lattice_model, cum.h, sol=cum.tilt, tilt_feedback=False)
    assert a.psi == b.psi
    assert abs(a.psi_d2 / b.psi_d2 - 1) > 1e-3


def test_psi_derivative_matches_difference_of_psi(lattice_model):
    # independent adaptive solves at each point, five-point stencil
    h, s = 0.05, 1e-3
    vals = np.array([psi(lattice_model, h + k * s) for k in (-2, -1, 1, 2)])
    pack = psi_derivatives(lattice_model, h)
    assert np.array([1, -8, 8, -1]) @ vals / (12 * s) == pytest.approx(pack.psi_d1, rel=1e-6)


def test_higher_derivatives_consistent(lattice_model):
    h = 0.05
    pack = psi_higher_derivatives(lattice_model, h, 4)
    assert len(pack.derivs) == 5
    s = 2e-3
    lo = psi_derivatives(lattice_model, h - s)
    hi = psi_derivatives(lattice_model, h + s)
    assert (hi.psi_d2 - lo.psi_d2) / (2 * s) == pytest.approx(pack.higher[0], rel=1e-3)


def test_stencil_out_of_domain(lattice_model):
    with pytest.raises(BeyondCriticalTilt) as info:
        solve_u_star(lattice_model, 10.0)
    edge = info.value.last_theta
    with pytest.raises(StencilOutOfDomain):
        psi_derivatives(lattice_model, edge - 5e-4)
