"""The limiting factor psi(theta) and its derivatives.

psi(theta) is the limit of exp(-eta(theta) t) E[exp(theta V(t))].  It comes from
the stationary value of a Riccati-type ODE system and multiplies every term of
the refined expansion, together with its first derivatives.  Two independent
methods compute those derivatives: Richardson-extrapolated finite differences
and a sensitivity ODE.  Their agreement is the main accuracy check.
"""
from importlib import resources

from affine_ldp import load_model, psi, psi_derivatives, solve_saddlepoint

fixtures = resources.files("affine_ldp") / "fixtures"
for name in ("lattice", "exponential"):
    model = load_model(fixtures / f"model_{name}.toml")
    cum = solve_saddlepoint(model, 25.0)
    fd = psi_derivatives(model, cum.h, "fd", sol=cum.tilt)
    ode = psi_derivatives(model, cum.h, "ode", sol=cum.tilt)
    print(f"{name}: h={cum.h:.6f}, psi(h)={psi(model, cum.h):.10g}")
    print(f"  psi'  fd={fd.psi_d1:.12g}  ode={ode.psi_d1:.12g}  rel diff "
          f"{abs(ode.psi_d1 / fd.psi_d1 - 1):.1e}")
    print(f"  psi'' fd={fd.psi_d2:.12g}  ode={ode.psi_d2:.12g}  rel diff "
          f"{abs(ode.psi_d2 / fd.psi_d2 - 1):.1e}")
    # Holding the tilted mean reversion fixed while differentiating gives a
    # different (simplified) pair of derivatives; see the README for when it is used.
    frozen = psi_derivatives(model, cum.h, "fd", sol=cum.tilt, tilt_feedback=False)
    print(f"  frozen-tilt psi' = {frozen.psi_d1:.12g}, psi'' = {frozen.psi_d2:.12g}")
