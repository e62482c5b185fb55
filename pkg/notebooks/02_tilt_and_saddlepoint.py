"""The tilt function u*(theta), the cumulant function eta(theta) and the saddlepoint.

For each theta the vector u*(theta) solves a nonlinear algebraic system; eta(theta)
is then explicit.  A level R above the long-run rate r has a unique saddlepoint h
with eta'(h) = R, and the large-deviation rate is I(R) = h R - eta(h).
"""
from importlib import resources

import numpy as np

from affine_ldp import load_model, rate_function, solve_saddlepoint, solve_u_star
from affine_ldp.transform import eta

model = load_model(resources.files("affine_ldp") / "fixtures" / "model_lattice.toml")

print(" theta    u*(theta)                         eta(theta)")
for theta in np.linspace(0.0, 0.08, 5):
    sol = solve_u_star(model, theta)
    print(f" {theta:.3f}  {np.array2string(sol.u_star, precision=5):32s}  "
          f"{eta(model, theta, sol.u_star):.6f}")

for R in (25.0, 30.0):
    cum = solve_saddlepoint(model, R)
    print(f"\nlevel R={R:g}: h={cum.h:.8f}, rate I={cum.rate:.8f}")
    print("  eta derivatives at h:", ", ".join(f"{v:.5g}" for v in cum.eta_derivs))
    print(f"  eta'(h) - R = {cum.eta_derivs[1] - R:.2e}")

# The rate function is convex and vanishes only at the long-run rate.
print("\nI(R) on a grid:", [round(rate_function(model, R), 5) for R in (20, 22.5, 25, 27.5, 30)])
