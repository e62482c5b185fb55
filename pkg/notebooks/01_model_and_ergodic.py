"""Loading an affine point process and reading off its long-run behaviour.

A model file describes the state dynamics

    dX = (b - beta X) dt + sigma(X) dW + sum_i gamma_i Z_i dN_i,

with sigma sigma^T = a + sum_j alpha^j x_j and event intensities
Lambda_i = lambda_i + kappa_i^T x.  The quantity of interest is the total mark
V(t) = sum of all marks that arrived by time t.

Run with ``python notebooks/01_model_and_ergodic.py``.
"""
from importlib import resources

from affine_ldp import ergodic_quantities, eta_derivatives, lattice_span, load_model, validate

fixtures = resources.files("affine_ldp") / "fixtures"
model = load_model(fixtures / "model_lattice.toml")
print(f"state dimension d={model.d}, event types n={model.n}, square-root block m={model.m}")

# Every structural and positivity requirement is checked before anything is computed.
report = validate(model)
print("validation passed:", report.passed)

# V(t)/t converges to r and (V(t) - r t)/sqrt(t) to a centred normal with variance sigma^2.
eq = ergodic_quantities(model)
print(f"long-run rate r = {eq.r:.6f}, CLT variance sigma^2 = {eq.sigma2:.6f}")

# The same two numbers are the first two derivatives at zero of the limiting
# cumulant generating function eta(theta); this is a useful consistency check.
e = eta_derivatives(model, 0.0, 2)
print(f"eta'(0) = {e[1]:.6f}, eta''(0) = {e[2]:.6f}")

# Unit marks put V(t) on the integer lattice, which selects the lattice expansion.
print("lattice span:", lattice_span(model))
print("exponential marks span:", lattice_span(load_model(fixtures / "model_exponential.toml")))
