"""First-order approximations for the two benchmark models across levels and horizons.

The ``table`` command of the CLI prints the same layout with importance-sampling
estimates and relative errors; here only the approximations are tabulated, which
takes a few seconds.  Small horizons are deliberately included: at t = 10 the
first-order correction can exceed the leading term and the approximation turns
negative, which is the expected breakdown of an asymptotic series.
"""
from importlib import resources

from affine_ldp import Indicator, Power, load_model, tail_expectation

fixtures = resources.files("affine_ldp") / "fixtures"
times = [10, 20, 30, 50, 100, 200, 300]
for name in ("lattice", "exponential"):
    model = load_model(fixtures / f"model_{name}.toml")
    print(f"\n{name} marks")
    print("  x    t     P(V>=xt)     E[(V-xt)^+]")
    for x in (25, 30):
        for t in times:
            p = tail_expectation(model, x, t, Indicator()).value
            e = tail_expectation(model, x, t, Power(1.0)).value
            print(f"{x:3d} {t:4d}   {p: .2E}   {e: .2E}")
