"""Refined large-deviation and central-limit approximations for affine point processes."""
__version__ = "0.1.0"

from .marks import Constant, Exponential, FiniteLattice, MarkLaw
from .model import (AffineModel, ErgodicQuantities, ValidationReport, ergodic_quantities,
                    lattice_span, load_model, validate)
from .transform import (CumulantPack, TiltSolution, eta_derivatives, rate_function,
                        solve_saddlepoint, solve_u_star, u_star_derivatives)
from .ode import PsiPack, TiltedDynamics, integrate_AB, psi, psi_derivatives, tilt_dynamics
from .expansion import (ExpansionResult, Indicator, Power, Series, clt_tail, lattice_coeffs,
                        nonlattice_coeffs, tail_expectation, tail_probability)
from .mc import MCEstimate, PathOutcome, SimConfig, importance_sampling, plain_mc, simulate
