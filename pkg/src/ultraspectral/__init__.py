"""Ultraspherical spectral discretization and time stepping for 1D evolution PDEs."""

from .adaptivity import AdaptConfig, AdaptLog, adapt_step, adaptive_run, history_align
from .banded import (AlmostBandedSystem, FactorCache, QRFactorization, QRStack,
                     banded_triangular_solve, conv_inv, factor_cache, qr_factor, qr_solve,
                     shifted_banded_solve)
from .exceptions import (BoundaryCorrectionError, ConfigError, InvalidStateError,
                         PoleCollisionError, ResolutionError, SingularMatrixError, StepperError,
                         UltraspectralError)
from .expint import (ExpMultistep, PhiOperator, PoleKind, PoleSet, cf_poles, etd_krogstad_step,
                     etd_run, exp_multistep_step, phi_apply, phi_scalar, talbot_poles,
                     zeta_weights)
from .operators import (BandedMatrix, BoundaryCondition, BoundaryFunctional, OperatorSpec,
                        assemble_L, boundary_row, boundary_rows, conv_op, diff_op,
                        fourier_diff_op, mult_op)
from .schemes import get_scheme
from .series import (CoeffSeries, cheb_points, chebyshev, coeffs_to_vals, evaluate, pad,
                     plateau, resolve, vals_to_coeffs)
from .stepping import (ProblemSpec, Stepper, StepState, bc_correct, eval_nonlinear, run,
                       solve_bvp, step_a1_lmm, step_a1_rk, step_a2_lmm, step_a2_rk)

__version__ = "0.1.0"
