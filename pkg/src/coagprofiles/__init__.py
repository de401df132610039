"""Self-similar profiles of coagulation kernels near the constant one.

Weighted-L1 grid machinery, the coagulation bilinear forms, the
linearised operator around e^{-x} with its explicit inverse, a damped
fixed-point profile solver, layer-form diagnostics, and a CSV experiment
driver.
"""

from .grids import (Grid, GridFunction, WeightParams, exp_profile,
                    first_moment, integrate, kernel_mode, left_model_eval,
                    left_tail_cumulative, make_grid, weight_eval,
                    weighted_norm)
from .kernels import (KernelSpec, ValidationReport, kernel_eval,
                      perturbation_eval, validate_kernel)
from .coag import b2_apply, bw_apply, coag_rhs
from .linop import (aux_E_eval, desing_laplace, exp_integral, inverse_apply,
                    inverse_pre_apply, laplace_ode_residual,
                    linearized_apply, m2_eval, ode_residual)
from .solver import (ProfileSolution, SolverOptions, laplace_gap,
                     moment_table, norm_params, selfsim_residual,
                     solve_profile, tail_decay_rate)
from .boundary import BoundaryLayerData, bl_residual, compute_bl_data

__all__ = [
    "Grid", "GridFunction", "WeightParams", "exp_profile", "first_moment",
    "integrate", "kernel_mode", "left_model_eval", "left_tail_cumulative",
    "make_grid", "weight_eval", "weighted_norm",
    "KernelSpec", "ValidationReport", "kernel_eval", "perturbation_eval",
    "validate_kernel",
    "b2_apply", "bw_apply", "coag_rhs",
    "aux_E_eval", "desing_laplace", "exp_integral", "inverse_apply",
    "inverse_pre_apply", "laplace_ode_residual", "linearized_apply",
    "m2_eval", "ode_residual",
    "ProfileSolution", "SolverOptions", "laplace_gap", "moment_table",
    "norm_params", "selfsim_residual", "solve_profile", "tail_decay_rate",
    "BoundaryLayerData", "bl_residual", "compute_bl_data",
]

__version__ = "0.1.0"
