"""Truncated Milstein integration for SDEs with super-linear coefficients."""

__version__ = "0.1.0"

from .brownian import BrownianPath, PathGrid, coarsen, sample_path
from .estimators import SchemeSimulator, StrongOrderRegressor
from .exceptions import (BlowUpError, NumericDomainError, PolicyRejectedError,
                         UsageError)
from .experiments import (ConvergenceReport, ExperimentSpec, fit_order,
                          midstep_second_moment, moment_sweep, strong_error)
from .integrators import (Trajectory, classical_milstein_step, euler_maruyama_step,
                          interpolate_within_step, simulate, truncated_euler_step,
                          truncated_milstein_step)
from .sde_core import (SdeSystem, builtin_model, check_assumptions,
                       check_commutativity, eval_L_operator)
from .truncation import (TruncationContext, TruncationPolicy, truncate_point,
                         validate_policy)

__all__ = [
    "BlowUpError", "BrownianPath", "ConvergenceReport", "ExperimentSpec",
    "NumericDomainError", "PathGrid", "PolicyRejectedError", "SchemeSimulator",
    "SdeSystem", "StrongOrderRegressor", "Trajectory", "TruncationContext",
    "TruncationPolicy", "UsageError", "builtin_model", "check_assumptions",
    "check_commutativity", "classical_milstein_step", "coarsen",
    "euler_maruyama_step", "eval_L_operator", "fit_order", "interpolate_within_step",
    "midstep_second_moment", "moment_sweep", "sample_path", "simulate",
    "strong_error", "truncate_point", "truncated_euler_step",
    "truncated_milstein_step", "validate_policy",
]
