"""Numerical laboratory for the Parisi functional on step order parameters."""

from .model import (
    BoundaryFunction,
    ConfigError,
    MixtureFunction,
    ModelSpec,
    StepOrderParameter,
    level_variance,
    linear_term,
    load_model_file,
    validate_step,
    xi_eval,
)
from .numerics import Grid, GridFunction, HermiteRule, build_grid, eval_at, smooth_tilt
from .optimize import MinimizeResult, OptimizerConfig, minimize, project_feasible, rsb_sweep
from .parisi import (
    EvalReport,
    GradientReport,
    RecursionStack,
    compute_u,
    grad_m,
    grad_q,
    gradients,
    parisi_objective,
    parisi_p,
    run_recursion,
)
from .probes import ProbeReport

__version__ = "0.1.0"

__all__ = [
    "BoundaryFunction",
    "ConfigError",
    "EvalReport",
    "GradientReport",
    "Grid",
    "GridFunction",
    "HermiteRule",
    "MinimizeResult",
    "MixtureFunction",
    "ModelSpec",
    "OptimizerConfig",
    "ProbeReport",
    "RecursionStack",
    "StepOrderParameter",
    "build_grid",
    "compute_u",
    "eval_at",
    "grad_m",
    "grad_q",
    "gradients",
    "level_variance",
    "linear_term",
    "load_model_file",
    "minimize",
    "parisi_objective",
    "parisi_p",
    "project_feasible",
    "rsb_sweep",
    "run_recursion",
    "smooth_tilt",
    "validate_step",
    "xi_eval",
]
