"""Budgeted drift allocation with absorption.

A fixed drift budget is split, moment by moment, across independent
diffusing coordinates that are ruined on hitting zero.  The package
solves the dynamic-programming equations for the all-survive probability
(kind V) and the expected survivor count (kind U) on compactified grids,
simulates the controlled system under explicit allocation rules, and
runs structural checks tying the two back together.
"""

from .closedform import (DriftBudget, compactify, decompactify,
                         mckean_shepp_v2, survival_h, value_1d)
from .errors import (ArtifactError, ConfigError, ConvergenceError,
                     DependencyError, GridFormatError, KindMismatchError,
                     ProvenanceError, RegimeError, SurvallocError)
from .grids import (KIND_U, KIND_V, GradientField, GridSpec, PolicyField,
                    ValueGrid, load_grid, require_kind, save_grid)
from .boundary import BoundaryOracle, assemble_boundary, closed_form_dim1
from .solver import (extract_policy, gradient, laggard_control, solve,
                     solve_recursive)
from .simulate import (ConstantSplit, Fixed, GridFeedback, Laggard, Policy,
                       SimConfig, SimEstimate, Uniform, estimate,
                       horizon_schedule, run_path, step)
from .verify import (CheckReport, check_bounds_symmetry_monotonicity,
                     check_conjecture_v, check_counterexample_u,
                     check_lifting, check_mc_vs_pde, check_thresholds,
                     render_summary, reports_to_json)

__version__ = "0.1.0"

__all__ = [
    "ArtifactError", "BoundaryOracle", "CheckReport", "ConfigError",
    "ConstantSplit", "ConvergenceError", "DependencyError", "DriftBudget",
    "Fixed", "GradientField", "GridFeedback", "GridFormatError", "GridSpec",
    "KIND_U", "KIND_V", "KindMismatchError", "Laggard", "Policy",
    "PolicyField", "ProvenanceError", "RegimeError", "SimConfig",
    "SimEstimate", "SurvallocError", "Uniform", "ValueGrid",
    "assemble_boundary", "check_bounds_symmetry_monotonicity",
    "check_conjecture_v", "check_counterexample_u", "check_lifting",
    "check_mc_vs_pde", "check_thresholds", "closed_form_dim1", "compactify",
    "decompactify", "estimate", "extract_policy", "gradient",
    "horizon_schedule", "laggard_control", "load_grid", "mckean_shepp_v2",
    "render_summary", "reports_to_json", "require_kind", "run_path",
    "save_grid", "solve", "solve_recursive", "step", "survival_h",
    "value_1d",
]
