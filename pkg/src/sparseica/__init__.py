"""Sparsity-based identifiability toolkit for linear and nonlinear ICA."""

__version__ = "0.1.0"

from .conditions import (
    ConditionReport,
    check_intersection_condition,
    check_sparsity_budget,
    check_span_condition,
    check_undercomplete_condition,
)
from .flows import (
    CouplingFlow,
    GaussianPrior,
    Gaussianizer,
    RotatedGaussianMPA,
    fit_gaussianizer,
    rotated_gaussian_mpa,
)
from .linear import (
    LinearMixing,
    RotationParam,
    recover_linear_gaussian,
    signed_perm_distance,
    sparsest_rotation,
    whiten,
)
from .metrics import EvalReport, assign, correlation_matrix, mcc
from .support import (
    IndexSubset,
    SupportPattern,
    binary_rank,
    compute_support,
    function_support,
    in_subspace,
    overlap,
)
from .training import TrainConfig, TrainHistory, log_likelihood, objective, ortho_reg, train

__all__ = [
    "ConditionReport",
    "CouplingFlow",
    "EvalReport",
    "GaussianPrior",
    "Gaussianizer",
    "IndexSubset",
    "LinearMixing",
    "RotatedGaussianMPA",
    "RotationParam",
    "SupportPattern",
    "TrainConfig",
    "TrainHistory",
    "assign",
    "binary_rank",
    "check_intersection_condition",
    "check_span_condition",
    "check_sparsity_budget",
    "check_undercomplete_condition",
    "compute_support",
    "correlation_matrix",
    "fit_gaussianizer",
    "function_support",
    "in_subspace",
    "log_likelihood",
    "mcc",
    "objective",
    "ortho_reg",
    "overlap",
    "recover_linear_gaussian",
    "rotated_gaussian_mpa",
    "signed_perm_distance",
    "sparsest_rotation",
    "train",
    "whiten",
]
