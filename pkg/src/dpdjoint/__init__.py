"""Robust sparse joint modeling of a continuous and a binary response by
minimum density power divergence."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    DegenerateAxisError,
    InitializationError,
    InvalidParameterError,
    NumericalConsistencyError,
    RankDeficiencyError,
    SelectionError,
)
from .model import Dataset, DPDConfig, ModelParams, joint_density, predict, predict_batch  # noqa: E402
from .loss import dpd_gradient, dpd_loss, penalized_objective  # noqa: E402
from .optimizer import FitResult, OptimizerConfig, fit  # noqa: E402
from .variance import pse_sigma, refresh_sigma  # noqa: E402
from .asymptotics import compute_J, compute_K, sandwich_cov, standard_errors  # noqa: E402
from .selection import grid_search, make_grid, ric  # noqa: E402

__all__ = [
    "ConfigError",
    "DegenerateAxisError",
    "InitializationError",
    "InvalidParameterError",
    "NumericalConsistencyError",
    "RankDeficiencyError",
    "SelectionError",
    "Dataset",
    "DPDConfig",
    "ModelParams",
    "joint_density",
    "predict",
    "predict_batch",
    "dpd_loss",
    "dpd_gradient",
    "penalized_objective",
    "FitResult",
    "OptimizerConfig",
    "fit",
    "pse_sigma",
    "refresh_sigma",
    "compute_J",
    "compute_K",
    "sandwich_cov",
    "standard_errors",
    "grid_search",
    "make_grid",
    "ric",
]
