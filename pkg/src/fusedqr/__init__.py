"""Change-point detection in linear models by (adaptive) fused quantile
regression.

The package estimates per-observation regression coefficients under a
fused group penalty on consecutive differences, reads change-points off
the exactly-sparse difference variables, and optionally re-runs the fit
with data-driven adaptive weights that relax shrinkage at likely breaks.
"""

from .model import (
    ChangePointSet,
    CoefficientPath,
    Dataset,
    ErrorDistribution,
    ScenarioSpec,
    TrueSegmentation,
    beta_from_theta,
    build_paper_scenario,
    build_stock_scenario,
    load_dataset_csv,
    sample_dataset,
    theta_from_beta,
    write_dataset_csv,
)
from .objective import PenaltySpec, check_loss, objective, quantile_process
from .solver import (
    FitResult,
    SolverConfig,
    kkt_residuals,
    lp_oracle_p1,
    prox_check_loss,
    prox_group_norm,
    solve,
)

__version__ = "0.1.0"

__all__ = [
    "ChangePointSet",
    "CoefficientPath",
    "Dataset",
    "ErrorDistribution",
    "FitResult",
    "PenaltySpec",
    "ScenarioSpec",
    "SolverConfig",
    "TrueSegmentation",
    "beta_from_theta",
    "build_paper_scenario",
    "build_stock_scenario",
    "check_loss",
    "kkt_residuals",
    "load_dataset_csv",
    "lp_oracle_p1",
    "objective",
    "prox_check_loss",
    "prox_group_norm",
    "quantile_process",
    "sample_dataset",
    "solve",
    "theta_from_beta",
    "write_dataset_csv",
]
