"""Optimal-transport fairness regularization for logistic regression."""

from .constraints import ConstraintMatrix, build, build_pdp, build_peo, concat, restrict_to_batch
from .cost import CostMatrix, batch_cost, euclidean_cost
from .data import (
    Schema, SyntheticSpec, TabularDataset, generate_synthetic, load_csv, load_saved, save,
    train_test_split,
)
from .errors import (
    ConfigError, DataError, DegenerateGroupError, DimensionError, InfeasibleError, NumericError,
    OTFError, TrainingError,
)
from .evaluation import MetricsReport, aggregate_sweep, auc, evaluate, pdp_violation, peo_violation
from .lp import otf_lp
from .solver import (
    SolverConfig, adjusted_otf, recover_coupling, solve_adjusted, solve_otfe, solve_otfre,
)
from .trainer import LogisticModel, TrainConfig, postprocess, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ConstraintMatrix", "CostMatrix", "DataError", "DegenerateGroupError",
    "DimensionError", "InfeasibleError", "LogisticModel", "MetricsReport", "NumericError",
    "OTFError", "Schema", "SolverConfig", "SyntheticSpec", "TabularDataset", "TrainConfig",
    "TrainingError", "adjusted_otf", "aggregate_sweep", "auc", "batch_cost", "build",
    "build_pdp", "build_peo", "concat", "euclidean_cost", "evaluate", "generate_synthetic",
    "load_csv", "load_saved", "otf_lp", "pdp_violation", "peo_violation", "postprocess",
    "recover_coupling", "restrict_to_batch", "save", "solve_adjusted", "solve_otfe",
    "solve_otfre", "train", "train_test_split",
]
