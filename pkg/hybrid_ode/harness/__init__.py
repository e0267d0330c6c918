"""Training loops, grid search, nested cross-validation and error summaries."""

from .config import CvConfig, GridSpec, TrainConfig, default_grid, default_train_config
from .cv import FoldResult, RunReport, fold_plan, grid_search, nested_cv
from .metrics import ErrorSummary, classification_error, mean_stderr, percentiles, rmse, summarize
from .sweeps import SweepPoint, corruption_sweep, temperature_sweep
from .training import (
    EpochRecord,
    HeldOutMetrics,
    TrainResult,
    batch_loss,
    evaluate,
    evaluate_loss,
    loss_and_grad,
    train,
    train_lpsc,
    train_variant,
)

__all__ = [
    "CvConfig",
    "EpochRecord",
    "ErrorSummary",
    "FoldResult",
    "GridSpec",
    "RunReport",
    "SweepPoint",
    "HeldOutMetrics",
    "TrainConfig",
    "TrainResult",
    "batch_loss",
    "classification_error",
    "corruption_sweep",
    "default_grid",
    "default_train_config",
    "evaluate",
    "evaluate_loss",
    "fold_plan",
    "grid_search",
    "loss_and_grad",
    "mean_stderr",
    "nested_cv",
    "percentiles",
    "rmse",
    "summarize",
    "temperature_sweep",
    "train",
    "train_lpsc",
    "train_variant",
]
