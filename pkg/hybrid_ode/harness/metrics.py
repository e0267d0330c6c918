"""Error summaries over cross-validation folds."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field
from sklearn.metrics import mean_squared_error

from hybrid_ode.core.exceptions import InputError, ShapeError

PERCENTILES = (10, 50, 90)


def rmse(pred: np.ndarray, target: np.ndarray) -> float:
    """
    Root mean squared error over every point.

    Raises:
        ShapeError: If the shapes differ

    """
    p, t = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        msg = f"Prediction shape {p.shape} does not match target shape {t.shape}"
        raise ShapeError(msg)
    return float(np.sqrt(mean_squared_error(t.reshape(-1), p.reshape(-1))))


def _values(values: Sequence[float]) -> np.ndarray:
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        msg = "Cannot summarize an empty error list"
        raise InputError(msg)
    return arr


def mean_stderr(values: Sequence[float]) -> tuple[float, float]:
    """Mean and standard error (sample standard deviation over sqrt(n); 0 for one value)."""
    arr = _values(values)
    if arr.size == 1:
        return float(arr[0]), 0.0
    return float(arr.mean()), float(arr.std(ddof=1) / np.sqrt(arr.size))


def percentiles(values: Sequence[float], qs: Sequence[float] = PERCENTILES) -> dict[str, float]:
    """
    Percentiles with linear interpolation between order statistics.

    The q-th percentile of sorted values v_0..v_{n-1} is read at position
    q/100 * (n - 1).
    """
    arr = _values(values)
    return {str(int(q)) if float(q).is_integer() else str(q): float(np.percentile(arr, q, method="linear")) for q in qs}


def classification_error(predicted: Sequence[int], labels: Sequence[int]) -> float:
    """Fraction of wrong argmax decisions."""
    p, t = np.asarray(list(predicted)), np.asarray(list(labels))
    if p.size == 0:
        msg = "Cannot score an empty set of decisions"
        raise InputError(msg)
    if p.shape != t.shape:
        msg = f"{p.size} predictions for {t.size} labels"
        raise ShapeError(msg)
    return float(np.mean(p != t))


class ErrorSummary(BaseModel):
    """Aggregates over the outer folds of a run."""

    rmse_mean: float = Field(..., description="Mean test RMSE in original units")
    rmse_stderr: float = Field(..., description="Standard error of the test RMSE")
    class_error_percentiles: Optional[dict[str, float]] = Field(None, description="10/50/90th percentiles")
    class_error_mean: Optional[float] = Field(None, description="Mean classification error")


def summarize(rmses: Sequence[float], class_errors: Sequence[float] | None = None) -> ErrorSummary:
    """
    Summarize per-fold errors.

    Raises:
        InputError: If there are no RMSE values

    """
    mean, stderr = mean_stderr(rmses)
    if not class_errors:
        return ErrorSummary(rmse_mean=mean, rmse_stderr=stderr)
    return ErrorSummary(
        rmse_mean=mean,
        rmse_stderr=stderr,
        class_error_percentiles=percentiles(class_errors),
        class_error_mean=float(np.mean(class_errors)),
    )
