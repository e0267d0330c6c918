"""Predictive, causal and hybrid losses."""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from hybrid_ode.autodiff import Tensor, ops
from hybrid_ode.autodiff.tape import ArrayLike
from hybrid_ode.core.exceptions import ConfigError, InputError, NumericError, ShapeError

from .models import ScoreFn, SoftmaxDist

logger = logging.getLogger(__name__)


def predictive_loss(y_hat: ArrayLike, y: ArrayLike) -> Tensor:
    """
    Squared error summed over all time points and sequences.

    The sum is divided by the total number of observed points, so duplicating a
    batch leaves the loss unchanged.

    Raises:
        ShapeError: If prediction and target shapes differ

    """
    pred = ops.as_tensor(y_hat)
    target = ops.constant(y)
    if pred.shape != target.shape:
        msg = f"Prediction shape {pred.shape} does not match target shape {target.shape}"
        raise ShapeError(msg)
    if target.size == 0:
        msg = "Cannot compute a loss over zero points"
        raise InputError(msg)
    residual = pred - target
    return ops.tsum(residual * residual) / float(target.size)


def score(trajectory: ArrayLike, fn: ScoreFn | None = None) -> Tensor:
    """Score a trajectory (mean by default)."""
    return (fn or ScoreFn())(trajectory)


def causal_effect(y_i: ArrayLike, y_base: ArrayLike, fn: ScoreFn | None = None) -> float:
    """
    Estimated effect of an intervention relative to a base trajectory.

    Raises:
        ShapeError: If the trajectories differ in length

    """
    a, b = ops.constant(y_i), ops.constant(y_base)
    if a.shape != b.shape:
        msg = f"Trajectory lengths differ: {a.shape} vs {b.shape}"
        raise ShapeError(msg)
    return score(a, fn).item() - score(b, fn).item()


def _check_temperature(phi: float) -> None:
    if not phi > 0.0:
        msg = f"Softmax temperature must be positive, got {phi}"
        raise ConfigError(msg)


def softmax_dist(scores: ArrayLike, phi: float = 1.0, label: Optional[int] = None) -> SoftmaxDist:
    """
    Softmax of ``phi * scores`` along the last axis with max subtraction.

    Args:
        scores: Scores of shape (K,) or (n_sets, K)
        phi: Temperature; larger values sharpen toward the argmax
        label: Optional true label carried with the distribution

    Raises:
        ConfigError: If phi is not positive
        NumericError: If a score is non-finite

    """
    _check_temperature(phi)
    u = ops.as_tensor(scores)
    if not np.all(np.isfinite(u.value)):
        msg = "Scores contain non-finite values"
        raise NumericError(msg)
    scaled = u * phi
    norm = ops.logsumexp(scaled, axis=-1)
    if u.ndim == 2:
        norm = ops.reshape(norm, (u.shape[0], 1))
    return SoftmaxDist(log_probs=scaled - norm, temperature=float(phi), label=label)


def causal_loss(dist: SoftmaxDist, label: int | None = None) -> Tensor:
    """
    Cross-entropy of a single softmax distribution against its true label.

    Raises:
        InputError: If the label is missing or out of range

    """
    target = dist.label if label is None else label
    K = dist.log_probs.shape[-1]
    if target is None or not 0 <= target < K:
        msg = f"True label {target} outside [0, {K})"
        raise InputError(msg)
    return -dist.log_probs[target]


def causal_loss_batch(scores: ArrayLike, labels: ArrayLike, phi: float = 1.0) -> Tensor:
    """
    Causal loss averaged over intervention sets.

    Args:
        scores: (n_sets, K) scores of each set's variants
        labels: (n_sets,) true labels
        phi: Softmax temperature

    Raises:
        ShapeError: If the label count does not match the number of sets
        InputError: If a label is out of range

    """
    dist = softmax_dist(scores, phi)
    log_probs = dist.log_probs
    idx = np.asarray(labels, dtype=int).reshape(-1)
    if log_probs.ndim != 2 or log_probs.shape[0] != len(idx):
        msg = f"{len(idx)} labels for scores of shape {log_probs.shape}"
        raise ShapeError(msg)
    if np.any(idx < 0) or np.any(idx >= log_probs.shape[1]):
        msg = f"Labels must lie in [0, {log_probs.shape[1]})"
        raise InputError(msg)
    picked = log_probs[np.arange(len(idx)), idx]
    return -ops.tmean(picked)


def hybrid_loss(pred_loss: ArrayLike, causal: ArrayLike | None, alpha: float) -> Tensor:
    """
    Convex combination (1 - alpha) * pred_loss + alpha * causal.

    ``causal`` may be None when alpha is 0.

    Raises:
        ConfigError: If alpha is outside [0, 1] or a needed term is missing

    """
    if not 0.0 <= alpha <= 1.0:
        msg = f"alpha must lie in [0, 1], got {alpha}"
        raise ConfigError(msg)
    if alpha == 0.0:
        return ops.as_tensor(pred_loss) * 1.0
    if causal is None:
        msg = "Causal loss is required when alpha > 0"
        raise ConfigError(msg)
    if alpha == 1.0:
        return ops.as_tensor(causal) * 1.0
    return ops.as_tensor(pred_loss) * (1.0 - alpha) + ops.as_tensor(causal) * alpha


def classify(scores: ArrayLike) -> int:
    """
    Index of the largest score; ties go to the lowest index.

    Raises:
        InputError: If there are no scores

    """
    values = ops.constant(scores).reshape(-1)
    if values.size == 0:
        msg = "Cannot classify an empty score vector"
        raise InputError(msg)
    return int(np.argmax(values))
