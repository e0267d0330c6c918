"""Predictive, causal-ranking and hybrid losses."""

from .models import InterventionSet, ScoreFn, ScoreKind, SoftmaxDist
from .objectives import (
    causal_effect,
    causal_loss,
    causal_loss_batch,
    classify,
    hybrid_loss,
    predictive_loss,
    score,
    softmax_dist,
)

__all__ = [
    "InterventionSet",
    "ScoreFn",
    "ScoreKind",
    "SoftmaxDist",
    "causal_effect",
    "causal_loss",
    "causal_loss_batch",
    "classify",
    "hybrid_loss",
    "predictive_loss",
    "score",
    "softmax_dist",
]
