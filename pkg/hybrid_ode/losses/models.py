"""Score functions, intervention sets and softmax distributions."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field

from hybrid_ode.autodiff import Tensor, ops
from hybrid_ode.autodiff.tape import ArrayLike
from hybrid_ode.core.exceptions import InputError, ShapeError


class ScoreKind(str, Enum):
    """Summary of a predicted trajectory over the prediction window."""

    MEAN = "mean"
    MAX = "max"
    MIN = "min"


class ScoreFn(BaseModel):
    """
    Score of a trajectory, reduced over its last axis.

    Example:
        ```python
        ScoreFn(kind="max")(np.array([1.0, 3.0, 2.0])).item()  # 3.0
        ```

    """

    kind: ScoreKind = Field(ScoreKind.MEAN, description="Reduction over time")

    model_config = {"frozen": True, "extra": "forbid"}

    def __call__(self, trajectory: ArrayLike) -> Tensor:
        """
        Score one trajectory or a stack of trajectories.

        Raises:
            InputError: If the time axis is empty

        """
        t = ops.as_tensor(trajectory)
        if t.ndim == 0 or t.shape[-1] == 0:
            msg = "Cannot score an empty trajectory"
            raise InputError(msg)
        if self.kind is ScoreKind.MEAN:
            return ops.tmean(t, axis=-1)
        if self.kind is ScoreKind.MAX:
            return ops.tmax(t, axis=-1)
        return ops.tmin(t, axis=-1)


@dataclass(frozen=True)
class InterventionSet:
    """
    K alternative future control blocks for one episode.

    ``variants`` has shape (K, q, n_inputs). ``true_label`` indexes the variant
    with the largest ground-truth score.
    """

    episode_id: str
    variants: np.ndarray
    true_label: int
    category: str

    def __post_init__(self) -> None:
        """Check the variant block and the label."""
        variants = np.asarray(self.variants, dtype=np.float64)
        if variants.ndim != 3:
            msg = f"variants must be (K, q, n_inputs), got shape {variants.shape}"
            raise ShapeError(msg)
        if variants.shape[0] < 2:
            msg = f"An intervention set needs K >= 2 variants, got {variants.shape[0]}"
            raise InputError(msg)
        if not 0 <= self.true_label < variants.shape[0]:
            msg = f"true_label {self.true_label} outside [0, {variants.shape[0]})"
            raise InputError(msg)
        object.__setattr__(self, "variants", variants)

    @property
    def K(self) -> int:
        """Number of variants."""
        return int(self.variants.shape[0])

    def with_label(self, label: int) -> InterventionSet:
        """Return a copy with another label."""
        return InterventionSet(self.episode_id, self.variants, int(label), self.category)


@dataclass(frozen=True)
class SoftmaxDist:
    """
    Softmax over intervention scores at temperature ``phi``.

    ``log_probs`` stays on the tape so the causal loss can be differentiated.
    """

    log_probs: Tensor
    temperature: float
    label: Optional[int] = None

    @property
    def probabilities(self) -> np.ndarray:
        """Probability vector (or one row per set)."""
        return np.exp(self.log_probs.value)
