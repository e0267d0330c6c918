"""Single-state mechanistic model with two opposing inputs."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from hybrid_ode.autodiff import Tensor, ops
from hybrid_ode.autodiff.tape import ArrayLike
from hybrid_ode.core.exceptions import NumericError, ShapeError

SYNTHETIC_STATES: tuple[str, ...] = ("y",)


def synthetic_field(
    state: ArrayLike,
    inputs: Mapping[str, ArrayLike],
    meal: ArrayLike,
    p: Mapping[str, ArrayLike],
) -> Tensor:
    """
    dy/dt = -exp(log_k_y) y + exp(log_k_1) x1 - exp(log_k_2) x2.

    Rates are stored as logs so the sign of each input's effect is fixed by the
    equation form. All-zero log rates give the data-generating drift.

    Args:
        state: (batch, 1) or (1,) state
        inputs: ``x1`` and ``x2`` per trajectory
        meal: Unused; present for a uniform field signature
        p: ``log_k_y``, ``log_k_1`` and ``log_k_2``

    Returns:
        Time derivative with the shape of the state

    """
    s = ops.as_tensor(state)
    if s.shape[-1] != 1 or s.ndim > 2:
        msg = f"Synthetic state must have one column, got shape {s.shape}"
        raise ShapeError(msg)
    if not np.all(np.isfinite(s.value)):
        msg = "State contains non-finite values"
        raise NumericError(msg)
    y = s[..., 0]
    dy = (
        -ops.exp(p["log_k_y"]) * y
        + ops.exp(p["log_k_1"]) * ops.as_tensor(inputs["x1"])
        - ops.exp(p["log_k_2"]) * ops.as_tensor(inputs["x2"])
    )
    return ops.reshape(dy, s.shape)
