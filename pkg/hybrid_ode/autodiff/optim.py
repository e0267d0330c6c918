"""Adam optimizer over flat parameter vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hybrid_ode.core.exceptions import ConfigError, ShapeError

from .params import ParamVector

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    """Moment estimates and step counter of the Adam optimizer."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = 0
    lr: float = 2e-3
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def create(cls, n: int, lr: float) -> AdamState:
        """
        Create a fresh state.

        Args:
            n: Number of parameters
            lr: Learning rate

        Returns:
            AdamState with zero moments

        """
        if lr <= 0:
            msg = f"Learning rate must be positive, got {lr}"
            raise ConfigError(msg)
        return cls(first_moment=np.zeros(n), second_moment=np.zeros(n), lr=lr)


def adam_step(
    state: AdamState,
    params: ParamVector,
    grad: np.ndarray,
    frozen: np.ndarray | None = None,
) -> ParamVector:
    """
    Apply one bias-corrected Adam update.

    Args:
        state: Optimizer state, updated in place
        params: Current parameters
        grad: Gradient with the parameter vector's length
        frozen: Optional boolean mask of entries that must not move

    Returns:
        New parameter vector

    Raises:
        ShapeError: If lengths disagree

    """
    n = len(params)
    if grad.shape != (n,) or state.first_moment.shape != (n,):
        msg = f"Adam expects {n} entries, got grad {grad.shape} and moments {state.first_moment.shape}"
        raise ShapeError(msg)
    if frozen is not None:
        grad = np.where(frozen, 0.0, grad)

    state.step += 1
    state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    state.second_moment = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad * grad
    m_hat = state.first_moment / (1.0 - state.beta1**state.step)
    v_hat = state.second_moment / (1.0 - state.beta2**state.step)
    return params.with_values(params.values - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
