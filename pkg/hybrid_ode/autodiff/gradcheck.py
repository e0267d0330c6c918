"""Central finite differences used to check reverse-mode gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from hybrid_ode.core.exceptions import ConfigError, NumericError

from .params import ParamVector


def finite_diff_grad(
    f: Callable[[ParamVector], float],
    params: ParamVector,
    h: float = 1e-5,
    indices: np.ndarray | None = None,
) -> np.ndarray:
    """
    Approximate the gradient of ``f`` by central differences.

    Args:
        f: Deterministic scalar function of the parameters
        params: Point of evaluation
        h: Step size
        indices: Optional subset of coordinates; the others are left at 0

    Returns:
        Gradient estimate with the parameter vector's length

    Raises:
        ConfigError: If h is not positive
        NumericError: If an evaluation is non-finite

    """
    if h <= 0:
        msg = f"Step size must be positive, got {h}"
        raise ConfigError(msg)
    coords = np.arange(len(params)) if indices is None else np.asarray(indices)
    grad = np.zeros(len(params))
    shifted = params.copy()
    for i in coords:
        base = shifted.values[i]
        shifted.values[i] = base + h
        upper = float(f(shifted))
        shifted.values[i] = base - h
        lower = float(f(shifted))
        shifted.values[i] = base
        if not (np.isfinite(upper) and np.isfinite(lower)):
            msg = f"Non-finite function value while probing coordinate {i}"
            raise NumericError(msg)
        grad[i] = (upper - lower) / (2.0 * h)
    return grad


def relative_errors(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """
    Elementwise relative error between two gradients.

    Coordinates where both magnitudes are below ``floor`` report 0.
    """
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    err = np.abs(analytic - numeric) / np.where(scale > 0, scale, 1.0)
    return np.where(scale < floor, 0.0, err)
