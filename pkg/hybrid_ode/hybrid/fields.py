"""Neural vector fields, latent dynamics and the forward-Euler rollout."""

from __future__ import annotations

import logging
from typing import Callable, Optional

import numpy as np

from hybrid_ode.autodiff import MlpSpec, SeededRng, Tensor, mlp_forward, ops
from hybrid_ode.autodiff.tape import ArrayLike
from hybrid_ode.core.exceptions import DivergenceError, ShapeError
from hybrid_ode.mech import CausalGraph

logger = logging.getLogger(__name__)

StepFn = Callable[[int, Tensor, Optional[Tensor]], tuple[Tensor, Optional[Tensor]]]


def masked_specs(
    graph: CausalGraph,
    hidden_layers: int,
    hidden_units: int,
    dropout: float = 0.0,
    extra_inputs: int = 0,
) -> list[MlpSpec]:
    """
    One scalar-output MLP per state, reading only the state's permitted parents.

    Raises:
        ConfigError: If some state has no permitted parent

    """
    graph.require_drivers()
    specs = []
    for i in range(graph.n_states):
        states, inputs = graph.permitted(i)
        specs.append(
            MlpSpec(
                in_dim=len(states) + len(inputs) + extra_inputs,
                hidden_layers=hidden_layers,
                hidden_units=hidden_units,
                out_dim=1,
                dropout=dropout,
            ),
        )
    return specs


def masked_nn_field(
    graph: CausalGraph,
    specs: list[MlpSpec],
    weights: ArrayLike,
    s: ArrayLike,
    x: ArrayLike,
    z: ArrayLike | None = None,
    training: bool = False,
    rng: SeededRng | None = None,
) -> Tensor:
    """
    Derivative whose i-th coordinate is MLP_i of the permitted states and inputs.

    Args:
        graph: Mask of permitted parents
        specs: Per-state networks from :func:`masked_specs`
        weights: Concatenated weights of the per-state networks
        s: States, (batch, n_states)
        x: Inputs, (batch, n_inputs)
        z: Optional latent appended to every network's input
        training: Enable dropout
        rng: Stream for dropout masks

    Returns:
        (batch, n_states) derivative

    Raises:
        ShapeError: If widths disagree with the graph

    """
    ts, tx = ops.as_tensor(s), ops.as_tensor(x)
    if ts.ndim != 2 or ts.shape[1] != graph.n_states or tx.ndim != 2 or tx.shape[1] != graph.n_inputs:
        msg = f"Graph expects ({graph.n_states} states, {graph.n_inputs} inputs), got {ts.shape} and {tx.shape}"
        raise ShapeError(msg)
    w = ops.as_tensor(weights)
    expected = sum(spec.weight_count for spec in specs)
    if w.shape != (expected,):
        msg = f"Masked field expects {expected} weights, got {w.shape}"
        raise ShapeError(msg)
    columns = []
    offset = 0
    for i, spec in enumerate(specs):
        states, inputs = graph.permitted(i)
        parts: list[ArrayLike] = []
        if states:
            parts.append(ts[:, states])
        if inputs:
            parts.append(tx[:, inputs])
        if z is not None:
            parts.append(z)
        seg = w[offset : offset + spec.weight_count]
        offset += spec.weight_count
        columns.append(mlp_forward(spec, seg, ops.concat(parts, axis=1), training, rng))
    return ops.concat(columns, axis=1)


def latent_step(A: ArrayLike, B: ArrayLike | None, z: ArrayLike, x_sub: ArrayLike | None = None) -> Tensor:
    """
    z_next = A z + B x_sub for a batch of latents.

    Args:
        A: (d, d) transition
        B: (d, k) input map, or None when there are no latent inputs
        z: (batch, d) latents
        x_sub: (batch, k) latent inputs

    Raises:
        ShapeError: If the shapes disagree

    """
    tA, tz = ops.as_tensor(A), ops.as_tensor(z)
    if tA.ndim != 2 or tA.shape[0] != tA.shape[1] or tz.shape[-1] != tA.shape[0]:
        msg = f"Latent transition {tA.shape} does not fit latent {tz.shape}"
        raise ShapeError(msg)
    out = ops.matmul(tz, ops.transpose(tA))
    if B is None or x_sub is None or ops.as_tensor(B).size == 0:
        return out
    tB, tx = ops.as_tensor(B), ops.as_tensor(x_sub)
    if tB.shape != (tA.shape[0], tx.shape[-1]):
        msg = f"Latent input map {tB.shape} does not fit inputs {tx.shape}"
        raise ShapeError(msg)
    return out + ops.matmul(tx, ops.transpose(tB))


def euler_rollout(
    step: StepFn,
    s0: ArrayLike,
    z0: ArrayLike | None,
    steps: int,
    dt: float,
    output_state: int = 0,
) -> Tensor:
    """
    Forward-Euler integration observed through one state coordinate.

    ``step(t, s, z)`` returns the state derivative and the next latent. The
    returned predictions are the output coordinate after each of the ``steps``
    updates.

    Returns:
        (batch, steps) predictions, or (steps,) for a 1-D initial state

    Raises:
        DivergenceError: If the state or latent becomes non-finite

    """
    s = ops.as_tensor(s0)
    single = s.ndim == 1
    if single:
        s = ops.reshape(s, (1, s.shape[0]))
    z = None if z0 is None else ops.as_tensor(z0)
    if z is not None and z.ndim == 1:
        z = ops.reshape(z, (1, z.shape[0]))
    outputs = []
    for t in range(steps):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            ds, z_next = step(t, s, z)
            s = s + ds * dt
        if not np.all(np.isfinite(s.value)) or (z_next is not None and not np.all(np.isfinite(z_next.value))):
            msg = "State became non-finite"
            raise DivergenceError(msg, step=t)
        z = z_next
        outputs.append(s[:, output_state])
    y = ops.stack(outputs, axis=1)
    return ops.reshape(y, (steps,)) if single else y
