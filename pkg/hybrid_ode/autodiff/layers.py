"""MLP and LSTM primitives evaluated from flat parameter segments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, Field

from hybrid_ode.core.exceptions import InputError, NumericError, ShapeError

from . import tape as ops
from .params import SeededRng, fan_in_bounds
from .tape import ArrayLike, Tensor


class MlpSpec(BaseModel):
    """
    Fully connected network with ReLU hidden layers.

    ``hidden_layers = 0`` is a plain affine map; models built from grids always
    use at least one hidden layer.
    """

    in_dim: int = Field(..., ge=0, description="Input width")
    hidden_layers: int = Field(1, ge=0, description="Number of hidden layers n")
    hidden_units: int = Field(16, ge=1, description="Units per hidden layer m")
    out_dim: int = Field(..., ge=1, description="Output width")
    dropout: float = Field(0.0, ge=0.0, lt=1.0, description="Dropout probability p")

    model_config = {"extra": "forbid", "frozen": True}

    def layer_dims(self) -> list[tuple[int, int]]:
        """Return (fan_in, fan_out) per affine layer."""
        widths = [self.in_dim] + [self.hidden_units] * self.hidden_layers + [self.out_dim]
        return list(zip(widths[:-1], widths[1:]))

    @property
    def weight_count(self) -> int:
        """Number of scalars (weights and biases)."""
        return sum(i * o + o for i, o in self.layer_dims())

    def init_bounds(self) -> np.ndarray:
        """Per-entry fan-in bounds in segment order."""
        return np.concatenate(
            [fan_in_bounds(i, i * o + o) for i, o in self.layer_dims()],
        )


class LstmSpec(BaseModel):
    """Stacked LSTM with gate order input, forget, candidate, output."""

    layers: int = Field(1, ge=1, description="Number of stacked layers")
    in_dim: int = Field(..., ge=1, description="Input width")
    hidden_dim: int = Field(..., ge=1, description="Hidden width d")
    dropout: float = Field(0.0, ge=0.0, lt=1.0, description="Dropout between layers")

    model_config = {"extra": "forbid", "frozen": True}

    def layer_sizes(self) -> list[int]:
        """Scalar count per layer (W_ih, W_hh and one bias)."""
        d = self.hidden_dim
        sizes = []
        for layer in range(self.layers):
            width = self.in_dim if layer == 0 else d
            sizes.append(width * 4 * d + d * 4 * d + 4 * d)
        return sizes

    @property
    def weight_count(self) -> int:
        """Number of scalars across all layers."""
        return sum(self.layer_sizes())

    def init_bounds(self) -> np.ndarray:
        """Uniform bounds of 1/sqrt(hidden_dim) for every entry."""
        return fan_in_bounds(self.hidden_dim, self.weight_count)


@dataclass(frozen=True)
class LstmOutput:
    """Final per-layer states and top-layer outputs of an LSTM pass."""

    h: list[Tensor]
    c: list[Tensor]
    outputs: list[Tensor]

    @property
    def top_h(self) -> Tensor:
        """Hidden state of the top layer."""
        return self.h[-1]

    @property
    def top_c(self) -> Tensor:
        """Cell state of the top layer."""
        return self.c[-1]


def _check_weights(weights: Tensor, expected: int, what: str) -> None:
    if weights.ndim != 1 or weights.shape[0] != expected:
        msg = f"{what} expects {expected} weights, got shape {weights.shape}"
        raise ShapeError(msg)


def _dropout(x: Tensor, p: float, training: bool, rng: SeededRng | None) -> Tensor:
    if not training or p == 0.0:
        return x
    if rng is None:
        msg = "training with dropout requires a random stream"
        raise InputError(msg)
    keep = rng.uniform(0.0, 1.0, x.shape) >= p
    return x * (keep / (1.0 - p))


def mlp_forward(
    spec: MlpSpec,
    weights: ArrayLike,
    x: ArrayLike,
    training: bool = False,
    rng: SeededRng | None = None,
) -> Tensor:
    """
    Evaluate an MLP.

    Each affine layer reads its weight matrix (fan_in x fan_out, row-major) then
    its bias from the flat segment.

    Args:
        spec: Network shape
        weights: Flat weight segment
        x: Input of shape (in_dim,) or (batch, in_dim)
        training: Enable dropout
        rng: Random stream for dropout masks

    Returns:
        Output of shape (out_dim,) or (batch, out_dim)

    Raises:
        ShapeError: If the input or segment length does not match the spec
        NumericError: If the input is non-finite

    """
    w = ops.as_tensor(weights)
    _check_weights(w, spec.weight_count, "MLP")
    h = ops.as_tensor(x)
    if h.shape[-1:] != (spec.in_dim,) or h.ndim > 2:
        msg = f"MLP input width {h.shape} does not match in_dim={spec.in_dim}"
        raise ShapeError(msg)
    if not np.all(np.isfinite(h.value)):
        msg = "MLP input contains non-finite values"
        raise NumericError(msg)

    dims = spec.layer_dims()
    offset = 0
    for k, (fan_in, fan_out) in enumerate(dims):
        W = ops.reshape(w[offset : offset + fan_in * fan_out], (fan_in, fan_out))
        offset += fan_in * fan_out
        b = w[offset : offset + fan_out]
        offset += fan_out
        h = ops.matmul(h, W) + b
        if k < len(dims) - 1:
            h = _dropout(ops.relu(h), spec.dropout, training, rng)
    return h


def lstm_cell(
    x: Tensor,
    h: Tensor,
    c: Tensor,
    W_ih: Tensor,
    W_hh: Tensor,
    b: Tensor,
) -> tuple[Tensor, Tensor]:
    """One LSTM step on a (batch, width) input."""
    d = h.shape[-1]
    z = ops.matmul(x, W_ih) + ops.matmul(h, W_hh) + b
    i = ops.sigmoid(z[:, 0:d])
    f = ops.sigmoid(z[:, d : 2 * d])
    g = ops.tanh(z[:, 2 * d : 3 * d])
    o = ops.sigmoid(z[:, 3 * d : 4 * d])
    c_next = f * c + i * g
    return o * ops.tanh(c_next), c_next


def lstm_forward(
    spec: LstmSpec,
    weights: ArrayLike,
    sequence: ArrayLike,
    initial: tuple[list[Tensor], list[Tensor]] | None = None,
    training: bool = False,
    rng: SeededRng | None = None,
) -> LstmOutput:
    """
    Run a stacked LSTM over a sequence.

    Args:
        spec: Network shape
        weights: Flat weight segment (per layer: W_ih, W_hh, bias)
        sequence: Array of shape (T, in_dim) or (T, batch, in_dim)
        initial: Optional per-layer (h, c) lists; zeros when omitted
        training: Enable dropout between layers
        rng: Random stream for dropout masks

    Returns:
        Final per-layer (h, c) and top-layer outputs per step

    Raises:
        InputError: If the sequence is empty
        ShapeError: If widths do not match the spec

    """
    w = ops.as_tensor(weights)
    _check_weights(w, spec.weight_count, "LSTM")
    seq = ops.as_tensor(sequence)
    if seq.ndim == 0 or seq.shape[0] == 0:
        msg = "LSTM sequence is empty"
        raise InputError(msg)
    batched = seq.ndim == 3
    if not batched:
        seq = ops.reshape(seq, (seq.shape[0], 1, seq.shape[-1]))
    if seq.shape[-1] != spec.in_dim:
        msg = f"LSTM input width {seq.shape[-1]} does not match in_dim={spec.in_dim}"
        raise ShapeError(msg)

    d = spec.hidden_dim
    batch = seq.shape[1]
    layers: list[tuple[Tensor, Tensor, Tensor]] = []
    offset = 0
    for layer in range(spec.layers):
        width = spec.in_dim if layer == 0 else d
        W_ih = ops.reshape(w[offset : offset + width * 4 * d], (width, 4 * d))
        offset += width * 4 * d
        W_hh = ops.reshape(w[offset : offset + d * 4 * d], (d, 4 * d))
        offset += d * 4 * d
        b = w[offset : offset + 4 * d]
        offset += 4 * d
        layers.append((W_ih, W_hh, b))

    if initial is None:
        hs = [Tensor(np.zeros((batch, d))) for _ in range(spec.layers)]
        cs = [Tensor(np.zeros((batch, d))) for _ in range(spec.layers)]
    else:
        hs, cs = list(initial[0]), list(initial[1])

    outputs: list[Tensor] = []
    for t in range(seq.shape[0]):
        inp = seq[t]
        for layer, (W_ih, W_hh, b) in enumerate(layers):
            if layer > 0:
                inp = _dropout(inp, spec.dropout, training, rng)
            hs[layer], cs[layer] = lstm_cell(inp, hs[layer], cs[layer], W_ih, W_hh, b)
            inp = hs[layer]
        outputs.append(inp)

    if not batched:
        hs = [ops.reshape(h, (d,)) for h in hs]
        cs = [ops.reshape(c, (d,)) for c in cs]
        outputs = [ops.reshape(o, (d,)) for o in outputs]
    return LstmOutput(h=hs, c=cs, outputs=outputs)
