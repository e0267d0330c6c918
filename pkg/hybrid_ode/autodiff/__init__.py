"""Reverse-mode differentiation, parameter storage, layers and optimization."""

from . import tape as ops
from .gradcheck import finite_diff_grad, relative_errors
from .layers import LstmOutput, LstmSpec, MlpSpec, lstm_cell, lstm_forward, mlp_forward
from .optim import AdamState, adam_step
from .params import (
    MECHANISTIC_VARIANCE,
    InitScheme,
    ParamLayout,
    ParamVector,
    ParamVectorRecord,
    SeededRng,
    SegmentSpec,
    init_params,
)
from .tape import AdjointTape, Tensor, active_tape, reverse_grad

__all__ = [
    "MECHANISTIC_VARIANCE",
    "AdamState",
    "AdjointTape",
    "InitScheme",
    "LstmOutput",
    "LstmSpec",
    "MlpSpec",
    "ParamLayout",
    "ParamVector",
    "ParamVectorRecord",
    "SeededRng",
    "SegmentSpec",
    "Tensor",
    "active_tape",
    "adam_step",
    "finite_diff_grad",
    "init_params",
    "lstm_cell",
    "lstm_forward",
    "mlp_forward",
    "ops",
    "relative_errors",
    "reverse_grad",
]
