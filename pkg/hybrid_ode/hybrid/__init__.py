"""Hybrid mechanistic and neural sequence models."""

from .config import GRAPH_VARIANTS, LATENT_VARIANTS, MECH_VARIANTS, SWITCHES, HybridConfig, Variant, variant_config
from .fields import euler_rollout, latent_step, masked_nn_field, masked_specs
from .model import (
    MODEL_SCHEMA,
    Encoded,
    HybridModel,
    LstmBaseline,
    ModelRecord,
    SequenceModel,
    TrainedModel,
    build_model,
    check_param_cap,
    param_count,
)

__all__ = [
    "GRAPH_VARIANTS",
    "LATENT_VARIANTS",
    "MECH_VARIANTS",
    "MODEL_SCHEMA",
    "SWITCHES",
    "Encoded",
    "HybridConfig",
    "HybridModel",
    "LstmBaseline",
    "ModelRecord",
    "SequenceModel",
    "TrainedModel",
    "Variant",
    "build_model",
    "check_param_cap",
    "euler_rollout",
    "latent_step",
    "masked_nn_field",
    "masked_specs",
    "param_count",
    "variant_config",
]
