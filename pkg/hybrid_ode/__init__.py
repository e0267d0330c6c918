"""
hybridkit - Hybrid mechanistic/neural ODE models.

Sequence models that mix glucose-insulin simulators with neural components,
trained with a hybrid predictive and causal-ranking loss.
"""

from .core import HybridError, HybridSettings, load_settings
from .datakit import Episode, SyntheticConfig, gen_synthetic, make_intervention_sets
from .graphred import DiGraph, reduce
from .harness import CvConfig, GridSpec, RunReport, TrainConfig, nested_cv, train_variant
from .hybrid import HybridConfig, TrainedModel, Variant, build_model, variant_config
from .losses import InterventionSet, causal_loss, hybrid_loss

__version__ = "0.1.0"

__all__ = [
    "CvConfig",
    "DiGraph",
    "Episode",
    "GridSpec",
    "HybridConfig",
    "HybridError",
    "HybridSettings",
    "InterventionSet",
    "RunReport",
    "SyntheticConfig",
    "TrainConfig",
    "TrainedModel",
    "Variant",
    "build_model",
    "causal_loss",
    "gen_synthetic",
    "hybrid_loss",
    "load_settings",
    "nested_cv",
    "reduce",
    "train_variant",
    "variant_config",
]
