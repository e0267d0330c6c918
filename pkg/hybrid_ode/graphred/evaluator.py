"""Validation-loss evaluator that scores a candidate graph with a briefly trained MNODE."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Optional

from hybrid_ode.datakit import Episode
from hybrid_ode.harness import TrainConfig, train_variant
from hybrid_ode.hybrid import Variant, variant_config
from hybrid_ode.losses import InterventionSet

from .graph import DiGraph

logger = logging.getLogger(__name__)

SEARCH_ALPHA = 0.6
SEARCH_EPOCHS = 20


def search_train_config(**overrides: Any) -> TrainConfig:
    """Training settings of the graph search: alpha 0.6 and a 20-epoch budget."""
    fields: dict[str, Any] = {"alpha": SEARCH_ALPHA, "epochs": SEARCH_EPOCHS}
    fields.update(overrides)
    return TrainConfig(**fields)


@dataclass(frozen=True)
class MnodeEvaluator:
    """
    Train an MNODE masked by the candidate graph and return its best validation loss.

    Instances are picklable so candidate rounds can run in worker processes.
    """

    train_eps: list[Episode]
    val_eps: list[Episode]
    iv_sets: Optional[list[InterventionSet]] = None
    cfg: TrainConfig = field(default_factory=search_train_config)
    model_overrides: dict[str, Any] = field(default_factory=dict)

    def __call__(self, graph: DiGraph) -> float:
        """
        Validation hybrid loss of an MNODE on ``graph``.

        Raises:
            ConfigError: If the graph does not give a valid MNODE
            TrainingError: If training diverges

        """
        ep = self.train_eps[0]
        causal = graph.to_causal(ep.input_names)
        model_cfg = variant_config(Variant.MNODE, ep.input_names, ep.horizon, graph=causal, **self.model_overrides)
        cfg = self.cfg if self.iv_sets else self.cfg.model_copy(update={"alpha": 0.0})
        result = train_variant(model_cfg, self.train_eps, self.val_eps, cfg, self.iv_sets)
        logger.debug("MNODE on %s: validation loss %.6g", graph.digest()[:12], result.best_val)
        return result.best_val
