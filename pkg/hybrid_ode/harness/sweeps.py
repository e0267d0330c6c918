"""Temperature and label-corruption experiments."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from hybrid_ode.core.exceptions import ConfigError, InputError
from hybrid_ode.datakit import CorruptionConfig, Episode, corrupt_sets
from hybrid_ode.hybrid import HybridConfig
from hybrid_ode.losses import InterventionSet

from .config import CvConfig, GridSpec, TrainConfig
from .cv import RunReport, nested_cv
from .training import train_variant

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SweepPoint:
    """Outcome of a short training run at one softmax temperature."""

    phi: float
    final_loss: float
    grad_norm: float
    best_val: float


def temperature_sweep(
    model_cfg: HybridConfig,
    train_eps: list[Episode],
    val_eps: list[Episode],
    iv_sets: list[InterventionSet],
    phis: Sequence[float],
    cfg: TrainConfig,
) -> list[SweepPoint]:
    """
    Train briefly at each temperature and report the last epoch's loss and gradient norm.

    Raises:
        InputError: If no temperatures are given
        ConfigError: If ``cfg.alpha`` is 0, which makes the temperature irrelevant

    """
    if not phis:
        msg = "Temperature sweep needs at least one phi"
        raise InputError(msg)
    if cfg.alpha == 0.0:
        msg = "Temperature sweep needs alpha > 0"
        raise ConfigError(msg)
    points = []
    for phi in phis:
        result = train_variant(model_cfg, train_eps, val_eps, cfg.model_copy(update={"phi": float(phi)}), iv_sets)
        last = result.history[-1]
        points.append(SweepPoint(float(phi), last.train_loss, last.grad_norm, result.best_val))
        logger.info("phi=%g: loss %.6g, |g| %.3g", phi, last.train_loss, last.grad_norm)
    return points


def corruption_sweep(
    episodes: list[Episode],
    iv_sets: list[InterventionSet],
    grid: GridSpec,
    cv: CvConfig,
    cfg: TrainConfig,
    rates: Sequence[float] = (0.0, 0.05, 0.10, 0.20),
    alphas: Sequence[float] = (0.0, 0.1),
    seed: int | None = None,
    run_dir: str | Path | None = None,
    jobs: int = 1,
) -> dict[tuple[float, float], RunReport]:
    """
    Nested cross-validation for every (corruption rate, alpha) pair.

    Training and selection see corrupted labels; test folds are scored against
    the clean labels.
    """
    if not rates or not alphas:
        msg = "Corruption sweep needs at least one rate and one alpha"
        raise InputError(msg)
    reports: dict[tuple[float, float], RunReport] = {}
    for rate in rates:
        noisy = corrupt_sets(iv_sets, CorruptionConfig(rate=rate, seed=cv.seed if seed is None else seed))
        for alpha in alphas:
            name = f"rho{rate:g}_alpha{alpha:g}"
            sub_dir = None if run_dir is None else Path(run_dir) / name
            reports[(float(rate), float(alpha))] = nested_cv(
                episodes,
                grid,
                cv,
                cfg.model_copy(update={"alpha": float(alpha)}),
                iv_sets=noisy,
                test_iv_sets=iv_sets,
                name=name,
                run_dir=sub_dir,
                jobs=jobs,
            )
    return reports
