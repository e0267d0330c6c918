"""Training loops, loss evaluation and test metrics."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from hybrid_ode.autodiff import AdamState, AdjointTape, ParamVector, SeededRng, Tensor, adam_step, reverse_grad
from hybrid_ode.core.config import PARAM_CAP
from hybrid_ode.core.exceptions import ConfigError, DataError, InputError, NumericError, ShapeError, TrainingError
from hybrid_ode.datakit import Episode, EpisodeBatch, Standardizer, stack_episodes
from hybrid_ode.hybrid import HybridConfig, HybridModel, SequenceModel, TrainedModel, Variant, build_model
from hybrid_ode.losses import InterventionSet, causal_loss_batch, classify, hybrid_loss, predictive_loss

from .config import TrainConfig
from .metrics import rmse

logger = logging.getLogger(__name__)

IvIndex = dict[str, InterventionSet]


@dataclass(frozen=True)
class EpochRecord:
    """Summary of one training epoch."""

    epoch: int
    train_loss: float
    val_loss: float
    grad_norm: float
    lr: float
    divergent_batches: int


@dataclass
class TrainResult:
    """Best-validation model with its training history."""

    model: TrainedModel
    history: list[EpochRecord]
    best_epoch: int
    best_val: float
    info: dict[str, Any] = field(default_factory=dict)

    def write_history(self, path: str | Path) -> None:
        """Write the history as CSV."""
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        with target.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=[f for f in EpochRecord.__dataclass_fields__])
            writer.writeheader()
            for record in self.history:
                writer.writerow(asdict(record))


@dataclass(frozen=True)
class HeldOutMetrics:
    """Held-out errors of a trained model."""

    rmse: float
    pred_loss: float
    causal_loss: Optional[float]
    class_error: Optional[float]
    n_sets: int


def index_sets(iv_sets: list[InterventionSet] | IvIndex | None) -> IvIndex:
    """Intervention sets keyed by episode id."""
    if iv_sets is None:
        return {}
    if isinstance(iv_sets, dict):
        return dict(iv_sets)
    return {s.episode_id: s for s in iv_sets}


def _iv_block(ids: list[str], sets: IvIndex) -> tuple[np.ndarray, np.ndarray]:
    missing = [i for i in ids if i not in sets]
    if missing:
        msg = f"No intervention set for episodes {missing[:3]}"
        raise DataError(msg, field="episode_id")
    ks = {sets[i].K for i in ids}
    if len(ks) != 1:
        msg = f"Intervention sets in one batch must share K, got {sorted(ks)}"
        raise ShapeError(msg)
    return np.stack([sets[i].variants for i in ids]), np.array([sets[i].true_label for i in ids])


def batch_loss(
    model: SequenceModel,
    theta: Tensor,
    batch: EpisodeBatch,
    cfg: TrainConfig,
    sets: IvIndex,
    alpha: float,
    training: bool = False,
    rng: SeededRng | None = None,
) -> Tensor:
    """
    Hybrid loss of one batch in standardized units.

    The causal term is only evaluated when ``alpha > 0``.
    """
    pred = model.forward(theta, batch, training, rng)
    pred_loss = predictive_loss(pred, model.standardizer.apply_y(batch.targets))
    if alpha == 0.0:
        return hybrid_loss(pred_loss, None, 0.0)
    variants, labels = _iv_block(batch.ids, sets)
    scores = cfg.score(model.counterfactual(theta, batch, variants, training, rng))
    return hybrid_loss(pred_loss, causal_loss_batch(scores, labels, cfg.phi), alpha)


def loss_and_grad(
    model: SequenceModel,
    params: ParamVector,
    batch: EpisodeBatch,
    cfg: TrainConfig,
    sets: IvIndex,
    alpha: float,
    training: bool = False,
    rng: SeededRng | None = None,
) -> tuple[float, np.ndarray]:
    """Loss value and reverse-mode gradient."""
    with AdjointTape() as tape:
        theta = tape.watch(params)
        loss = batch_loss(model, theta, batch, cfg, sets, alpha, training, rng)
        tape.set_root(loss)
    return loss.item(), reverse_grad(tape)


def evaluate_loss(
    model: SequenceModel,
    params: ParamVector,
    episodes: list[Episode],
    cfg: TrainConfig,
    sets: IvIndex,
    alpha: float,
) -> float:
    """Full-batch hybrid loss without dropout; +inf if the rollout diverges."""
    try:
        return batch_loss(model, Tensor(params.values), stack_episodes(episodes), cfg, sets, alpha).item()
    except NumericError as e:
        logger.warning("Validation rollout diverged: %s", e)
        return float("inf")


def _batches(n: int, size: Optional[int], rng: SeededRng) -> list[np.ndarray]:
    order = rng.permutation(n)
    if size is None or size >= n:
        return [order]
    return [order[i : i + size] for i in range(0, n, size)]


def train(
    model: SequenceModel,
    train_eps: list[Episode],
    val_eps: list[Episode],
    cfg: TrainConfig,
    iv_sets: list[InterventionSet] | IvIndex | None = None,
    params: ParamVector | None = None,
    frozen: np.ndarray | None = None,
    epochs: int | None = None,
    include_start: bool = False,
) -> TrainResult:
    """
    Minimize the hybrid loss with Adam and keep the best-validation epoch.

    Divergent batches are skipped and counted; after ``divergence_patience``
    epochs in a row with divergent batches the learning rate is halved.

    Args:
        model: Model to fit; its standardizer comes from the training split
        train_eps: Training episodes
        val_eps: Validation episodes for epoch selection
        cfg: Objective and optimizer settings
        iv_sets: Intervention sets keyed by episode (needed when alpha > 0)
        params: Starting parameters; drawn from ``cfg.seed`` when None
        frozen: Boolean mask of parameters that must not move
        epochs: Epoch budget; ``cfg.epochs`` when None
        include_start: Let the starting parameters win epoch selection

    Returns:
        Best-validation model and the per-epoch history

    Raises:
        InputError: If a split is empty
        ConfigError: If alpha > 0 without intervention sets
        TrainingError: If every batch of an epoch diverges

    """
    if not train_eps or not val_eps:
        msg = "Training needs non-empty training and validation splits"
        raise InputError(msg)
    sets = index_sets(iv_sets)
    if cfg.alpha > 0.0 and not sets:
        msg = "alpha > 0 requires intervention sets"
        raise ConfigError(msg)
    rng = SeededRng(cfg.seed)
    if params is None:
        params = model.init_params(rng.derive("init"))
    state = AdamState.create(len(params), cfg.lr)
    n_epochs = epochs if epochs is not None else cfg.epochs

    best_params, best_val, best_epoch = params.copy(), float("inf"), 0
    if include_start:
        best_val = evaluate_loss(model, params, val_eps, cfg, sets, cfg.alpha)
    history: list[EpochRecord] = []
    streak = 0
    for epoch in range(1, n_epochs + 1):
        batches = _batches(len(train_eps), cfg.batch_size, rng.derive("shuffle", epoch))
        losses, norms, divergent = [], [], 0
        for b, idx in enumerate(batches):
            batch = stack_episodes([train_eps[i] for i in idx])
            try:
                loss, grad = loss_and_grad(model, params, batch, cfg, sets, cfg.alpha, True, rng.derive("dropout", epoch, b))
            except NumericError as e:
                divergent += 1
                logger.warning("Epoch %d batch %d diverged: %s", epoch, b, e)
                continue
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                divergent += 1
                logger.warning("Epoch %d batch %d produced a non-finite gradient", epoch, b)
                continue
            if frozen is not None:
                grad = np.where(frozen, 0.0, grad)
            params = adam_step(state, params, grad, frozen)
            losses.append(loss)
            norms.append(float(np.linalg.norm(grad)))
        if divergent == len(batches):
            msg = f"All {divergent} batches diverged in epoch {epoch}"
            raise TrainingError(msg, diagnostics={"epoch": epoch, "lr": state.lr, "batches": divergent})
        streak = streak + 1 if divergent else 0
        if streak >= cfg.divergence_patience:
            state.lr /= 2.0
            streak = 0
            logger.warning("Halved learning rate to %g after repeated divergence", state.lr)

        val = evaluate_loss(model, params, val_eps, cfg, sets, cfg.alpha)
        history.append(
            EpochRecord(epoch, float(np.mean(losses)), val, float(np.mean(norms)), state.lr, divergent),
        )
        logger.debug("Epoch %d: train %.6g val %.6g |g| %.3g", epoch, history[-1].train_loss, val, history[-1].grad_norm)
        if (best_epoch == 0 and not include_start) or val < best_val:
            best_params, best_val, best_epoch = params.copy(), val, epoch

    logger.info("Selected epoch %d of %d (validation loss %.6g)", best_epoch, n_epochs, best_val)
    info = {"best_epoch": best_epoch, "best_val": best_val, "seed": cfg.seed, "alpha": cfg.alpha}
    return TrainResult(TrainedModel(model, best_params, info), history, best_epoch, best_val, info)


def train_lpsc(
    model_cfg: HybridConfig,
    standardizer: Standardizer,
    train_eps: list[Episode],
    val_eps: list[Episode],
    cfg: TrainConfig,
    iv_sets: list[InterventionSet] | IvIndex | None = None,
    cap: int | None = PARAM_CAP,
) -> TrainResult:
    """
    Two-phase LPSC fit.

    Phase 1 trains the latent-parameter model with the closure gated off. Phase
    2 opens the gate and trains only the closure networks, starting from zeroed
    closure outputs so the phase-1 solution is the first candidate.

    Raises:
        ConfigError: If the config is not LPSC

    """
    if model_cfg.variant is not Variant.LPSC:
        msg = f"Two-phase training needs an LPSC config, got {model_cfg.variant.value}"
        raise ConfigError(msg)
    sets = index_sets(iv_sets)
    phase1_model = build_model(model_cfg.model_copy(update={"w": 0}), standardizer, cap)
    phase1 = train(phase1_model, train_eps, val_eps, cfg, sets)

    phase2_model = build_model(model_cfg.model_copy(update={"w": 1}), standardizer, cap)
    assert isinstance(phase2_model, HybridModel)
    start = phase1.model.params.copy()
    phase2_model.zero_closure_outputs(start)
    frozen = ~start.mask([phase2_model.nn_segment])
    phase2 = train(
        phase2_model,
        train_eps,
        val_eps,
        cfg,
        sets,
        params=start,
        frozen=frozen,
        epochs=cfg.closure_epochs,
        include_start=True,
    )
    history = phase1.history + [
        EpochRecord(r.epoch + len(phase1.history), r.train_loss, r.val_loss, r.grad_norm, r.lr, r.divergent_batches)
        for r in phase2.history
    ]
    best_epoch = phase1.best_epoch if phase2.best_epoch == 0 else len(phase1.history) + phase2.best_epoch
    info = {**phase2.info, "best_epoch": best_epoch, "phase1_val": phase1.best_val}
    model = TrainedModel(phase2_model, phase2.model.params, info)
    logger.info("LPSC phase 1 val %.6g, phase 2 val %.6g", phase1.best_val, phase2.best_val)
    return TrainResult(model, history, best_epoch, phase2.best_val, info)


def train_variant(
    model_cfg: HybridConfig,
    train_eps: list[Episode],
    val_eps: list[Episode],
    cfg: TrainConfig,
    iv_sets: list[InterventionSet] | IvIndex | None = None,
    cap: int | None = PARAM_CAP,
) -> TrainResult:
    """Fit the standardizer on the training split, build the model and train it."""
    standardizer = Standardizer.fit(train_eps)
    if model_cfg.variant is Variant.LPSC:
        return train_lpsc(model_cfg, standardizer, train_eps, val_eps, cfg, iv_sets, cap)
    return train(build_model(model_cfg, standardizer, cap), train_eps, val_eps, cfg, iv_sets)


def evaluate(
    trained: TrainedModel,
    episodes: list[Episode],
    cfg: TrainConfig,
    iv_sets: list[InterventionSet] | IvIndex | None = None,
) -> HeldOutMetrics:
    """
    Held-out predictive error and causal classification error.

    The predictive side is the alpha = 0 loss (plus RMSE in original units);
    the causal side is the alpha = 1 loss and the hard argmax error over the
    episodes that have an intervention set.

    Raises:
        InputError: If there are no episodes

    """
    if not episodes:
        msg = "Cannot evaluate on an empty split"
        raise InputError(msg)
    sets = index_sets(iv_sets)
    batch = stack_episodes(episodes)
    model = trained.model
    theta = Tensor(trained.params.values)
    pred_std = model.forward(theta, batch).value
    pred_loss = predictive_loss(pred_std, model.standardizer.apply_y(batch.targets)).item()
    err = rmse(model.standardizer.invert_y(pred_std), batch.targets)

    covered = [ep for ep in episodes if ep.id in sets]
    if not covered:
        return HeldOutMetrics(err, pred_loss, None, None, 0)
    sub = stack_episodes(covered)
    variants, labels = _iv_block(sub.ids, sets)
    scores = cfg.score(model.counterfactual(theta, sub, variants)).value
    causal = causal_loss_batch(scores, labels, cfg.phi).item()
    wrong = [classify(row) != label for row, label in zip(scores, labels)]
    return HeldOutMetrics(err, pred_loss, causal, float(np.mean(wrong)), len(covered))
