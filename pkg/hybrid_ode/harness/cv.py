"""Grid search and repeated nested cross-validation."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, Field
from sklearn.model_selection import KFold

from hybrid_ode.autodiff import SeededRng
from hybrid_ode.core.exceptions import DataError, InputError, NumericError, TrainingError
from hybrid_ode.datakit import Episode
from hybrid_ode.hybrid import HybridConfig, Variant
from hybrid_ode.losses import InterventionSet

from .config import CvConfig, GridSpec, TrainConfig
from .metrics import ErrorSummary, summarize
from .training import IvIndex, evaluate, index_sets, train_variant

logger = logging.getLogger(__name__)

REPORT_SCHEMA = "h2ncm-report/1"


def _split(episodes: list[Episode], n_splits: int) -> list[tuple[list[Episode], list[Episode]]]:
    """Contiguous (train, held-out) folds in the given order."""
    if len(episodes) < n_splits:
        msg = f"{len(episodes)} episodes cannot fill {n_splits} folds"
        raise DataError(msg)
    return [
        ([episodes[i] for i in rest], [episodes[i] for i in held])
        for rest, held in KFold(n_splits=n_splits).split(np.arange(len(episodes)))
    ]


class _CellCache:
    """Scores of finished (repeat, fold, grid point) cells under a run directory."""

    def __init__(self, root: Path | None) -> None:
        self.root = root

    def _path(self, key: str) -> Path | None:
        return None if self.root is None else self.root / "cache" / f"{key}.json"

    def get(self, key: str) -> float | None:
        path = self._path(key)
        if path is None or not path.exists():
            return None
        value = json.loads(path.read_text(encoding="utf-8"))["score"]
        return float("inf") if value is None else float(value)

    def put(self, key: str, score: float) -> None:
        path = self._path(key)
        if path is None:
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps({"score": score if np.isfinite(score) else None}), encoding="utf-8")


def _score_point(
    model_cfg: HybridConfig,
    inner: list[tuple[list[Episode], list[Episode]]],
    cfg: TrainConfig,
    sets: IvIndex,
) -> float:
    total = 0.0
    for train_eps, val_eps in inner:
        try:
            total += train_variant(model_cfg, train_eps, val_eps, cfg, sets).best_val
        except (TrainingError, NumericError) as e:
            logger.warning("Grid point failed on an inner fold: %s", e)
            return float("inf")
    return total


def grid_search(
    configs: list[HybridConfig],
    episodes: list[Episode],
    cfg: TrainConfig,
    inner_folds: int,
    iv_sets: list[InterventionSet] | IvIndex | None = None,
    cache: _CellCache | None = None,
    cache_prefix: str = "",
) -> tuple[int, list[float]]:
    """
    Pick the grid point with the lowest summed validation loss.

    Each point is trained on inner folds 1..M-1; the M-th split is left for the
    final fit. Failed points score +inf; ties go to the first point.

    Returns:
        Index of the winner and the score of every point

    Raises:
        InputError: If the grid is empty
        DataError: If there are fewer episodes than inner folds

    """
    if not configs:
        msg = "Grid search needs at least one grid point"
        raise InputError(msg)
    inner = _split(episodes, inner_folds)[:-1]
    sets = index_sets(iv_sets)
    cache = cache or _CellCache(None)
    scores = []
    for k, model_cfg in enumerate(configs):
        key = f"{cache_prefix}{k}"
        score = cache.get(key)
        if score is None:
            score = _score_point(model_cfg, inner, cfg, sets)
            cache.put(key, score)
        scores.append(score)
        logger.debug("Grid point %d scored %.6g", k, score)
    best = int(np.argmin(scores))
    logger.info("Grid winner %d of %d (score %.6g)", best, len(configs), scores[best])
    return best, scores


class FoldResult(BaseModel):
    """Outcome of one outer fold."""

    repeat: int = Field(..., description="Repeat r (1-based)")
    fold: int = Field(..., description="Outer fold i (1-based)")
    seed: int = Field(..., description="Permutation seed of the repeat")
    winner: int = Field(..., description="Index of the selected grid point")
    winner_point: dict[str, Any] = Field(..., description="Selected config overrides")
    grid_scores: list[Optional[float]] = Field(..., description="Summed inner validation losses")
    best_epoch: int = Field(..., description="Epoch chosen on the final fit")
    rmse: float = Field(..., description="Test RMSE in original units")
    pred_loss: float = Field(..., description="Test predictive loss (alpha = 0)")
    causal_loss: Optional[float] = Field(None, description="Test causal loss (alpha = 1)")
    class_error: Optional[float] = Field(None, description="Test classification error")
    train_ids: list[str] = Field(..., description="Episodes of the final fit")
    val_ids: list[str] = Field(..., description="Episodes used for epoch selection")
    test_ids: list[str] = Field(..., description="Held-out episodes")


class RunReport(BaseModel):
    """Per-fold errors and aggregates of a nested cross-validation run."""

    schema_: str = Field(REPORT_SCHEMA, alias="schema")
    name: str = Field(..., description="Run name")
    variant: Variant = Field(..., description="Model variant")
    alpha: float = Field(..., description="Training and selection alpha")
    cv: CvConfig = Field(..., description="Fold layout")
    train: TrainConfig = Field(..., description="Training settings")
    grid: GridSpec = Field(..., description="Searched grid")
    folds: list[FoldResult] = Field(..., description="Outer folds in (repeat, fold) order")
    summary: ErrorSummary = Field(..., description="Aggregates over folds")

    model_config = {"populate_by_name": True}

    @property
    def rmses(self) -> list[float]:
        """Test RMSE per outer fold."""
        return [f.rmse for f in self.folds]

    @property
    def class_errors(self) -> list[float]:
        """Classification error per outer fold that had intervention sets."""
        return [f.class_error for f in self.folds if f.class_error is not None]

    def to_json(self) -> str:
        """Canonical JSON text."""
        return json.dumps(self.model_dump(mode="json", by_alias=True), indent=2, sort_keys=True)

    def save(self, run_dir: str | Path) -> None:
        """Write report.json and the flat report.csv."""
        root = Path(run_dir)
        root.mkdir(parents=True, exist_ok=True)
        (root / "report.json").write_text(self.to_json(), encoding="utf-8")
        columns = ["repeat", "fold", "winner", "best_epoch", "rmse", "pred_loss", "causal_loss", "class_error"]
        with (root / "report.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["variant", "alpha", *columns])
            for f in self.folds:
                row = f.model_dump()
                writer.writerow([self.variant.value, self.alpha, *("" if row[c] is None else row[c] for c in columns)])

    @classmethod
    def load(cls, path: str | Path) -> RunReport:
        """Read a report.json file."""
        return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class _FoldJob:
    repeat: int
    fold: int
    seed: int
    train_eps: list[Episode]
    test_eps: list[Episode]
    grid: GridSpec
    cfg: TrainConfig
    inner_folds: int
    sets: IvIndex
    test_sets: IvIndex
    run_dir: Optional[Path]


def _run_fold(job: _FoldJob) -> FoldResult:
    ep = job.train_eps[0]
    configs = job.grid.configs(ep.input_names, ep.horizon)
    fold_dir = None if job.run_dir is None else job.run_dir / "folds" / f"{job.repeat}_{job.fold}"
    cache = _CellCache(job.run_dir)
    winner, scores = grid_search(
        configs,
        job.train_eps,
        job.cfg,
        job.inner_folds,
        job.sets,
        cache,
        cache_prefix=f"{job.repeat}_{job.fold}_",
    )
    fit_eps, val_eps = _split(job.train_eps, job.inner_folds)[-1]
    result = train_variant(configs[winner], fit_eps, val_eps, job.cfg, job.sets)
    metrics = evaluate(result.model, job.test_eps, job.cfg, job.test_sets)
    if fold_dir is not None:
        result.model.save(fold_dir / "model.json")
        result.write_history(fold_dir / "history.csv")
    logger.info("Repeat %d fold %d: rmse %.4g class error %s", job.repeat, job.fold, metrics.rmse, metrics.class_error)
    return FoldResult(
        repeat=job.repeat,
        fold=job.fold,
        seed=job.seed,
        winner=winner,
        winner_point=dict(job.grid.points[winner]),
        grid_scores=[s if np.isfinite(s) else None for s in scores],
        best_epoch=result.best_epoch,
        rmse=metrics.rmse,
        pred_loss=metrics.pred_loss,
        causal_loss=metrics.causal_loss,
        class_error=metrics.class_error,
        train_ids=[e.id for e in fit_eps],
        val_ids=[e.id for e in val_eps],
        test_ids=[e.id for e in job.test_eps],
    )


def fold_plan(episodes: list[Episode], cv: CvConfig) -> list[tuple[int, int, int, list[Episode], list[Episode]]]:
    """
    (repeat, fold, seed, outer-train, test) for every outer iteration.

    Raises:
        DataError: If a fold is too small to train on

    """
    plan = []
    for r in range(1, cv.repeats + 1):
        seed = cv.repeat_seed(r)
        order = SeededRng(seed).derive("permutation").permutation(len(episodes))
        permuted = [episodes[int(i)] for i in order]
        for i, (outer_train, test) in enumerate(_split(permuted, cv.outer_folds), start=1):
            if len(outer_train) < 2 * cv.inner_folds:
                msg = f"Outer fold {r}_{i} has {len(outer_train)} training episodes; need at least {2 * cv.inner_folds}"
                raise DataError(msg)
            plan.append((r, i, seed, outer_train, test))
    return plan


def _run_hash(episodes: list[Episode], grid: GridSpec, cv: CvConfig, cfg: TrainConfig) -> str:
    h = hashlib.sha256()
    h.update(json.dumps([grid.model_dump(mode="json"), cv.model_dump(), cfg.model_dump(mode="json")], sort_keys=True).encode())
    for ep in episodes:
        h.update(ep.id.encode())
    return h.hexdigest()[:16]


def nested_cv(
    episodes: list[Episode],
    grid: GridSpec,
    cv: CvConfig,
    cfg: TrainConfig,
    iv_sets: list[InterventionSet] | IvIndex | None = None,
    test_iv_sets: list[InterventionSet] | IvIndex | None = None,
    name: str = "run",
    run_dir: str | Path | None = None,
    jobs: int = 1,
) -> RunReport:
    """
    Repeated nested cross-validation of one variant.

    Every repeat permutes the episodes with seed ``s + r - 2``; each of the N
    outer folds runs an inner grid search, refits the winner and evaluates it on
    the held-out fold. Outer folds run in a process pool when ``jobs > 1``; the
    report does not depend on the number of jobs.

    Args:
        episodes: Whole dataset
        grid: Hyperparameter points
        cv: Fold layout and seed
        cfg: Training settings; ``cfg.alpha`` drives training and selection
        iv_sets: Intervention sets used for training and selection
        test_iv_sets: Intervention sets scored on test folds; ``iv_sets`` when None
        name: Run name stored in the report
        run_dir: Directory for per-fold models, the cell cache and the report
        jobs: Worker processes

    Raises:
        InputError: If there are fewer episodes than outer folds
        DataError: If a fold is too small

    """
    if len(episodes) < cv.outer_folds:
        msg = f"{len(episodes)} episodes for {cv.outer_folds} outer folds"
        raise InputError(msg)
    sets = index_sets(iv_sets)
    test_sets = index_sets(test_iv_sets) if test_iv_sets is not None else sets
    root = Path(run_dir) if run_dir is not None else None
    if root is not None:
        root.mkdir(parents=True, exist_ok=True)
        marker = root / "cache" / "run.hash"
        digest = _run_hash(episodes, grid, cv, cfg)
        if marker.exists() and marker.read_text(encoding="utf-8") != digest:
            logger.warning("Run directory %s holds cells of another run; they are ignored", root)
            for stale in (root / "cache").glob("*.json"):
                stale.unlink()
        marker.parent.mkdir(parents=True, exist_ok=True)
        marker.write_text(digest, encoding="utf-8")

    plan = [
        _FoldJob(r, i, seed, outer_train, test, grid, cfg, cv.inner_folds, sets, test_sets, root)
        for r, i, seed, outer_train, test in fold_plan(episodes, cv)
    ]
    logger.info("Nested CV %s: %d outer folds, %d grid points, %d jobs", name, len(plan), len(grid.points), jobs)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            folds = list(pool.map(_run_fold, plan))
    else:
        folds = [_run_fold(job) for job in plan]
    folds.sort(key=lambda f: (f.repeat, f.fold))

    class_errors = [f.class_error for f in folds if f.class_error is not None]
    report = RunReport(
        name=name,
        variant=grid.variant,
        alpha=cfg.alpha,
        cv=cv,
        train=cfg,
        grid=grid,
        folds=folds,
        summary=summarize([f.rmse for f in folds], class_errors or None),
    )
    if root is not None:
        report.save(root)
    return report
