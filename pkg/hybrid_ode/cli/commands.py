"""Command implementations: each takes resolved options and returns the files it wrote."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Any, Optional

from hybrid_ode.core.config import HybridSettings
from hybrid_ode.core.exceptions import ConfigError, DataError
from hybrid_ode.datakit import (
    Episode,
    SyntheticConfig,
    gen_synthetic,
    make_intervention_sets,
    read_episodes,
    read_interventions,
    write_episodes,
    write_interventions,
)
from hybrid_ode.graphred import DiGraph, MnodeEvaluator, reduce, search_train_config
from hybrid_ode.harness import (
    CvConfig,
    GridSpec,
    TrainConfig,
    default_grid,
    default_train_config,
    evaluate,
    nested_cv,
    train_variant,
)
from hybrid_ode.hybrid import HybridConfig, TrainedModel, Variant, variant_config
from hybrid_ode.losses import InterventionSet, ScoreFn, classify
from hybrid_ode.mech import synthetic_graph, uva_graphs

from .report import collect_reports, write_charts, write_summary_csv

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
COUNTERFACTUAL_SCHEMA = "h2ncm-counterfactual/1"

Options = dict[str, Any]


def episodes_path(data_dir: str | Path, split: str) -> Path:
    """Episode file of a split."""
    return Path(data_dir) / f"{split}.episodes.jsonl"


def interventions_path(data_dir: str | Path, split: str) -> Path:
    """Intervention-set file of a split."""
    return Path(data_dir) / f"{split}.interventions.jsonl"


def load_split(data_dir: str | Path, split: str) -> tuple[list[Episode], Optional[list[InterventionSet]]]:
    """
    Episodes of a split and its intervention sets, if the set file exists.

    Raises:
        DataError: If the episode file is missing or empty

    """
    path = episodes_path(data_dir, split)
    if not path.exists():
        msg = f"Missing {split} episodes: {path}"
        raise DataError(msg)
    episodes = read_episodes(path)
    if not episodes:
        msg = f"No episodes in {path}"
        raise DataError(msg)
    sets_file = interventions_path(data_dir, split)
    sets = read_interventions(sets_file) if sets_file.exists() else None
    return episodes, sets


def load_dataset(data_dir: str | Path) -> dict[str, tuple[list[Episode], Optional[list[InterventionSet]]]]:
    """Every split present in a data directory."""
    found = {s: load_split(data_dir, s) for s in SPLITS if episodes_path(data_dir, s).exists()}
    if not found:
        msg = f"No episode files in {data_dir}"
        raise DataError(msg)
    return found


def _merge_sets(*groups: Optional[list[InterventionSet]]) -> Optional[list[InterventionSet]]:
    merged = [s for g in groups if g for s in g]
    return merged or None


def _train_config(variant: Variant, input_names: tuple[str, ...], opts: Options, **extra: Any) -> TrainConfig:
    overrides: dict[str, Any] = {"seed": opts["seed"], "phi": opts["phi"], **extra}
    for key in ("lr", "epochs"):
        if opts.get(key) is not None:
            overrides[key] = opts[key]
    if opts.get("batch_size") is not None:
        overrides["batch_size"] = opts["batch_size"] or None
    return default_train_config(variant, input_names, **overrides)


def gen_synthetic_cmd(opts: Options, _settings: HybridSettings) -> list[Path]:
    """Generate the synthetic splits with oracle-labelled intervention sets."""
    out = Path(opts["out"])
    cfg = SyntheticConfig(n_train=opts["train"], n_val=opts["val"], n_test=opts["test"], seed=opts["seed"])
    data = gen_synthetic(cfg)
    written = []
    for split, episodes in data.splits().items():
        sets = make_intervention_sets(episodes, data.truth, seed=opts["seed"])
        write_episodes(episodes_path(out, split), episodes)
        write_interventions(interventions_path(out, split), sets)
        written += [episodes_path(out, split), interventions_path(out, split)]
    logger.info("Wrote %d/%d/%d synthetic episodes to %s", cfg.n_train, cfg.n_val, cfg.n_test, out)
    return written


def _select_config(
    grid: GridSpec,
    train_eps: list[Episode],
    val_eps: list[Episode],
    cfg: TrainConfig,
    sets: Optional[list[InterventionSet]],
    cap: int,
) -> HybridConfig:
    ep = train_eps[0]
    configs = grid.configs(ep.input_names, ep.horizon)
    losses = [train_variant(c, train_eps, val_eps, cfg, sets, cap).best_val for c in configs]
    best = min(range(len(losses)), key=lambda k: (losses[k], k))
    logger.info("Grid point %d of %d selected (validation loss %.6g)", best, len(configs), losses[best])
    return configs[best]


def train_cmd(opts: Options, settings: HybridSettings) -> list[Path]:
    """Train one variant on the train split with epoch selection on the val split."""
    variant = Variant(opts["model"])
    splits = load_dataset(opts["data"])
    for split in ("train", "val"):
        if split not in splits:
            msg = f"Training needs a {split} split in {opts['data']}"
            raise DataError(msg)
    train_eps, train_sets = splits["train"]
    val_eps, val_sets = splits["val"]
    ep = train_eps[0]
    alpha = opts["alpha"]
    sets = _merge_sets(train_sets, val_sets) if alpha > 0 else None
    if alpha > 0 and (train_sets is None or val_sets is None):
        msg = f"alpha {alpha:g} needs intervention sets for the train and val splits"
        raise DataError(msg)
    cfg = _train_config(variant, ep.input_names, opts, alpha=alpha)

    if opts.get("grid"):
        grid = GridSpec.load(opts["grid"], ep.input_names, ep.horizon, settings.param_cap)
        if grid.variant is not variant:
            msg = f"Grid {opts['grid']} is for {grid.variant.value}, not {variant.value}"
            raise ConfigError(msg)
        model_cfg = _select_config(grid, train_eps, val_eps, cfg, sets, settings.param_cap)
    else:
        model_cfg = variant_config(variant, ep.input_names, ep.horizon)
    result = train_variant(model_cfg, train_eps, val_eps, cfg, sets, settings.param_cap)

    out = Path(opts["out"])
    history = out.with_suffix(".history.csv")
    result.model.save(out)
    result.write_history(history)
    written = [out, history]
    if "test" in splits:
        test_eps, test_sets = splits["test"]
        metrics = evaluate(result.model, test_eps, cfg, test_sets)
        payload = {"best_epoch": result.best_epoch, "best_val": result.best_val, **asdict(metrics)}
        target = out.with_suffix(".metrics.json")
        target.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
        written.append(target)
        logger.info("Test RMSE %.4g, classification error %s", metrics.rmse, metrics.class_error)
    return written


def cv_cmd(opts: Options, settings: HybridSettings) -> list[Path]:
    """Nested cross-validation of one variant at every requested alpha."""
    variant = Variant(opts["model"])
    splits = load_dataset(opts["data"])
    episodes = [ep for eps, _ in splits.values() for ep in eps]
    sets = _merge_sets(*(s for _, s in splits.values()))
    ep = episodes[0]
    if opts.get("grid"):
        grid = GridSpec.load(opts["grid"], ep.input_names, ep.horizon, settings.param_cap)
        if grid.variant is not variant:
            msg = f"Grid {opts['grid']} is for {grid.variant.value}, not {variant.value}"
            raise ConfigError(msg)
    else:
        grid = default_grid(variant, ep.input_names, ep.horizon, cap=settings.param_cap)
    cv = CvConfig(repeats=opts["repeats"], outer_folds=opts["outer"], inner_folds=opts["inner"], seed=opts["seed"])
    if any(a > 0 for a in opts["alphas"]) and sets is None:
        msg = "alpha > 0 needs intervention sets in the data directory"
        raise DataError(msg)

    out = Path(opts["out"])
    written = []
    for alpha in opts["alphas"]:
        name = f"{variant.value}_alpha{alpha:g}"
        cfg = _train_config(variant, ep.input_names, opts, alpha=alpha)
        report = nested_cv(
            episodes,
            grid,
            cv,
            cfg,
            iv_sets=sets if alpha > 0 else None,
            test_iv_sets=sets,
            name=name,
            run_dir=out / name,
            jobs=opts["jobs"],
        )
        logger.info("%s: RMSE %.4g +/- %.2g", name, report.summary.rmse_mean, report.summary.rmse_stderr)
        written.append(out / name / "report.json")
    return written


def _find(items: list[Any], key: str, value: str, path: str | Path) -> Any:
    for item in items:
        if getattr(item, key) == value:
            return item
    msg = f"No entry with {key} {value!r} in {path}"
    raise DataError(msg, field=key)


def counterfactual_cmd(opts: Options, _settings: HybridSettings) -> list[Path]:
    """Simulate every variant of one intervention set and pick the best."""
    trained = TrainedModel.load(opts["model"])
    episode: Episode = _find(read_episodes(opts["episodes"]), "id", opts["episode"], opts["episodes"])
    iv_set: InterventionSet = _find(read_interventions(opts["interventions"]), "episode_id", opts["episode"], opts["interventions"])
    if episode.input_names != trained.cfg.input_names:
        msg = f"Episode inputs {episode.input_names} do not match model inputs {trained.cfg.input_names}"
        raise DataError(msg, field="inputs")
    trajectories = trained.counterfactual_simulate(episode, iv_set)
    scores = ScoreFn(kind=opts["score"])(trajectories).value
    selected = classify(scores)
    payload = {
        "schema": COUNTERFACTUAL_SCHEMA,
        "episode_id": episode.id,
        "category": iv_set.category,
        "variant": trained.variant.value,
        "score": opts["score"],
        "prediction": trained.predict(episode).tolist(),
        "trajectories": trajectories.tolist(),
        "scores": scores.tolist(),
        "selected": selected,
        "true_label": iv_set.true_label,
    }
    out = Path(opts["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    logger.info("Episode %s: selected variant %d (label %d)", episode.id, selected, iv_set.true_label)
    return [out]


def reduce_graph_cmd(opts: Options, _settings: HybridSettings) -> list[Path]:
    """Greedy graph reduction scored by briefly trained MNODE models."""
    graph = DiGraph.load(opts["graph"])
    train_eps, train_sets = load_split(opts["data"], "train")
    val_eps, val_sets = load_split(opts["data"], "val")
    sets = _merge_sets(train_sets, val_sets) if train_sets and val_sets else None
    cfg = search_train_config(epochs=opts["epochs"], seed=opts["seed"])
    evaluator = MnodeEvaluator(train_eps, val_eps, sets, cfg)
    out = Path(opts["out"])
    audit = Path(opts["audit"]) if opts.get("audit") else out.with_suffix(".audit.jsonl")
    result = reduce(graph, evaluator, opts["tolerance"], audit_path=audit, jobs=opts["jobs"])
    result.graph.save(out)
    logger.info("Reduced graph: loss %.6g -> %.6g in %d steps", result.start_loss, result.best_loss, len(result.steps))
    return [out, audit]


def report_cmd(opts: Options, _settings: HybridSettings) -> list[Path]:
    """Summary table and, for svg, bar charts over every run below the runs directory."""
    rows = collect_reports(opts["runs"])
    out_dir = Path(opts["out"] or opts["runs"])
    summary = out_dir / "summary.csv"
    write_summary_csv(rows, summary)
    written = [summary]
    if opts["format"] == "svg":
        written += write_charts(rows, out_dir)
    return written


def export_graph_cmd(opts: Options, _settings: HybridSettings) -> list[Path]:
    """Write a shipped causal graph as a graph file."""
    kind = opts["kind"]
    causal = synthetic_graph() if kind == "synthetic" else uva_graphs()[kind]
    out = Path(opts["out"])
    DiGraph.from_causal(causal).save(out)
    return [out]


def check_inputs(opts: Options, keys: tuple[str, ...]) -> None:
    """
    Fail early on input paths that do not exist.

    Raises:
        DataError: Naming the missing path

    """
    for key in keys:
        value = opts.get(key)
        if value is not None and not Path(value).exists():
            msg = f"--{key.replace('_', '-')} {value} does not exist"
            raise DataError(msg)
