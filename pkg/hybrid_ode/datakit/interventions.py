"""Intervention categories, ground-truth labelling and label corruption."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Protocol

import numpy as np
from pydantic import BaseModel, Field

from hybrid_ode.autodiff import SeededRng
from hybrid_ode.core.config import DEFAULT_SEED
from hybrid_ode.core.exceptions import ConfigError, DataError, InputError
from hybrid_ode.losses import InterventionSet

from .episodes import Episode

logger = logging.getLogger(__name__)

TIE_ATOL = 1e-12

# Heart-rate prototypes (bpm) for the prediction window, one value per step.
HR_PROFILES: dict[str, tuple[float, ...]] = {
    "aerobic": (80.0, 90.0, 100.0, 110.0, 120.0, 130.0, 120.0),
    "interval": (80.0, 170.0, 80.0, 170.0, 80.0, 170.0, 80.0),
    "resistance": (160.0, 170.0, 180.0, 170.0, 160.0, 180.0, 160.0),
}

VariantBuilder = Callable[[np.ndarray, tuple[str, ...]], np.ndarray]
RuleLabel = Callable[[InterventionSet, tuple[str, ...]], int]


@dataclass(frozen=True)
class InterventionCategory:
    """A family of K=3 modifications of an episode's future inputs."""

    name: str
    requires: tuple[str, ...]
    build: VariantBuilder
    rule: RuleLabel
    default_draw: bool = True


def _column(names: tuple[str, ...], name: str) -> int:
    try:
        return names.index(name)
    except ValueError:
        msg = f"Input {name} is not part of the dataset schema {names}"
        raise DataError(msg, field=name) from None


def _offsets(specs: list[dict[str, float]], first_step_only: bool = False) -> VariantBuilder:
    def build(future_x: np.ndarray, input_names: tuple[str, ...]) -> np.ndarray:
        variants = np.repeat(future_x[None, :, :], len(specs), axis=0)
        for k, spec in enumerate(specs):
            for name, amount in spec.items():
                col = _column(input_names, name)
                if first_step_only:
                    variants[k, 0, col] += amount
                else:
                    variants[k, :, col] += amount
        return variants

    return build


def _spread(name: str, totals: tuple[float, ...]) -> VariantBuilder:
    # The dose is split evenly over the prediction window.
    def build(future_x: np.ndarray, input_names: tuple[str, ...]) -> np.ndarray:
        col = _column(input_names, name)
        variants = np.repeat(future_x[None, :, :], len(totals), axis=0)
        for k, total in enumerate(totals):
            variants[k, :, col] += total / future_x.shape[0]
        return variants

    return build


def _hr_profiles(future_x: np.ndarray, input_names: tuple[str, ...]) -> np.ndarray:
    col = _column(input_names, "heart_rate")
    q = future_x.shape[0]
    variants = np.repeat(future_x[None, :, :], len(HR_PROFILES), axis=0)
    for k, profile in enumerate(HR_PROFILES.values()):
        variants[k, :, col] = [profile[min(j, len(profile) - 1)] for j in range(q)]
    return variants


def _icr(future_x: np.ndarray, input_names: tuple[str, ...]) -> np.ndarray:
    carbs, insulin = _column(input_names, "carbs"), _column(input_names, "insulin")
    variants = np.repeat(future_x[None, :, :], 3, axis=0)
    for k, dose in enumerate((2.25, 3.0, 4.5)):
        variants[k, 0, carbs] += 45.0
        variants[k, 0, insulin] += dose
    return variants


def _fixed(label: int) -> RuleLabel:
    return lambda iv_set, names: label


def _most_intense(iv_set: InterventionSet, names: tuple[str, ...]) -> int:
    col = _column(names, "heart_rate")
    return int(np.argmax(iv_set.variants[:, :, col].mean(axis=1)))


CATEGORIES: dict[str, InterventionCategory] = {
    c.name: c
    for c in (
        InterventionCategory(
            "raise_x1_0_1_2",
            ("x1",),
            _offsets([{"x1": 0.0}, {"x1": 1.0}, {"x1": 2.0}]),
            _fixed(2),
        ),
        InterventionCategory(
            "raise_x2_0_1_2",
            ("x2",),
            _offsets([{"x2": 0.0}, {"x2": 1.0}, {"x2": 2.0}]),
            _fixed(0),
        ),
        InterventionCategory(
            "mixed_none_x1_x2",
            ("x1", "x2"),
            _offsets([{}, {"x1": 1.0}, {"x2": 1.0}]),
            _fixed(1),
        ),
        InterventionCategory(
            "carbs_0_50_100",
            ("carbs",),
            _offsets([{"carbs": 0.0}, {"carbs": 50.0}, {"carbs": 100.0}], first_step_only=True),
            _fixed(2),
        ),
        InterventionCategory("insulin_0_2p5_5", ("insulin",), _spread("insulin", (0.0, 2.5, 5.0)), _fixed(0)),
        InterventionCategory(
            "mixed_carb_insulin",
            ("carbs", "insulin"),
            _offsets([{}, {"carbs": 50.0}, {"insulin": 10.0}], first_step_only=True),
            _fixed(1),
        ),
        InterventionCategory("hr_profiles", ("heart_rate",), _hr_profiles, _most_intense),
        InterventionCategory("insulin_carb_ratio", ("carbs", "insulin"), _icr, _fixed(0), default_draw=False),
    )
}


def available_categories(input_names: tuple[str, ...], include_test_only: bool = False) -> list[str]:
    """Categories whose inputs all exist in the schema."""
    return [
        c.name
        for c in CATEGORIES.values()
        if set(c.requires) <= set(input_names) and (c.default_draw or include_test_only)
    ]


def get_category(name: str) -> InterventionCategory:
    """
    Look up a category by name.

    Raises:
        ConfigError: If the name is unknown

    """
    try:
        return CATEGORIES[name]
    except KeyError:
        msg = f"Unknown intervention category {name}; known: {sorted(CATEGORIES)}"
        raise ConfigError(msg) from None


class GroundTruth(Protocol):
    """Anything that can score the variants of an intervention set."""

    def scores(self, iv_set: InterventionSet) -> np.ndarray:
        """One score per variant; larger is better."""
        ...


class RuleTruth:
    """
    Domain-knowledge labels: the rule's choice scores 1, every other variant 0.

    Used for T1DEXI-style data, where the true dynamics are unknown.
    """

    def __init__(self, input_names: tuple[str, ...]) -> None:
        """Initialize for a dataset schema."""
        self.input_names = tuple(input_names)

    def scores(self, iv_set: InterventionSet) -> np.ndarray:
        """One-hot scores from the category's rule."""
        label = get_category(iv_set.category).rule(iv_set, self.input_names)
        out = np.zeros(iv_set.K)
        out[label] = 1.0
        return out


def label_set(iv_set: InterventionSet, truth: GroundTruth) -> int:
    """
    Index of the top-scoring variant under the ground truth.

    Raises:
        DataError: If the two best variants tie

    """
    scores = np.asarray(truth.scores(iv_set), dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    if len(scores) > 1 and abs(scores[order[0]] - scores[order[1]]) <= TIE_ATOL:
        msg = f"Ground-truth scores tie for episode {iv_set.episode_id} ({iv_set.category})"
        raise DataError(msg)
    return int(order[0])


def build_interventions(
    episode: Episode,
    category: Optional[str] = None,
    rng: Optional[SeededRng] = None,
    truth: Optional[GroundTruth] = None,
) -> InterventionSet:
    """
    Build K=3 future-input variants of an episode and label the best one.

    Args:
        episode: Episode in original units
        category: Category name; drawn uniformly from the schema's categories if None
        rng: Stream for the category draw
        truth: Labeller; domain rules when None

    Raises:
        ConfigError: If the category is unknown or none fits the schema
        DataError: If the category touches an input the schema lacks

    """
    names = episode.input_names
    if category is None:
        choices = available_categories(names)
        if not choices:
            msg = f"No intervention category fits inputs {names}"
            raise ConfigError(msg)
        rng = rng or SeededRng(DEFAULT_SEED)
        category = choices[int(rng.integers(len(choices)))]
    spec = get_category(category)
    for name in spec.requires:
        _column(names, name)
    variants = spec.build(episode.future_x, names)
    unlabelled = InterventionSet(episode.id, variants, 0, category)
    label = label_set(unlabelled, truth or RuleTruth(names))
    return unlabelled.with_label(label)


def make_intervention_sets(
    episodes: list[Episode],
    truth: Optional[GroundTruth] = None,
    categories: Optional[list[str]] = None,
    seed: int = DEFAULT_SEED,
) -> list[InterventionSet]:
    """
    One intervention set per episode with the category drawn from ``categories``.

    Each episode's draw uses its own stream, so labels never depend on the order
    of the episodes.
    """
    if categories is not None:
        for name in categories:
            get_category(name)
    base = SeededRng(seed).derive("interventions")
    sets = []
    for ep in episodes:
        rng = base.derive(ep.id)
        chosen = None
        if categories is not None:
            chosen = categories[int(rng.integers(len(categories)))]
        sets.append(build_interventions(ep, chosen, rng, truth))
    logger.debug("Built %d intervention sets", len(sets))
    return sets


class CorruptionConfig(BaseModel):
    """Random right-shift of true labels."""

    rate: float = Field(0.0, ge=0.0, le=1.0, description="Probability of corrupting a label")
    seed: int = Field(DEFAULT_SEED, description="Stream seed")

    model_config = {"frozen": True, "extra": "forbid"}


def corrupt(labels: list[int], cfg: CorruptionConfig, K: int = 3) -> list[int]:
    """
    Replace each label by (label + 1) mod K with probability ``cfg.rate``.

    Raises:
        InputError: If a label is outside [0, K)

    """
    values = np.asarray(labels, dtype=int).reshape(-1)
    if np.any(values < 0) or np.any(values >= K):
        msg = f"Labels must lie in [0, {K})"
        raise InputError(msg)
    hit = SeededRng(cfg.seed).derive("corrupt").uniform(0.0, 1.0, len(values)) < cfg.rate
    out = np.where(hit, (values + 1) % K, values)
    logger.debug("Corrupted %d of %d labels", int(hit.sum()), len(values))
    return [int(v) for v in out]


def corrupt_sets(sets: list[InterventionSet], cfg: CorruptionConfig) -> list[InterventionSet]:
    """Intervention sets with corrupted labels."""
    if not sets:
        return []
    labels = corrupt([s.true_label for s in sets], cfg, sets[0].K)
    return [s.with_label(label) for s, label in zip(sets, labels)]
