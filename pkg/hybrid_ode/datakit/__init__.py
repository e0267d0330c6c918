"""Episodes, synthetic data, intervention sets and file formats."""

from .episodes import Episode, EpisodeBatch, stack_episodes
from .interventions import (
    CATEGORIES,
    HR_PROFILES,
    CorruptionConfig,
    GroundTruth,
    InterventionCategory,
    RuleTruth,
    available_categories,
    build_interventions,
    corrupt,
    corrupt_sets,
    get_category,
    label_set,
    make_intervention_sets,
)
from .io import (
    EPISODE_SCHEMA,
    INTERVENTION_SCHEMA,
    read_episodes,
    read_interventions,
    write_episodes,
    write_interventions,
)
from .standardize import Standardizer, StandardizerRecord
from .synthetic import (
    SyntheticConfig,
    SyntheticData,
    SyntheticDraw,
    SyntheticTruth,
    euler_truth,
    gen_synthetic,
    synthetic_inputs,
)

__all__ = [
    "CATEGORIES",
    "EPISODE_SCHEMA",
    "HR_PROFILES",
    "INTERVENTION_SCHEMA",
    "CorruptionConfig",
    "Episode",
    "EpisodeBatch",
    "GroundTruth",
    "InterventionCategory",
    "RuleTruth",
    "Standardizer",
    "StandardizerRecord",
    "SyntheticConfig",
    "SyntheticData",
    "SyntheticDraw",
    "SyntheticTruth",
    "available_categories",
    "build_interventions",
    "corrupt",
    "corrupt_sets",
    "euler_truth",
    "gen_synthetic",
    "get_category",
    "label_set",
    "make_intervention_sets",
    "read_episodes",
    "read_interventions",
    "stack_episodes",
    "synthetic_inputs",
    "write_episodes",
    "write_interventions",
]
