"""Per-feature z-scoring fitted on a training split."""

from __future__ import annotations

import logging

import numpy as np
from pydantic import BaseModel, Field

from hybrid_ode.core.exceptions import DataError, InputError, ShapeError

from .episodes import Episode

logger = logging.getLogger(__name__)


class StandardizerRecord(BaseModel):
    """JSON form of a standardizer."""

    features: list[str] = Field(..., description="Output first, then inputs")
    mean: list[float] = Field(..., description="Per-feature mean")
    std: list[float] = Field(..., description="Per-feature standard deviation")

    model_config = {"extra": "forbid"}


class Standardizer:
    """
    Affine map x -> (x - mean) / std per feature.

    Feature 0 is the observation y; features 1..n follow the episode input order.
    """

    def __init__(self, features: list[str], mean: np.ndarray, std: np.ndarray) -> None:
        """
        Initialize from statistics.

        Raises:
            ShapeError: If the statistics do not match the feature list
            DataError: If a standard deviation is not positive

        """
        self.features = list(features)
        self.mean = np.asarray(mean, dtype=np.float64).reshape(-1)
        self.std = np.asarray(std, dtype=np.float64).reshape(-1)
        if len(self.mean) != len(self.features) or len(self.std) != len(self.features):
            msg = f"{len(self.features)} features but {len(self.mean)} means and {len(self.std)} stds"
            raise ShapeError(msg)
        for name, s in zip(self.features, self.std):
            if not s > 0.0:
                msg = f"Feature {name} has zero variance in the training split"
                raise DataError(msg, field=name)

    @classmethod
    def fit(cls, episodes: list[Episode]) -> Standardizer:
        """
        Fit on every time point of the given (training) episodes.

        Raises:
            InputError: If there are no episodes
            DataError: If a feature is constant

        """
        if not episodes:
            msg = "Cannot fit a standardizer on an empty split"
            raise InputError(msg)
        names = episodes[0].input_names
        y = np.concatenate([np.concatenate([ep.context[:, 0], [ep.y0], ep.targets]) for ep in episodes])
        x = np.concatenate([np.vstack([ep.context[:, 1:], ep.future_x]) for ep in episodes])
        mean = np.concatenate([[y.mean()], x.mean(axis=0)])
        std = np.concatenate([[y.std()], x.std(axis=0)])
        logger.debug("Fitted standardizer on %d episodes (%d y points)", len(episodes), len(y))
        return cls(["y", *names], mean, std)

    @property
    def input_names(self) -> tuple[str, ...]:
        """Input feature names."""
        return tuple(self.features[1:])

    def apply_y(self, y: np.ndarray) -> np.ndarray:
        """Standardize observations."""
        return (np.asarray(y, dtype=np.float64) - self.mean[0]) / self.std[0]

    def invert_y(self, y: np.ndarray) -> np.ndarray:
        """Map standardized observations back to original units."""
        return np.asarray(y, dtype=np.float64) * self.std[0] + self.mean[0]

    def apply_x(self, x: np.ndarray) -> np.ndarray:
        """Standardize inputs (last axis = input features)."""
        return (np.asarray(x, dtype=np.float64) - self.mean[1:]) / self.std[1:]

    def invert_x(self, x: np.ndarray) -> np.ndarray:
        """Map standardized inputs back to original units."""
        return np.asarray(x, dtype=np.float64) * self.std[1:] + self.mean[1:]

    def apply(self, episode: Episode) -> Episode:
        """
        Standardize every value of an episode.

        Raises:
            DataError: If the episode's inputs differ from the fitted features

        """
        self._check(episode)
        return Episode(
            episode.id,
            (episode.context - self.mean) / self.std,
            float(self.apply_y(episode.y0)),
            self.apply_x(episode.future_x),
            self.apply_y(episode.targets),
            episode.input_names,
            episode.dt,
            episode.time_unit,
        )

    def invert(self, episode: Episode) -> Episode:
        """Undo :meth:`apply`."""
        self._check(episode)
        return Episode(
            episode.id,
            episode.context * self.std + self.mean,
            float(self.invert_y(episode.y0)),
            self.invert_x(episode.future_x),
            self.invert_y(episode.targets),
            episode.input_names,
            episode.dt,
            episode.time_unit,
        )

    def _check(self, episode: Episode) -> None:
        if episode.input_names != self.input_names:
            msg = f"Episode inputs {episode.input_names} do not match standardizer inputs {self.input_names}"
            raise DataError(msg)

    def to_record(self) -> StandardizerRecord:
        """Convert to the JSON record."""
        return StandardizerRecord(
            features=self.features,
            mean=[float(v) for v in self.mean],
            std=[float(v) for v in self.std],
        )

    @classmethod
    def from_record(cls, record: StandardizerRecord) -> Standardizer:
        """Build from the JSON record."""
        return cls(record.features, np.array(record.mean), np.array(record.std))

    def __repr__(self) -> str:
        """Return string representation of the standardizer."""
        return f"Standardizer(features={self.features})"
