"""Synthetic single-state dataset with two correlated inputs and its oracle."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, Field, model_validator

from hybrid_ode.autodiff import SeededRng
from hybrid_ode.core.config import DEFAULT_SEED
from hybrid_ode.core.exceptions import DataError, ShapeError
from hybrid_ode.losses import InterventionSet
from hybrid_ode.mech.graphs import SYNTHETIC_INPUTS

from .episodes import Episode

logger = logging.getLogger(__name__)

ORACLE_REFINEMENT = 10
# The synthetic clock runs on t in [0, 1) and has no physical unit.
SYNTHETIC_TIME_UNIT = "unitless"


class SyntheticConfig(BaseModel):
    """Generation settings for the synthetic dataset."""

    n_train: int = Field(600, ge=1, description="Training episodes")
    n_val: int = Field(200, ge=1, description="Validation episodes")
    n_test: int = Field(200, ge=1, description="Test episodes")
    seq_len: int = Field(100, ge=3, description="Grid points per sequence")
    horizon: int = Field(10, ge=1, description="Prediction steps q")
    dt: float = Field(0.01, gt=0.0, description="Grid spacing")
    seed: int = Field(DEFAULT_SEED, description="Base seed")
    eps_var: float = Field(1e-4, ge=0.0, description="Variance of the x2 noise")
    a_range: tuple[float, float] = Field((1.0, 2.0), description="Amplitude range of x1")
    b_range: tuple[float, float] = Field((5.0, 15.0), description="Decay-rate range of x1")
    x2_gain: float = Field(1.5, description="x2 = gain * x1 + noise")

    model_config = {"frozen": True, "extra": "forbid"}

    @model_validator(mode="after")
    def _check_layout(self) -> SyntheticConfig:
        if self.seq_len - self.horizon < 2:
            msg = f"seq_len {self.seq_len} leaves no context before a horizon of {self.horizon}"
            raise ValueError(msg)
        return self

    @property
    def context_length(self) -> int:
        """Context rows before the y0 point."""
        return self.seq_len - self.horizon - 1

    @property
    def total(self) -> int:
        """Total number of episodes."""
        return self.n_train + self.n_val + self.n_test


@dataclass(frozen=True)
class SyntheticDraw:
    """Latent per-episode draw: amplitude, decay rate and per-point noise."""

    a: float
    b: float
    eps: np.ndarray


def synthetic_inputs(draw: SyntheticDraw, t: np.ndarray, gain: float = 1.5) -> np.ndarray:
    """Inputs (x1, x2) at times ``t``; noise is indexed by grid point."""
    x1 = draw.a * np.exp(-draw.b * t)
    return np.stack([x1, gain * x1 + draw.eps[: len(t)]], axis=-1)


def euler_truth(x: np.ndarray, dt: float, y_start: float = 0.0) -> np.ndarray:
    """
    Forward-Euler integration of dy/dt = -y + x1 - x2 on the input grid.

    Returns one y value per input row; ``y[0] = y_start``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 2:
        msg = f"Synthetic inputs must be (T, 2), got {x.shape}"
        raise ShapeError(msg)
    y = np.empty(x.shape[0])
    y[0] = y_start
    for k in range(x.shape[0] - 1):
        y[k + 1] = y[k] + dt * (-y[k] + x[k, 0] - x[k, 1])
    return y


class SyntheticTruth:
    """
    Ground-truth dynamics with every episode's latent draw.

    The oracle re-integrates an episode from its y0 on a grid ten times finer than
    the data grid, with the noise held constant between data points, and scores
    each intervention variant by its mean y over the target times.
    """

    def __init__(self, cfg: SyntheticConfig, draws: dict[str, SyntheticDraw]) -> None:
        """Initialize with the generation settings and draws keyed by episode id."""
        self.cfg = cfg
        self.draws = draws

    @property
    def grid(self) -> np.ndarray:
        """Data-grid time points."""
        return np.arange(self.cfg.seq_len) * self.cfg.dt

    def sequence(self, draw: SyntheticDraw) -> tuple[np.ndarray, np.ndarray]:
        """Full (inputs, y) sequence of a draw on the data grid."""
        x = synthetic_inputs(draw, self.grid, self.cfg.x2_gain)
        return x, euler_truth(x, self.cfg.dt)

    def episode(self, episode_id: str, draw: SyntheticDraw) -> Episode:
        """Cut a draw's sequence into context and prediction windows."""
        x, y = self.sequence(draw)
        p = self.cfg.context_length
        q = self.cfg.horizon
        return Episode(
            id=episode_id,
            context=np.column_stack([y[:p], x[:p]]),
            y0=float(y[p]),
            future_x=x[p : p + q],
            targets=y[p + 1 : p + 1 + q],
            input_names=SYNTHETIC_INPUTS,
            dt=self.cfg.dt,
            time_unit=SYNTHETIC_TIME_UNIT,
        )

    def oracle_trajectory(self, episode_id: str, future_x: np.ndarray) -> np.ndarray:
        """
        True y at the q target times when the future inputs are replaced.

        The replacement enters as an offset from the observed inputs, which keeps
        the within-step decay of x1 intact.

        Raises:
            DataError: If the episode id has no stored draw
            ShapeError: If ``future_x`` is not (q, 2)

        """
        draw = self.draws.get(episode_id)
        if draw is None:
            msg = f"No latent draw stored for episode {episode_id}"
            raise DataError(msg)
        q, p, dt = self.cfg.horizon, self.cfg.context_length, self.cfg.dt
        future_x = np.asarray(future_x, dtype=np.float64)
        if future_x.shape != (q, 2):
            msg = f"Oracle expects future inputs of shape ({q}, 2), got {future_x.shape}"
            raise ShapeError(msg)
        x_obs, y_obs = self.sequence(draw)
        offset = future_x - x_obs[p : p + q]
        h = dt / ORACLE_REFINEMENT
        y = float(y_obs[p])
        out = np.empty(q)
        for j in range(q):
            k = p + j
            for s in range(ORACLE_REFINEMENT):
                x1 = draw.a * np.exp(-draw.b * (k * dt + s * h))
                x2 = self.cfg.x2_gain * x1 + draw.eps[k]
                y += h * (-y + x1 + offset[j, 0] - x2 - offset[j, 1])
            out[j] = y
        return out

    def scores(self, iv_set: InterventionSet) -> np.ndarray:
        """Mean oracle y of each variant."""
        return np.array([self.oracle_trajectory(iv_set.episode_id, v).mean() for v in iv_set.variants])


@dataclass(frozen=True)
class SyntheticData:
    """Generated splits with the truth that produced them."""

    train: list[Episode]
    val: list[Episode]
    test: list[Episode]
    truth: SyntheticTruth

    def splits(self) -> dict[str, list[Episode]]:
        """Splits by name."""
        return {"train": self.train, "val": self.val, "test": self.test}


def draw_latents(cfg: SyntheticConfig, index: int) -> SyntheticDraw:
    """Latent draw of episode ``index``, independent of all other episodes."""
    rng = SeededRng(cfg.seed).derive("synthetic", index)
    a = float(rng.uniform(*cfg.a_range))
    b = float(rng.uniform(*cfg.b_range))
    eps = rng.normal(float(np.sqrt(cfg.eps_var)), cfg.seq_len)
    return SyntheticDraw(a, b, eps)


def gen_synthetic(cfg: SyntheticConfig | None = None) -> SyntheticData:
    """
    Generate the train, validation and test splits.

    Example:
        ```python
        data = gen_synthetic(SyntheticConfig(n_train=8, n_val=2, n_test=2))
        data.train[0].context.shape  # (89, 3)
        ```

    """
    cfg = cfg or SyntheticConfig()
    draws: dict[str, SyntheticDraw] = {}
    episodes: list[Episode] = []
    truth = SyntheticTruth(cfg, draws)
    for i in range(cfg.total):
        episode_id = f"syn-{i:05d}"
        draws[episode_id] = draw_latents(cfg, i)
        episodes.append(truth.episode(episode_id, draws[episode_id]))
    n1, n2 = cfg.n_train, cfg.n_train + cfg.n_val
    logger.info("Generated %d synthetic episodes (seed %d)", cfg.total, cfg.seed)
    return SyntheticData(episodes[:n1], episodes[n1:n2], episodes[n2:], truth)
