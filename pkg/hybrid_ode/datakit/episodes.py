"""Episodes: a context window followed by a prediction window."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from hybrid_ode.core.exceptions import DataError, ShapeError

MINUTES = "min"


@dataclass(frozen=True)
class Episode:
    """
    One sequence split into context and prediction windows.

    ``context`` rows are (y, x_1..x_n) at the context time points. ``y0`` is the
    observation at the last pre-prediction point, ``future_x`` holds the q input
    rows that drive the prediction steps and ``targets`` the q observations.
    ``dt`` is the sampling interval in ``time_unit``; clinical episodes count
    minutes.
    """

    id: str
    context: np.ndarray
    y0: float
    future_x: np.ndarray
    targets: np.ndarray
    input_names: tuple[str, ...]
    dt: float = 5.0
    time_unit: str = MINUTES

    def __post_init__(self) -> None:
        """Normalize arrays and check shapes."""
        context = np.asarray(self.context, dtype=np.float64)
        future_x = np.asarray(self.future_x, dtype=np.float64)
        targets = np.asarray(self.targets, dtype=np.float64).reshape(-1)
        n = len(self.input_names)
        if context.ndim != 2 or context.shape[0] < 1 or context.shape[1] != 1 + n:
            msg = f"Episode {self.id}: context must be (T >= 1, {1 + n}), got {context.shape}"
            raise DataError(msg, field="context")
        if future_x.ndim != 2 or future_x.shape[1] != n:
            msg = f"Episode {self.id}: future_x must be (q, {n}), got {future_x.shape}"
            raise DataError(msg, field="future_x")
        if future_x.shape[0] != targets.shape[0] or targets.shape[0] < 1:
            msg = f"Episode {self.id}: {future_x.shape[0]} input rows for {targets.shape[0]} targets"
            raise DataError(msg, field="targets")
        for name, values in (("context", context), ("future_x", future_x), ("targets", targets)):
            if not np.all(np.isfinite(values)):
                msg = f"Episode {self.id}: missing or non-finite values"
                raise DataError(msg, field=name)
        if not np.isfinite(self.y0):
            msg = f"Episode {self.id}: y0 is not finite"
            raise DataError(msg, field="y0")
        if not self.dt > 0.0:
            msg = f"Episode {self.id}: sampling interval must be positive, got {self.dt}"
            raise DataError(msg, field="dt")
        object.__setattr__(self, "context", context)
        object.__setattr__(self, "future_x", future_x)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "y0", float(self.y0))
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "input_names", tuple(self.input_names))

    @property
    def horizon(self) -> int:
        """Number of prediction steps q."""
        return int(self.targets.shape[0])

    @property
    def context_length(self) -> int:
        """Number of context rows."""
        return int(self.context.shape[0])

    def with_future(self, future_x: np.ndarray) -> Episode:
        """Same context with other future inputs."""
        return Episode(
            self.id,
            self.context,
            self.y0,
            future_x,
            self.targets,
            self.input_names,
            self.dt,
            self.time_unit,
        )

    def same_values(self, other: Episode) -> bool:
        """Exact equality of ids, names and every stored value."""
        return (
            self.id == other.id
            and self.input_names == other.input_names
            and self.dt == other.dt
            and self.time_unit == other.time_unit
            and self.y0 == other.y0
            and np.array_equal(self.context, other.context)
            and np.array_equal(self.future_x, other.future_x)
            and np.array_equal(self.targets, other.targets)
        )


@dataclass(frozen=True)
class EpisodeBatch:
    """Episodes stacked along a leading batch axis."""

    ids: list[str]
    context: np.ndarray
    y0: np.ndarray
    future_x: np.ndarray
    targets: np.ndarray
    input_names: tuple[str, ...] = field(default_factory=tuple)

    @property
    def size(self) -> int:
        """Number of episodes."""
        return len(self.ids)

    def take(self, index: np.ndarray | list[int]) -> EpisodeBatch:
        """Select a subset of episodes."""
        idx = np.asarray(index, dtype=int)
        return EpisodeBatch(
            [self.ids[i] for i in idx],
            self.context[idx],
            self.y0[idx],
            self.future_x[idx],
            self.targets[idx],
            self.input_names,
        )


def stack_episodes(episodes: list[Episode]) -> EpisodeBatch:
    """
    Stack episodes that share input names, context length and horizon.

    Raises:
        ShapeError: If the episodes are empty or do not share a layout

    """
    if not episodes:
        msg = "Cannot stack an empty list of episodes"
        raise ShapeError(msg)
    first = episodes[0]
    for ep in episodes[1:]:
        if (
            ep.input_names != first.input_names
            or ep.context.shape != first.context.shape
            or ep.horizon != first.horizon
        ):
            msg = f"Episode {ep.id} layout differs from {first.id}"
            raise ShapeError(msg)
    return EpisodeBatch(
        ids=[ep.id for ep in episodes],
        context=np.stack([ep.context for ep in episodes]),
        y0=np.array([ep.y0 for ep in episodes]),
        future_x=np.stack([ep.future_x for ep in episodes]),
        targets=np.stack([ep.targets for ep in episodes]),
        input_names=first.input_names,
    )
