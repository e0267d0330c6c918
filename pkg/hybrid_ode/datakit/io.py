"""JSON Lines episode and intervention-set files."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Literal, Optional, TypeVar

import numpy as np
from pydantic import BaseModel, Field, ValidationError, model_validator

from hybrid_ode.core.exceptions import DataError, HybridError
from hybrid_ode.losses import InterventionSet

from .episodes import MINUTES, Episode

logger = logging.getLogger(__name__)

EPISODE_SCHEMA = "h2ncm-episodes/1"
INTERVENTION_SCHEMA = "h2ncm-interventions/1"

DEFAULT_DT_MINUTES = 5.0

RecordT = TypeVar("RecordT", bound=BaseModel)


class EpisodeRecord(BaseModel):
    """
    One line of an episode file.

    Minute-sampled episodes carry ``dt_minutes``; episodes on another clock carry
    ``dt`` together with ``time_unit``.
    """

    schema_: Literal["h2ncm-episodes/1"] = Field(EPISODE_SCHEMA, alias="schema")
    id: str = Field(..., min_length=1, description="Episode identifier")
    inputs: list[str] = Field(..., description="Input column names")
    dt_minutes: Optional[float] = Field(None, gt=0.0, description="Sampling interval in minutes")
    dt: Optional[float] = Field(None, gt=0.0, description="Sampling interval in time_unit")
    time_unit: str = Field(MINUTES, min_length=1, description="Unit of dt")
    context: list[list[float]] = Field(..., description="Rows of (y, x_1..x_n)")
    y0: float = Field(..., description="Observation before the first prediction step")
    future_x: list[list[float]] = Field(..., description="Future input rows")
    targets: list[float] = Field(..., description="Observations to predict")

    model_config = {"extra": "forbid", "populate_by_name": True}

    @model_validator(mode="after")
    def check_interval(self) -> EpisodeRecord:
        """Minute data uses dt_minutes; any other unit needs dt."""
        if self.time_unit == MINUTES and self.dt is not None:
            msg = "minute-sampled episodes store their interval in dt_minutes"
            raise ValueError(msg)
        if self.time_unit != MINUTES and (self.dt is None or self.dt_minutes is not None):
            msg = f"episodes in {self.time_unit!r} need dt and no dt_minutes"
            raise ValueError(msg)
        return self

    @property
    def interval(self) -> float:
        """Sampling interval in time_unit."""
        if self.time_unit == MINUTES:
            return DEFAULT_DT_MINUTES if self.dt_minutes is None else self.dt_minutes
        return float(self.dt)  # type: ignore[arg-type]


class InterventionRecord(BaseModel):
    """One line of an intervention-set file."""

    schema_: Literal["h2ncm-interventions/1"] = Field(INTERVENTION_SCHEMA, alias="schema")
    episode_id: str = Field(..., min_length=1, description="Episode the set belongs to")
    category: str = Field(..., description="Intervention category name")
    variants: list[list[list[float]]] = Field(..., description="K future-input blocks")
    true_label: int = Field(..., ge=0, description="Index of the best variant")

    model_config = {"extra": "forbid", "populate_by_name": True}


def _ragged(rows: list[list[float]], width: int, name: str, line: int) -> None:
    for r, row in enumerate(rows):
        if len(row) != width:
            msg = f"row {r} has {len(row)} columns, expected {width}"
            raise DataError(msg, line=line, field=name)


def _interval_fields(episode: Episode) -> dict[str, Any]:
    if episode.time_unit == MINUTES:
        return {"dt_minutes": episode.dt}
    return {"dt": episode.dt, "time_unit": episode.time_unit}


def episode_to_record(episode: Episode) -> EpisodeRecord:
    """Convert an episode to its file record."""
    return EpisodeRecord(
        id=episode.id,
        inputs=list(episode.input_names),
        **_interval_fields(episode),
        context=episode.context.tolist(),
        y0=episode.y0,
        future_x=episode.future_x.tolist(),
        targets=episode.targets.tolist(),
    )


def record_to_episode(record: EpisodeRecord, line: int = 0) -> Episode:
    """
    Convert a file record to an episode.

    Raises:
        DataError: If a row is ragged or a value is missing

    """
    n = len(record.inputs)
    _ragged(record.context, 1 + n, "context", line)
    _ragged(record.future_x, n, "future_x", line)
    try:
        return Episode(
            id=record.id,
            context=np.array(record.context, dtype=np.float64).reshape(-1, 1 + n),
            y0=record.y0,
            future_x=np.array(record.future_x, dtype=np.float64).reshape(-1, n),
            targets=np.array(record.targets, dtype=np.float64),
            input_names=tuple(record.inputs),
            dt=record.interval,
            time_unit=record.time_unit,
        )
    except DataError as e:
        raise DataError(e.message, line=line, field=e.field) from e


def _read_records(path: Path, model: type[RecordT]) -> list[tuple[int, RecordT]]:
    records: list[tuple[int, RecordT]] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                payload: Any = json.loads(raw)
            except json.JSONDecodeError as e:
                msg = f"invalid JSON: {e.msg}"
                raise DataError(msg, line=lineno) from e
            try:
                records.append((lineno, model.model_validate(payload)))
            except ValidationError as e:
                err = e.errors()[0]
                field = ".".join(str(p) for p in err["loc"]) or None
                raise DataError(err["msg"], line=lineno, field=field) from e
    return records


def _write_records(path: Path, records: list[BaseModel]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            # json.dumps writes floats with repr, which round-trips exactly.
            fh.write(json.dumps(record.model_dump(by_alias=True)) + "\n")


def read_episodes(path: str | Path) -> list[Episode]:
    """
    Read an episode file; an empty file yields an empty list.

    Raises:
        DataError: With the line number and field of the first bad record

    """
    records = _read_records(Path(path), EpisodeRecord)
    episodes = [record_to_episode(rec, line) for line, rec in records]
    logger.debug("Read %d episodes from %s", len(episodes), path)
    return episodes


def write_episodes(path: str | Path, episodes: list[Episode]) -> None:
    """Write episodes, one JSON object per line."""
    _write_records(Path(path), [episode_to_record(ep) for ep in episodes])
    logger.debug("Wrote %d episodes to %s", len(episodes), path)


def read_interventions(path: str | Path) -> list[InterventionSet]:
    """
    Read an intervention-set file.

    Raises:
        DataError: With the line number of the first bad record

    """
    sets = []
    for line, rec in _read_records(Path(path), InterventionRecord):
        try:
            sets.append(InterventionSet(rec.episode_id, np.array(rec.variants, dtype=np.float64), rec.true_label, rec.category))
        except (HybridError, ValueError) as e:
            raise DataError(str(e), line=line, field="variants") from e
    return sets


def write_interventions(path: str | Path, sets: list[InterventionSet]) -> None:
    """Write intervention sets, one JSON object per line."""
    records = [
        InterventionRecord(
            episode_id=s.episode_id,
            category=s.category,
            variants=np.asarray(s.variants).tolist(),
            true_label=s.true_label,
        )
        for s in sets
    ]
    _write_records(Path(path), records)
