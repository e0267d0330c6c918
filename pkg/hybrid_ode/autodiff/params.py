"""Flat parameter storage, seeded random streams and initialization schemes."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from hybrid_ode.core.exceptions import ConfigError, DataError, NumericError, ShapeError

logger = logging.getLogger(__name__)

RNG_ALGORITHM = "PCG64"


class SeededRng:
    """
    Deterministic random stream backed by numpy's PCG64 bit generator.

    Child streams are derived from the base seed and a tuple of integer keys through
    ``numpy.random.SeedSequence``, so the same (seed, keys) always produces the same
    numbers regardless of how many other streams were drawn before.
    """

    algorithm = RNG_ALGORITHM

    def __init__(self, seed: int, keys: tuple[int, ...] = ()) -> None:
        """
        Initialize the stream.

        Args:
            seed: 64-bit base seed
            keys: Integer path identifying a derived stream

        """
        self.seed = int(seed)
        self.keys = tuple(int(k) for k in keys)
        sequence = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, *self.keys])
        self.generator = np.random.Generator(np.random.PCG64(sequence))

    def derive(self, *keys: int | str) -> SeededRng:
        """Return an independent child stream identified by ``keys``."""
        return SeededRng(self.seed, self.keys + tuple(_key(k) for k in keys))

    def normal(self, scale: float, size: int | tuple[int, ...]) -> np.ndarray:
        """Draw zero-mean normal samples with the given standard deviation."""
        return self.generator.normal(0.0, scale, size)

    def uniform(
        self,
        low: float | np.ndarray,
        high: float | np.ndarray,
        size: int | tuple[int, ...] | None = None,
    ) -> np.ndarray:
        """Draw uniform samples from [low, high)."""
        return self.generator.uniform(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        """Return a random permutation of ``range(n)``."""
        return self.generator.permutation(n)

    def integers(self, high: int, size: int | None = None) -> Any:
        """Draw integers from [0, high)."""
        return self.generator.integers(0, high, size)

    def __repr__(self) -> str:
        """Return string representation of the stream."""
        return f"SeededRng(seed={self.seed}, keys={self.keys}, algorithm={self.algorithm})"


def _key(k: int | str) -> int:
    if isinstance(k, int):
        return k
    # Stable across processes, unlike hash(); covers the whole key.
    return int.from_bytes(hashlib.sha256(k.encode("utf-8")).digest()[:8], "little")


class InitScheme(str, Enum):
    """Parameter initialization schemes."""

    MECHANISTIC = "mechanistic"
    STANDARD_NORMAL = "standard_normal"
    FAN_IN_UNIFORM = "fan_in_uniform"


MECHANISTIC_VARIANCE = 1.0 / 400.0


@dataclass(frozen=True)
class SegmentSpec:
    """
    Layout entry for one named parameter segment.

    ``bounds`` holds the per-entry fan-in bound for library layers; it is None for
    segments initialized from a normal distribution.
    """

    name: str
    size: int
    scheme: InitScheme
    bounds: np.ndarray | None = None


@dataclass
class ParamLayout:
    """Ordered collection of segment specs describing a model's parameters."""

    segments: list[SegmentSpec] = field(default_factory=list)

    def add(
        self,
        name: str,
        size: int,
        scheme: InitScheme,
        bounds: np.ndarray | None = None,
    ) -> None:
        """Append a segment; names must be unique."""
        if any(s.name == name for s in self.segments):
            msg = f"Duplicate parameter segment: {name}"
            raise ConfigError(msg)
        if bounds is not None and len(bounds) != size:
            msg = f"Segment {name}: {len(bounds)} bounds for {size} entries"
            raise ShapeError(msg)
        self.segments.append(SegmentSpec(name, int(size), scheme, bounds))

    @property
    def total(self) -> int:
        """Total number of scalar parameters."""
        return sum(s.size for s in self.segments)

    def offsets(self) -> dict[str, tuple[int, int]]:
        """Map each segment name to its (offset, length)."""
        result: dict[str, tuple[int, int]] = {}
        offset = 0
        for spec in self.segments:
            result[spec.name] = (offset, spec.size)
            offset += spec.size
        return result


class SegmentRecord(BaseModel):
    """Serialized location of one segment."""

    offset: int = Field(..., ge=0, description="Start index in the flat vector")
    len: int = Field(..., ge=0, description="Number of entries")

    model_config = {"extra": "forbid"}


class ParamVectorRecord(BaseModel):
    """JSON form of a parameter vector."""

    segments: dict[str, SegmentRecord] = Field(..., description="Segment locations")
    values: list[float] = Field(..., description="Flat parameter values")

    model_config = {"extra": "forbid"}


class ParamVector:
    """
    Flat double-precision parameter array with named segments.

    Segments are disjoint and cover the array exactly. ``segment`` returns a view,
    so in-place edits of a segment edit the vector.
    """

    def __init__(self, values: Any, segments: dict[str, tuple[int, int]]) -> None:
        """
        Initialize the vector.

        Args:
            values: Flat array of parameter values
            segments: Map from segment name to (offset, length)

        Raises:
            ShapeError: If the segments do not tile the array
            NumericError: If any value is non-finite

        """
        self.values = np.array(values, dtype=np.float64).reshape(-1)
        self.segments = dict(segments)
        self._validate()

    def _validate(self) -> None:
        spans = sorted(self.segments.values())
        cursor = 0
        for offset, length in spans:
            if offset != cursor or length < 0:
                msg = f"Segments must tile [0, {len(self.values)}) without gaps or overlaps"
                raise ShapeError(msg)
            cursor = offset + length
        if cursor != len(self.values):
            msg = f"Segments cover {cursor} entries but vector has {len(self.values)}"
            raise ShapeError(msg)
        if not np.all(np.isfinite(self.values)):
            msg = "Parameter vector contains non-finite values"
            raise NumericError(msg)

    @classmethod
    def zeros(cls, layout: ParamLayout) -> ParamVector:
        """Create an all-zero vector for a layout."""
        return cls(np.zeros(layout.total), layout.offsets())

    def __len__(self) -> int:
        """Total number of parameters."""
        return len(self.values)

    def span(self, name: str) -> slice:
        """Return the slice of a segment in the flat array."""
        try:
            offset, length = self.segments[name]
        except KeyError:
            msg = f"Unknown parameter segment: {name}"
            raise ConfigError(msg)
        return slice(offset, offset + length)

    def segment(self, name: str) -> np.ndarray:
        """Return a writable view of a segment."""
        return self.values[self.span(name)]

    def mask(self, names: list[str]) -> np.ndarray:
        """Return a boolean mask selecting the given segments."""
        selected = np.zeros(len(self.values), dtype=bool)
        for name in names:
            selected[self.span(name)] = True
        return selected

    def copy(self) -> ParamVector:
        """Return a deep copy."""
        return ParamVector(self.values.copy(), self.segments)

    def with_values(self, values: np.ndarray) -> ParamVector:
        """Return a vector with the same layout and new values."""
        return ParamVector(values, self.segments)

    def to_record(self) -> ParamVectorRecord:
        """Convert to the JSON record."""
        return ParamVectorRecord(
            segments={
                name: SegmentRecord(offset=offset, len=length)
                for name, (offset, length) in self.segments.items()
            },
            values=[float(v) for v in self.values],
        )

    @classmethod
    def from_record(cls, record: ParamVectorRecord) -> ParamVector:
        """Build a vector from its JSON record."""
        return cls(
            np.array(record.values, dtype=np.float64),
            {name: (s.offset, s.len) for name, s in record.segments.items()},
        )

    def to_json(self) -> str:
        """
        Serialize to JSON.

        Floats are written with their shortest round-trip representation, which
        restores every double bit-exactly.
        """
        return json.dumps(self.to_record().model_dump())

    @classmethod
    def from_json(cls, text: str) -> ParamVector:
        """Parse a vector from JSON."""
        try:
            record = ParamVectorRecord.model_validate_json(text)
        except ValidationError as e:
            msg = f"Invalid parameter vector: {e}"
            raise DataError(msg)
        return cls.from_record(record)

    def __repr__(self) -> str:
        """Return string representation of the vector."""
        return f"ParamVector(n={len(self.values)}, segments={list(self.segments)})"


def fan_in_bounds(fan_in: int, size: int) -> np.ndarray:
    """Bounds of 1/sqrt(fan_in) for ``size`` entries."""
    return np.full(size, 1.0 / np.sqrt(max(fan_in, 1)))


def init_params(
    layout: ParamLayout,
    rng: SeededRng,
    scheme: InitScheme | str | None = None,
) -> ParamVector:
    """
    Initialize a parameter vector.

    Each segment uses its own scheme unless ``scheme`` overrides all of them.
    Every segment draws from its own derived stream, so adding a segment does not
    change the draws of the others.

    Args:
        layout: Segment layout of the model
        rng: Random stream
        scheme: Optional scheme applied to every segment

    Returns:
        Initialized ParamVector

    Raises:
        ConfigError: If the scheme is unknown

    """
    override: InitScheme | None = None
    if scheme is not None:
        try:
            override = InitScheme(scheme)
        except ValueError:
            msg = f"Unknown init scheme: {scheme}"
            raise ConfigError(msg)

    params = ParamVector.zeros(layout)
    for spec in layout.segments:
        stream = rng.derive("init", spec.name)
        chosen = override or spec.scheme
        if chosen is InitScheme.MECHANISTIC:
            draw = stream.normal(np.sqrt(MECHANISTIC_VARIANCE), spec.size)
        elif chosen is InitScheme.STANDARD_NORMAL:
            draw = stream.normal(1.0, spec.size)
        else:
            bounds = spec.bounds if spec.bounds is not None else np.ones(spec.size)
            draw = stream.uniform(-bounds, bounds)
        params.segment(spec.name)[:] = draw
    logger.debug("Initialized %d parameters in %d segments", len(params), len(layout.segments))
    return params
