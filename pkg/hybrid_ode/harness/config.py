"""Training, grid and cross-validation settings."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError, model_validator
from sklearn.model_selection import ParameterGrid

from hybrid_ode.core.config import DEFAULT_SEED, PARAM_CAP
from hybrid_ode.core.exceptions import ConfigError, InputError
from hybrid_ode.datakit import Standardizer
from hybrid_ode.hybrid import MECH_VARIANTS, HybridConfig, Variant, build_model, variant_config
from hybrid_ode.losses import ScoreFn
from hybrid_ode.mech import SYNTHETIC_INPUTS, MechKind

logger = logging.getLogger(__name__)

GRID_SCHEMA = "h2ncm-grid/1"

GridValue = Union[int, float, str]


class TrainConfig(BaseModel):
    """Optimizer and objective settings of one training run."""

    lr: float = Field(2e-3, gt=0.0, description="Adam learning rate")
    epochs: int = Field(100, ge=1, description="Passes over the training split")
    closure_epochs: int = Field(50, ge=1, description="Epochs of the LPSC closure phase")
    alpha: float = Field(0.0, ge=0.0, le=1.0, description="Weight of the causal loss")
    phi: float = Field(1.0, gt=0.0, description="Softmax temperature of the causal loss")
    batch_size: Optional[int] = Field(32, ge=1, description="Episodes per step; None for full batch")
    score: ScoreFn = Field(default_factory=ScoreFn, description="Trajectory score of the causal loss")
    divergence_patience: int = Field(3, ge=1, description="Divergent epochs in a row before halving lr")
    seed: int = Field(DEFAULT_SEED, description="Seed of initialization, shuffling and dropout")

    model_config = {"frozen": True, "extra": "forbid"}


def default_train_config(variant: Variant | str, input_names: tuple[str, ...], **overrides: Any) -> TrainConfig:
    """
    Published learning rate and epoch budget for a variant.

    Mechanistic models use 0.1 on real data and 0.5 on synthetic data; LP and
    LPSC use 0.01 on synthetic data; everything else uses 2e-3.
    """
    v = Variant(variant)
    synthetic = tuple(input_names) == SYNTHETIC_INPUTS
    lr = 2e-3
    if v is Variant.UVA:
        lr = 5e-1 if synthetic else 1e-1
    elif v in (Variant.LP, Variant.LPSC) and synthetic:
        lr = 1e-2
    fields: dict[str, Any] = {"lr": lr, "epochs": 50 if synthetic else 100}
    fields.update(overrides)
    return TrainConfig(**fields)


class CvConfig(BaseModel):
    """Repeated nested cross-validation layout."""

    repeats: int = Field(3, ge=1, description="Repeats R with fresh permutations")
    outer_folds: int = Field(6, ge=2, description="Outer folds N")
    inner_folds: int = Field(4, ge=2, description="Inner folds M")
    seed: int = Field(DEFAULT_SEED, description="Base seed s; repeat r uses s + r - 2")

    model_config = {"frozen": True, "extra": "forbid"}

    def repeat_seed(self, r: int) -> int:
        """Seed of repeat r (1-based)."""
        return self.seed + r - 2


class GridSpec(BaseModel):
    """
    Hyperparameter points of one variant.

    Each point holds :class:`HybridConfig` overrides such as ``hidden_layers``,
    ``hidden_units``, ``latent_dim`` and ``dropout``.
    """

    variant: Variant = Field(..., description="Model variant")
    mech: Optional[MechKind] = Field(None, description="Mechanistic model; preset when None")
    points: list[dict[str, GridValue]] = Field(..., min_length=1, description="Config overrides per point")

    model_config = {"frozen": True, "extra": "forbid"}

    @classmethod
    def from_axes(
        cls,
        variant: Variant | str,
        axes: dict[str, list[GridValue]],
        mech: MechKind | None = None,
    ) -> GridSpec:
        """Cartesian product of per-field value lists, in a stable order."""
        order = list(axes)
        points = [{k: p[k] for k in order} for p in ParameterGrid({k: list(v) for k, v in axes.items()})]
        return cls(variant=Variant(variant), mech=mech, points=points)

    def config(self, index: int, input_names: tuple[str, ...], horizon: int) -> HybridConfig:
        """Model config of one grid point."""
        overrides: dict[str, Any] = dict(self.points[index])
        if self.mech is not None:
            overrides["mech"] = self.mech
        return variant_config(self.variant, input_names, horizon, **overrides)

    def configs(self, input_names: tuple[str, ...], horizon: int) -> list[HybridConfig]:
        """Model configs of every point, in grid order."""
        return [self.config(i, input_names, horizon) for i in range(len(self.points))]

    def param_counts(self, input_names: tuple[str, ...], horizon: int) -> list[int]:
        """Trainable parameter count of every point."""
        placeholder = _placeholder_standardizer(input_names)
        return [build_model(cfg, placeholder, cap=None).param_count for cfg in self.configs(input_names, horizon)]

    def check_cap(self, input_names: tuple[str, ...], horizon: int, cap: int = PARAM_CAP) -> None:
        """
        Reject grids with a point at or over the parameter cap.

        Raises:
            ConfigError: Naming the first offending point and its count

        """
        for point, count in zip(self.points, self.param_counts(input_names, horizon)):
            if count >= cap:
                msg = f"Grid point {point} of {self.variant.value} has {count} parameters; the cap is {cap}"
                raise ConfigError(msg)

    def within_cap(self, input_names: tuple[str, ...], horizon: int, cap: int = PARAM_CAP) -> GridSpec:
        """Copy without the points at or over the cap."""
        counts = self.param_counts(input_names, horizon)
        kept = [p for p, n in zip(self.points, counts) if n < cap]
        if not kept:
            msg = f"Every {self.variant.value} grid point reaches the cap of {cap} parameters"
            raise ConfigError(msg)
        if len(kept) < len(self.points):
            logger.info("Dropped %d %s grid points over the parameter cap", len(self.points) - len(kept), self.variant.value)
        return GridSpec(variant=self.variant, mech=self.mech, points=kept)

    def save(self, path: str | Path) -> None:
        """Write the grid as JSON."""
        payload = {"schema": GRID_SCHEMA, **self.model_dump(mode="json")}
        Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")

    @classmethod
    def load(
        cls,
        path: str | Path,
        input_names: tuple[str, ...],
        horizon: int,
        cap: int = PARAM_CAP,
    ) -> GridSpec:
        """
        Read a grid file and enforce the parameter cap.

        Raises:
            ConfigError: If the file is invalid or a point reaches the cap

        """
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
            raw.pop("schema", None)
            grid = cls.model_validate(raw)
        except (OSError, json.JSONDecodeError, ValidationError) as e:
            msg = f"Invalid grid file {path}: {e}"
            raise ConfigError(msg) from e
        grid.check_cap(input_names, horizon, cap)
        return grid

    @model_validator(mode="after")
    def _check_points(self) -> GridSpec:
        allowed = set(HybridConfig.model_fields) - {"variant", "input_names", "horizon", "graph", "mech"}
        for point in self.points:
            unknown = set(point) - allowed
            if unknown:
                msg = f"Unknown grid fields {sorted(unknown)}"
                raise ValueError(msg)
        return self


def _placeholder_standardizer(input_names: tuple[str, ...]) -> Standardizer:
    n = len(input_names) + 1
    return Standardizer(["y", *input_names], np.zeros(n), np.ones(n))


_REAL_AXES: dict[Variant, dict[str, list[GridValue]]] = {
    Variant.UVA: {"encoder_layers": [2]},
    Variant.LP: {"hidden_layers": [2, 3, 4], "hidden_units": [16, 32, 48], "latent_dim": [8, 12, 16]},
    Variant.LPSC: {"hidden_layers": [2, 3], "hidden_units": [16, 32], "latent_dim": [8, 16]},
    Variant.MNODE: {"hidden_layers": [2, 3], "hidden_units": [16, 24, 32]},
    Variant.BNODE: {
        "latent_dim": [4, 5, 6],
        "hidden_layers": [2, 3],
        "hidden_units": [32, 48, 60],
        "dropout": [0.0, 0.1, 0.2],
    },
    Variant.LSTM: {"hidden_layers": [2, 3, 4], "hidden_units": [8, 12, 16], "dropout": [0.0, 0.1, 0.2]},
}

_SYNTHETIC_AXES: dict[Variant, dict[str, list[GridValue]]] = {
    Variant.UVA: {"encoder_layers": [2]},
    Variant.LP: {"hidden_layers": [2, 3], "hidden_units": [16, 32], "latent_dim": [2, 4]},
    Variant.LPSC: {"hidden_layers": [2, 3], "hidden_units": [16, 32], "latent_dim": [2, 4]},
    Variant.MNODE: {"hidden_layers": [2, 3], "hidden_units": [16, 32]},
    Variant.BNODE: {"latent_dim": [2, 3], "hidden_layers": [2, 3], "hidden_units": [64], "dropout": [0.0, 0.2]},
    Variant.LSTM: {"hidden_layers": [2, 3], "hidden_units": [8, 16], "dropout": [0.0, 0.2]},
}

_FULL_AXES: dict[Variant, dict[str, list[GridValue]]] = {
    Variant.LP: {"hidden_layers": [2, 3], "hidden_units": [16, 24, 32], "latent_dim": [20, 24, 28]},
    Variant.MNODE: {"hidden_layers": [2, 3], "hidden_units": [16, 32]},
}


def default_grid(
    variant: Variant | str,
    input_names: tuple[str, ...],
    horizon: int,
    mech: MechKind | None = None,
    cap: int = PARAM_CAP,
) -> GridSpec:
    """
    Shipped grid of a variant for a dataset schema, restricted to the cap.

    ``mech=MechKind.FULL`` selects the full-model LP and MNODE grids.

    Raises:
        ConfigError: If the variant has no grid for the requested model
        InputError: If no inputs are given

    """
    if not input_names:
        msg = "A grid needs the dataset's input names"
        raise InputError(msg)
    v = Variant(variant)
    if mech is MechKind.FULL:
        if v not in _FULL_AXES:
            msg = f"No full-model grid for {v.value}"
            raise ConfigError(msg)
        axes = _FULL_AXES[v]
    elif tuple(input_names) == SYNTHETIC_INPUTS:
        axes = _SYNTHETIC_AXES[v]
    else:
        axes = _REAL_AXES[v]
    grid_mech = mech if (mech is not None and (v in MECH_VARIANTS or v is Variant.MNODE)) else None
    return GridSpec.from_axes(v, axes, grid_mech).within_cap(tuple(input_names), horizon, cap)
