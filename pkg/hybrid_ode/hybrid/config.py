"""Hybrid model configuration and variant presets."""

from __future__ import annotations

from enum import Enum
from typing import Literal, Optional

from pydantic import BaseModel, Field, model_validator

from hybrid_ode.core.exceptions import ConfigError
from hybrid_ode.mech import SYNTHETIC_INPUTS, CausalGraph, MechKind, get_mech


class Variant(str, Enum):
    """Position of a model in the hybrid spectrum."""

    UVA = "uva"
    LP = "lp"
    LPSC = "lpsc"
    MNODE = "mnode"
    BNODE = "bnode"
    LSTM = "lstm"


# (c1, c2, c3, c4): mechanistic term, neural term, latent into the neural term,
# latent modulation of the mechanistic parameters.
SWITCHES: dict[Variant, tuple[int, int, int, int]] = {
    Variant.UVA: (1, 0, 0, 0),
    Variant.LP: (1, 0, 0, 1),
    Variant.LPSC: (1, 1, 0, 1),
    Variant.MNODE: (0, 1, 0, 0),
    Variant.BNODE: (0, 1, 0, 0),
    Variant.LSTM: (0, 0, 0, 0),
}

MECH_VARIANTS = frozenset({Variant.UVA, Variant.LP, Variant.LPSC})
LATENT_VARIANTS = frozenset({Variant.LP, Variant.LPSC})
GRAPH_VARIANTS = frozenset({Variant.LPSC, Variant.MNODE, Variant.BNODE})


class HybridConfig(BaseModel):
    """
    Complete description of one hybrid model.

    ``graph`` is the mask of the neural term: the decoder graph for MNODE and
    BNODE and the closure graph for LPSC. Build configs with :func:`variant_config`,
    which fills in the graph and mechanistic model for a dataset schema.
    """

    variant: Variant = Field(..., description="Model variant")
    input_names: tuple[str, ...] = Field(..., min_length=1, description="Dataset inputs in column order")
    horizon: int = Field(..., ge=1, description="Prediction steps q")
    mech: MechKind = Field(MechKind.NONE, description="Embedded mechanistic model")
    graph: Optional[CausalGraph] = Field(None, description="Mask of the neural term")
    hidden_layers: int = Field(2, ge=1, description="Hidden layers n of every MLP")
    hidden_units: int = Field(16, ge=1, description="Hidden units m of every MLP")
    latent_dim: int = Field(0, ge=0, description="Latent size d (LP/LPSC) or state count (BNODE)")
    dropout: float = Field(0.0, ge=0.0, lt=1.0, description="Dropout probability a")
    encoder_layers: int = Field(2, ge=1, description="Stacked LSTM layers of the context encoder")
    encoder_hidden: Optional[int] = Field(None, ge=1, description="Encoder width; derived when None")
    closure_layers: int = Field(2, ge=1, description="Hidden layers of the LPSC closure MLPs")
    w: Literal[0, 1] = Field(0, description="LPSC closure gate")
    dt: float = Field(1.0, gt=0.0, description="Euler step in internal time units")
    synthetic_init: bool = Field(False, description="Start from s0 = y0 without the encoder")
    mech_init: Literal["random", "default"] = Field("random", description="Mechanistic parameter start")
    beta_uses_inputs: bool = Field(False, description="Feed inputs to the parameter network")

    model_config = {"frozen": True, "extra": "forbid"}

    @model_validator(mode="after")
    def _check_variant(self) -> HybridConfig:
        if self.variant in MECH_VARIANTS and self.mech is MechKind.NONE:
            msg = f"Variant {self.variant.value} needs a mechanistic model"
            raise ValueError(msg)
        if self.variant not in MECH_VARIANTS and self.mech is not MechKind.NONE:
            msg = f"Variant {self.variant.value} has no mechanistic term"
            raise ValueError(msg)
        if self.variant in GRAPH_VARIANTS and self.graph is None:
            msg = f"Variant {self.variant.value} needs a causal graph"
            raise ValueError(msg)
        if self.variant in LATENT_VARIANTS and self.latent_dim < 1:
            msg = f"Variant {self.variant.value} needs latent_dim >= 1"
            raise ValueError(msg)
        if self.graph is not None and tuple(self.graph.input_names) != self.input_names:
            msg = f"Graph inputs {self.graph.input_names} differ from dataset inputs {self.input_names}"
            raise ValueError(msg)
        if self.variant is not Variant.LPSC and self.w != 0:
            msg = "The closure gate only applies to LPSC"
            raise ValueError(msg)
        return self

    @property
    def switches(self) -> tuple[int, int, int, int]:
        """(c1, c2, c3, c4)."""
        return SWITCHES[self.variant]

    @property
    def state_names(self) -> tuple[str, ...]:
        """Names of the rollout states."""
        if self.variant in MECH_VARIANTS:
            return get_mech(self.mech).state_names
        if self.graph is not None:
            return tuple(self.graph.state_names)
        return ()

    @property
    def state_dim(self) -> int:
        """Number of rollout states."""
        return len(self.state_names)

    @property
    def output_state(self) -> int:
        """Index of the observed state (the projection H)."""
        if self.variant in MECH_VARIANTS:
            return get_mech(self.mech).graph().output_state
        if self.graph is not None:
            return self.graph.output_state
        return 0

    @property
    def n_inputs(self) -> int:
        """Number of dataset inputs."""
        return len(self.input_names)


def variant_config(
    variant: Variant | str,
    input_names: tuple[str, ...],
    horizon: int,
    graph: CausalGraph | None = None,
    **overrides: object,
) -> HybridConfig:
    """
    Preset for a variant on a dataset schema.

    Synthetic inputs select the synthetic mechanistic model and the single-state
    graph with ``s0 = y0``; any other schema uses the reduced glucose-insulin
    model and its graph. ``overrides`` replace individual fields.

    Raises:
        ConfigError: If the variant is unknown or the resulting config is invalid

    """
    try:
        v = Variant(variant)
    except ValueError:
        msg = f"Unknown model variant: {variant}"
        raise ConfigError(msg) from None
    names = tuple(input_names)
    synthetic = names == SYNTHETIC_INPUTS
    mech_kind = MechKind(overrides.pop("mech", MechKind.SYNTHETIC if synthetic else MechKind.REDUCED))  # type: ignore[arg-type]
    fields: dict[str, object] = {"variant": v, "input_names": names, "horizon": horizon}

    if v in MECH_VARIANTS:
        mech = get_mech(mech_kind)
        missing = set(mech.input_roles) - set(names)
        if missing:
            msg = f"Mechanistic model {mech_kind.value} needs inputs {sorted(missing)}"
            raise ConfigError(msg)
        fields["mech"] = mech_kind
        fields["synthetic_init"] = synthetic
        if v in LATENT_VARIANTS:
            fields["latent_dim"] = 2 if synthetic else 8
        if v is Variant.LPSC:
            fields["graph"] = graph or _restrict(mech.graph(), names)
    elif v is Variant.MNODE:
        fields["graph"] = graph or _restrict(get_mech(mech_kind).graph(), names)
        fields["synthetic_init"] = synthetic
    elif v is Variant.BNODE:
        fields["latent_dim"] = 2 if synthetic else 4
    elif v is Variant.LSTM:
        fields["hidden_layers"] = 2
        fields["hidden_units"] = 8 if synthetic else 12

    fields.update(overrides)
    if v is Variant.BNODE and "graph" not in fields:
        fields["graph"] = graph or CausalGraph.dense(int(fields["latent_dim"]), names)  # type: ignore[call-overload]
    try:
        return HybridConfig(**fields)  # type: ignore[arg-type]
    except ValueError as e:
        msg = f"Invalid {v.value} configuration: {e}"
        raise ConfigError(msg) from e


def _restrict(graph: CausalGraph, names: tuple[str, ...]) -> CausalGraph:
    """Reorder a graph's input columns to a dataset's column order."""
    if tuple(graph.input_names) == names:
        return graph
    missing = set(graph.input_names) - set(names)
    if missing:
        msg = f"Graph needs inputs {sorted(missing)} that the dataset lacks"
        raise ConfigError(msg)
    cols = [graph.input_names.index(n) if n in graph.input_names else None for n in names]
    return CausalGraph(
        state_names=graph.state_names,
        input_names=list(names),
        A_s=graph.A_s,
        A_x=[[bool(c is not None and row[c]) for c in cols] for row in graph.A_x],
        output_state=graph.output_state,
        metadata=graph.metadata,
    )
