"""Lookup of mechanistic components by kind."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from hybrid_ode.core.exceptions import ConfigError

from .graphs import SYNTHETIC_INPUTS, T1DEXI_INPUTS, CausalGraph, synthetic_graph, uva_graphs
from .models import (
    FULL_STATES,
    REDUCED_STATES,
    MechKind,
    SyntheticParams,
    UvaFullParams,
    UvaReducedParams,
    default_full_params,
    default_reduced_params,
)
from .synthetic import SYNTHETIC_STATES, synthetic_field
from .uva import FieldFn, full_field_derivative, uva_reduced_field


@dataclass(frozen=True)
class MechSpec:
    """
    Everything a hybrid model needs to embed a mechanistic vector field.

    ``input_roles`` are the dataset inputs the field reads; the remaining
    dataset inputs drive the latent parameter dynamics.
    """

    kind: MechKind
    state_names: tuple[str, ...]
    input_roles: tuple[str, ...]
    dataset_inputs: tuple[str, ...]
    field: FieldFn
    param_names: tuple[str, ...]
    defaults: Callable[[], np.ndarray]
    graph: Callable[[], CausalGraph]

    @property
    def n_states(self) -> int:
        """Number of mechanistic states."""
        return len(self.state_names)

    @property
    def n_params(self) -> int:
        """Number of mechanistic parameters."""
        return len(self.param_names)

    @property
    def unused_inputs(self) -> tuple[str, ...]:
        """Dataset inputs the field does not read."""
        return tuple(name for name in self.dataset_inputs if name not in self.input_roles)


_REGISTRY: dict[MechKind, MechSpec] = {}


def register(spec: MechSpec) -> MechSpec:
    """Add a mechanistic component to the registry."""
    _REGISTRY[spec.kind] = spec
    return spec


def get_mech(kind: MechKind | str) -> MechSpec:
    """
    Return the registered component for a kind.

    Raises:
        ConfigError: If the kind is unknown or has no mechanistic field

    """
    try:
        key = MechKind(kind)
    except ValueError:
        msg = f"Unknown mechanistic model: {kind}"
        raise ConfigError(msg)
    if key not in _REGISTRY:
        msg = f"No mechanistic field registered for {key.value}"
        raise ConfigError(msg)
    return _REGISTRY[key]


register(
    MechSpec(
        kind=MechKind.SYNTHETIC,
        state_names=SYNTHETIC_STATES,
        input_roles=SYNTHETIC_INPUTS,
        dataset_inputs=SYNTHETIC_INPUTS,
        field=synthetic_field,
        param_names=SyntheticParams.names(),
        defaults=lambda: SyntheticParams().as_array(),
        graph=synthetic_graph,
    ),
)

register(
    MechSpec(
        kind=MechKind.REDUCED,
        state_names=REDUCED_STATES,
        input_roles=("carbs", "insulin"),
        dataset_inputs=T1DEXI_INPUTS,
        field=uva_reduced_field,
        param_names=UvaReducedParams.names(),
        defaults=lambda: default_reduced_params().as_array(),
        graph=lambda: uva_graphs()["reduced"],
    ),
)

register(
    MechSpec(
        kind=MechKind.FULL,
        state_names=FULL_STATES,
        input_roles=("carbs", "insulin"),
        dataset_inputs=T1DEXI_INPUTS,
        field=full_field_derivative,
        param_names=UvaFullParams.names(),
        defaults=lambda: default_full_params().as_array(),
        graph=lambda: uva_graphs()["full"],
    ),
)
