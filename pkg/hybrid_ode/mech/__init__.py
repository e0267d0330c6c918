"""Mechanistic glucose-insulin and synthetic vector fields with their causal graphs."""

from .graphs import (
    ACTIVITY_EDGES,
    SYNTHETIC_INPUTS,
    T1DEXI_INPUTS,
    CausalGraph,
    synthetic_graph,
    uva_graphs,
)
from .models import (
    FULL_STATES,
    REDUCED_STATES,
    MealTracker,
    MechKind,
    SyntheticParams,
    UvaFullParams,
    UvaReducedParams,
    default_full_params,
    default_reduced_params,
    meal_sizes,
    resting_full_state,
    resting_reduced_state,
)
from .registry import MechSpec, get_mech
from .synthetic import SYNTHETIC_STATES, synthetic_field
from .uva import FieldResult, k_empt, risk_factor, simulate, uva_full_field, uva_reduced_field

__all__ = [
    "ACTIVITY_EDGES",
    "FULL_STATES",
    "REDUCED_STATES",
    "SYNTHETIC_INPUTS",
    "SYNTHETIC_STATES",
    "T1DEXI_INPUTS",
    "CausalGraph",
    "FieldResult",
    "MealTracker",
    "MechKind",
    "MechSpec",
    "SyntheticParams",
    "UvaFullParams",
    "UvaReducedParams",
    "default_full_params",
    "default_reduced_params",
    "get_mech",
    "k_empt",
    "meal_sizes",
    "resting_full_state",
    "resting_reduced_state",
    "risk_factor",
    "simulate",
    "synthetic_field",
    "synthetic_graph",
    "uva_full_field",
    "uva_graphs",
    "uva_reduced_field",
]
