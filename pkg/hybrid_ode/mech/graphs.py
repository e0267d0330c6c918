"""Causal graphs over model states and inputs."""

from __future__ import annotations

import logging
from collections import deque
from functools import cached_property

import numpy as np
from pydantic import BaseModel, Field, model_validator

from hybrid_ode.core.exceptions import ConfigError

from .models import FULL_STATES, REDUCED_STATES

logger = logging.getLogger(__name__)

T1DEXI_INPUTS: tuple[str, ...] = ("carbs", "insulin", "heart_rate", "steps")
SYNTHETIC_INPUTS: tuple[str, ...] = ("x1", "x2")


class CausalGraph(BaseModel):
    """
    Structural dependencies of a vector field.

    ``A_s[i][j]`` is true when state j enters the derivative of state i and
    ``A_x[i][k]`` is true when input k does.
    """

    state_names: list[str] = Field(..., min_length=1, description="State node names")
    input_names: list[str] = Field(default_factory=list, description="Input node names")
    A_s: list[list[bool]] = Field(..., description="State-to-state adjacency")
    A_x: list[list[bool]] = Field(..., description="Input-to-state adjacency")
    output_state: int = Field(0, ge=0, description="Index of the observed state")
    metadata: dict[str, str] = Field(default_factory=dict, description="Free-form notes")

    model_config = {"extra": "forbid", "frozen": True}

    @model_validator(mode="after")
    def validate_shapes(self) -> CausalGraph:
        """Check matrix shapes and warn about inputs that cannot reach the output."""
        n, k = len(self.state_names), len(self.input_names)
        if self.output_state >= n:
            msg = f"output_state {self.output_state} out of range for {n} states"
            raise ValueError(msg)
        if len(self.A_s) != n or any(len(row) != n for row in self.A_s):
            msg = f"A_s must be {n}x{n}"
            raise ValueError(msg)
        if len(self.A_x) != n or any(len(row) != k for row in self.A_x):
            msg = f"A_x must be {n}x{k}"
            raise ValueError(msg)
        for name in self.unreachable_inputs():
            logger.warning("Input %s has no directed path to output %s", name, self.output_name)
        return self

    @property
    def n_states(self) -> int:
        """Number of states."""
        return len(self.state_names)

    @property
    def n_inputs(self) -> int:
        """Number of inputs."""
        return len(self.input_names)

    @property
    def node_names(self) -> list[str]:
        """States followed by inputs."""
        return [*self.state_names, *self.input_names]

    @property
    def output_name(self) -> str:
        """Name of the observed state."""
        return self.state_names[self.output_state]

    @cached_property
    def state_matrix(self) -> np.ndarray:
        """A_s as a boolean array."""
        return np.array(self.A_s, dtype=bool).reshape(self.n_states, self.n_states)

    @cached_property
    def input_matrix(self) -> np.ndarray:
        """A_x as a boolean array."""
        return np.array(self.A_x, dtype=bool).reshape(self.n_states, self.n_inputs)

    def permitted(self, i: int) -> tuple[list[int], list[int]]:
        """States and inputs allowed to drive the derivative of state i."""
        return (
            [int(j) for j in np.flatnonzero(self.state_matrix[i])],
            [int(k) for k in np.flatnonzero(self.input_matrix[i])],
        )

    def unreachable_inputs(self) -> list[str]:
        """Inputs with no directed path to the output state."""
        A_s, A_x = self.state_matrix, self.input_matrix
        missing = []
        for k, name in enumerate(self.input_names):
            seen = set(np.flatnonzero(A_x[:, k]).tolist())
            queue = deque(seen)
            while queue:
                j = queue.popleft()
                for i in np.flatnonzero(A_s[:, j]).tolist():
                    if i not in seen:
                        seen.add(i)
                        queue.append(i)
            if self.output_state not in seen:
                missing.append(name)
        return missing

    def require_drivers(self) -> None:
        """
        Check that every state has at least one permitted driver.

        Raises:
            ConfigError: If some state has neither a state nor an input parent

        """
        for i, name in enumerate(self.state_names):
            states, inputs = self.permitted(i)
            if not states and not inputs:
                msg = f"State {name} has no permitted inputs; add a self-loop or an input edge"
                raise ConfigError(msg)

    @classmethod
    def from_dependencies(
        cls,
        state_names: tuple[str, ...] | list[str],
        input_names: tuple[str, ...] | list[str],
        dependencies: dict[str, tuple[str, ...]],
        output_state: int = 0,
        metadata: dict[str, str] | None = None,
    ) -> CausalGraph:
        """
        Build a graph from a map of each state to the nodes its derivative reads.

        Raises:
            ConfigError: If a dependency names an unknown node

        """
        s_index = {name: i for i, name in enumerate(state_names)}
        x_index = {name: k for k, name in enumerate(input_names)}
        A_s = [[False] * len(state_names) for _ in state_names]
        A_x = [[False] * len(input_names) for _ in state_names]
        for target, sources in dependencies.items():
            i = s_index[target]
            for source in sources:
                if source in s_index:
                    A_s[i][s_index[source]] = True
                elif source in x_index:
                    A_x[i][x_index[source]] = True
                else:
                    msg = f"Unknown node {source} in dependencies of {target}"
                    raise ConfigError(msg)
        return cls(
            state_names=list(state_names),
            input_names=list(input_names),
            A_s=A_s,
            A_x=A_x,
            output_state=output_state,
            metadata=metadata or {},
        )

    @classmethod
    def dense(cls, n_states: int, input_names: list[str], output_state: int = 0) -> CausalGraph:
        """All-ones graph over ``n_states`` anonymous states."""
        names = [f"h{i}" for i in range(n_states)]
        return cls(
            state_names=names,
            input_names=list(input_names),
            A_s=[[True] * n_states for _ in range(n_states)],
            A_x=[[True] * len(input_names) for _ in range(n_states)],
            output_state=output_state,
        )


# Derivative dependencies read off the implemented equations, algebraic
# intermediates (Ra, EGP, U_id, k_empt, G, I, risk, E) expanded to their states.
REDUCED_DEPENDENCIES: dict[str, tuple[str, ...]] = {
    "G_p": ("G_p", "G_t", "Q_gut", "X_L"),
    "G_t": ("G_p", "G_t", "X"),
    "I_p": ("I_p", "I_l", "insulin"),
    "I_l": ("I_p", "I_l"),
    "Q_sto1": ("Q_sto1", "carbs"),
    "Q_sto2": ("Q_sto1", "Q_sto2"),
    "Q_gut": ("Q_sto1", "Q_sto2", "Q_gut"),
    "X_L": ("I_p", "X_L"),
    "X": ("I_p", "X"),
}

_GLUCOSE_DRIVERS = ("G_p", "G_t", "Q_gut", "X_L", "X_H")

FULL_DEPENDENCIES: dict[str, tuple[str, ...]] = {
    "G_p": _GLUCOSE_DRIVERS,
    "G_t": ("G_p", "G_t", "X", "heart_rate", "steps"),
    "I_p": ("I_p", "I_l", "I_sc1", "I_sc2"),
    "I_l": ("I_p", "I_l"),
    "Q_sto1": ("Q_sto1", "carbs"),
    "Q_sto2": ("Q_sto1", "Q_sto2"),
    "Q_gut": ("Q_sto1", "Q_sto2", "Q_gut"),
    "X_L": ("X_L", "I_r"),
    "I_r": ("I_p", "I_r"),
    "X_H": ("X_H", "Hg"),
    "X": ("I_p", "X", "heart_rate", "steps"),
    "E_acc": ("G_p",),
    "I_sc1": ("I_sc1", "insulin"),
    "I_sc2": ("I_sc1", "I_sc2"),
    "G_s": ("G_p", "G_s"),
    "Hg": ("Hg", "SR_s", "SR_d", "H_sc2"),
    "SR_s": ("G_p", "I_p", "SR_s"),
    "SR_d": _GLUCOSE_DRIVERS,
    "H_sc1": ("H_sc1",),
    "H_sc2": ("H_sc1", "H_sc2"),
}

# Activity edges are not part of the implemented equations.
ACTIVITY_EDGES: tuple[tuple[str, str], ...] = (
    ("heart_rate", "G_t"),
    ("heart_rate", "X"),
    ("steps", "G_t"),
    ("steps", "X"),
)


def synthetic_graph() -> CausalGraph:
    """Single state y driven by itself, x1 and x2."""
    return CausalGraph.from_dependencies(("y",), SYNTHETIC_INPUTS, {"y": ("y", "x1", "x2")})


def uva_graphs() -> dict[str, CausalGraph]:
    """
    Causal graphs of the full and reduced glucose-insulin models.

    Returns:
        Mapping with keys ``full`` and ``reduced``; the output state is G_p

    """
    reconstructed = ";".join(f"{a}->{b}" for a, b in ACTIVITY_EDGES)
    return {
        "full": CausalGraph.from_dependencies(
            FULL_STATES,
            T1DEXI_INPUTS,
            FULL_DEPENDENCIES,
            metadata={"reconstructed_edges": reconstructed},
        ),
        "reduced": CausalGraph.from_dependencies(
            REDUCED_STATES,
            T1DEXI_INPUTS,
            REDUCED_DEPENDENCIES,
        ),
    }
