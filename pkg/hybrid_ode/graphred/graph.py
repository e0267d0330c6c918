"""Directed causal graphs with node roles, a canonical form and a JSON file format."""

from __future__ import annotations

import hashlib
import json
import logging
from collections import deque
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

from pydantic import BaseModel, Field, ValidationError, model_validator

from hybrid_ode.core.exceptions import DataError, GraphError
from hybrid_ode.mech import CausalGraph

logger = logging.getLogger(__name__)

GRAPH_SCHEMA = "h2ncm-graph/1"

Edge = tuple[str, str]


class NodeRole(str, Enum):
    """Role of a node in the dependency graph."""

    INPUT = "input"
    STATE = "state"
    OUTPUT = "output"


class GraphNode(BaseModel):
    """A named node."""

    name: str = Field(..., min_length=1, description="Unique node name")
    role: NodeRole = Field(..., description="input, state or output")

    model_config = {"frozen": True, "extra": "forbid"}


class DiGraph(BaseModel):
    """
    Dependency graph of a vector field.

    An edge ``(a, b)`` means node a enters the derivative of node b. The output
    node is an observed state. ``members`` maps collapsed nodes to the original
    nodes they stand for.
    """

    nodes: list[GraphNode] = Field(..., min_length=1, description="Nodes with roles")
    edges: list[Edge] = Field(default_factory=list, description="Directed edges (from, to)")
    members: dict[str, list[str]] = Field(default_factory=dict, description="Collapsed node contents")
    metadata: dict[str, str] = Field(default_factory=dict, description="Free-form notes")

    model_config = {"frozen": True, "extra": "forbid"}

    @model_validator(mode="after")
    def _check(self) -> DiGraph:
        names = [n.name for n in self.nodes]
        if len(set(names)) != len(names):
            msg = "Node names must be unique"
            raise ValueError(msg)
        outputs = [n.name for n in self.nodes if n.role is NodeRole.OUTPUT]
        if len(outputs) != 1:
            msg = f"A graph needs exactly one output node, got {len(outputs)}"
            raise ValueError(msg)
        known = set(names)
        inputs = {n.name for n in self.nodes if n.role is NodeRole.INPUT}
        if len(set(self.edges)) != len(self.edges):
            msg = "Duplicate edges"
            raise ValueError(msg)
        for a, b in self.edges:
            if a not in known or b not in known:
                msg = f"Edge ({a}, {b}) references an unknown node"
                raise ValueError(msg)
            if b in inputs:
                msg = f"Input {b} has an incoming edge from {a}"
                raise ValueError(msg)
        return self

    # Construction

    @classmethod
    def build(
        cls,
        inputs: Iterable[str],
        states: Iterable[str],
        output: str,
        edges: Iterable[Edge],
        members: dict[str, list[str]] | None = None,
        metadata: dict[str, str] | None = None,
    ) -> DiGraph:
        """
        Canonical graph from node lists and edges.

        Raises:
            GraphError: If the result is not a valid graph

        """
        nodes = [GraphNode(name=n, role=NodeRole.INPUT) for n in inputs]
        nodes += [GraphNode(name=n, role=NodeRole.OUTPUT if n == output else NodeRole.STATE) for n in states]
        if output not in {n.name for n in nodes}:
            nodes.append(GraphNode(name=output, role=NodeRole.OUTPUT))
        try:
            graph = cls(
                nodes=sorted(nodes, key=lambda n: n.name),
                edges=sorted(set((str(a), str(b)) for a, b in edges)),
                members={k: sorted(v) for k, v in sorted((members or {}).items())},
                metadata=dict(metadata or {}),
            )
        except ValidationError as e:
            msg = f"Invalid graph: {e}"
            raise GraphError(msg) from e
        return graph

    @classmethod
    def from_causal(cls, graph: CausalGraph) -> DiGraph:
        """Convert an adjacency-matrix graph."""
        states, inputs = graph.state_names, graph.input_names
        edges = [(states[j], states[i]) for i, j in zip(*graph.state_matrix.nonzero())]
        edges += [(inputs[k], states[i]) for i, k in zip(*graph.input_matrix.nonzero())]
        return cls.build(inputs, states, graph.output_name, edges, metadata=graph.metadata)

    def to_causal(self, input_names: Sequence[str] | None = None) -> CausalGraph:
        """
        Convert to adjacency matrices with inputs in ``input_names`` order.

        Inputs of the dataset missing from the graph get empty columns.

        Raises:
            GraphError: If the graph uses an input not in ``input_names``

        """
        states = self.states
        inputs = list(input_names) if input_names is not None else self.inputs
        extra = set(self.inputs) - set(inputs)
        if extra:
            msg = f"Graph inputs {sorted(extra)} are not dataset inputs"
            raise GraphError(msg)
        s_index = {n: i for i, n in enumerate(states)}
        x_index = {n: k for k, n in enumerate(inputs)}
        A_s = [[False] * len(states) for _ in states]
        A_x = [[False] * len(inputs) for _ in states]
        for a, b in self.edges:
            if a in s_index:
                A_s[s_index[b]][s_index[a]] = True
            else:
                A_x[s_index[b]][x_index[a]] = True
        return CausalGraph(
            state_names=states,
            input_names=inputs,
            A_s=A_s,
            A_x=A_x,
            output_state=s_index[self.output],
            metadata=self.metadata,
        )

    # Queries

    def role(self, name: str) -> NodeRole:
        """Role of a node."""
        for node in self.nodes:
            if node.name == name:
                return node.role
        msg = f"Unknown node {name}"
        raise GraphError(msg)

    @property
    def names(self) -> list[str]:
        """Every node name in canonical order."""
        return [n.name for n in self.nodes]

    @property
    def inputs(self) -> list[str]:
        """Input node names."""
        return [n.name for n in self.nodes if n.role is NodeRole.INPUT]

    @property
    def states(self) -> list[str]:
        """State node names, the output included."""
        return [n.name for n in self.nodes if n.role is not NodeRole.INPUT]

    @property
    def output(self) -> str:
        """Name of the output node."""
        return next(n.name for n in self.nodes if n.role is NodeRole.OUTPUT)

    def successors(self, name: str, self_loops: bool = True) -> list[str]:
        """Targets of the out-edges of a node."""
        return sorted(b for a, b in self.edges if a == name and (self_loops or b != name))

    def predecessors(self, name: str, self_loops: bool = True) -> list[str]:
        """Sources of the in-edges of a node."""
        return sorted(a for a, b in self.edges if b == name and (self_loops or a != name))

    def has_self_loop(self, name: str) -> bool:
        """Whether a node enters its own derivative."""
        return (name, name) in set(self.edges)

    def reachable_from(self, name: str) -> set[str]:
        """Nodes reachable from ``name`` (itself included)."""
        adjacency: dict[str, list[str]] = {}
        for a, b in self.edges:
            adjacency.setdefault(a, []).append(b)
        seen = {name}
        queue = deque([name])
        while queue:
            for nxt in adjacency.get(queue.popleft(), []):
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
        return seen

    def disconnected_inputs(self) -> list[str]:
        """Inputs with no directed path to the output."""
        out = self.output
        return [x for x in self.inputs if out not in self.reachable_from(x)]

    def shortest_path(self, source: str, target: str, via: Optional[str] = None) -> list[str] | None:
        """Shortest directed path from ``source`` to ``target``, optionally through ``via``."""
        if via is not None:
            head = self.shortest_path(source, via)
            tail = self.shortest_path(via, target)
            if head is None or tail is None:
                return None
            return head + tail[1:]
        parent: dict[str, str] = {}
        seen = {source}
        queue = deque([source])
        while queue:
            node = queue.popleft()
            if node == target:
                path = [node]
                while path[-1] != source:
                    path.append(parent[path[-1]])
                return path[::-1]
            for nxt in self.successors(node):
                if nxt not in seen:
                    seen.add(nxt)
                    parent[nxt] = node
                    queue.append(nxt)
        return None

    # Canonical form

    def canonical(self) -> DiGraph:
        """Copy with sorted nodes, edges and members."""
        return DiGraph.build(self.inputs, self.states, self.output, self.edges, self.members, self.metadata)

    def digest(self) -> str:
        """Hash of the canonical structure; equal graphs hash equally regardless of construction order."""
        c = self.canonical()
        payload = json.dumps(
            {"nodes": [[n.name, n.role.value] for n in c.nodes], "edges": [list(e) for e in c.edges]},
            separators=(",", ":"),
        )
        return hashlib.sha256(payload.encode()).hexdigest()

    # Files

    def to_json(self) -> str:
        """Canonical graph file text."""
        c = self.canonical()
        payload = {
            "schema": GRAPH_SCHEMA,
            "nodes": [{"name": n.name, "role": n.role.value} for n in c.nodes],
            "edges": [list(e) for e in c.edges],
        }
        if c.members:
            payload["members"] = c.members
        if c.metadata:
            payload["metadata"] = c.metadata
        return json.dumps(payload, indent=2)

    def save(self, path: str | Path) -> None:
        """Write the graph file."""
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> DiGraph:
        """
        Read a graph file.

        Raises:
            DataError: If the file is unreadable, has another schema or is not a valid graph

        """
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            msg = f"Cannot read graph file {path}: {e}"
            raise DataError(msg) from e
        if raw.pop("schema", None) != GRAPH_SCHEMA:
            msg = f"Graph file {path} is not {GRAPH_SCHEMA}"
            raise DataError(msg, field="schema")
        try:
            raw["edges"] = [tuple(e) for e in raw.get("edges", [])]
            return cls.model_validate(raw).canonical()
        except (ValidationError, GraphError, TypeError) as e:
            msg = f"Invalid graph file {path}: {e}"
            raise DataError(msg) from e

    def __repr__(self) -> str:
        """Return string representation of the graph."""
        return f"DiGraph(nodes={len(self.nodes)}, edges={len(self.edges)}, output={self.output})"
