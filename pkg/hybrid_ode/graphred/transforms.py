"""Structural graph transforms: SCC collapse, parallel-path merge and path shortening."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Optional

from hybrid_ode.core.exceptions import GraphError

from .graph import DiGraph, NodeRole

logger = logging.getLogger(__name__)

NodePath = tuple[str, ...]


class StepKind(str, Enum):
    """Reduction phase a step belongs to."""

    COLLAPSE_SCC = "collapse_scc"
    MERGE_PATHS = "merge_paths"
    SHORTEN_PATH = "shorten_path"


@dataclass(frozen=True)
class ReductionStep:
    """One candidate transform."""

    kind: StepKind
    nodes: tuple[str, ...] = ()
    paths: tuple[NodePath, ...] = ()
    node: Optional[str] = None

    def describe(self) -> str:
        """Stable one-line description used in audit logs."""
        if self.kind is StepKind.COLLAPSE_SCC:
            return "collapse {" + ",".join(self.nodes) + "}"
        if self.kind is StepKind.MERGE_PATHS:
            return "merge " + " | ".join("->".join(p) for p in self.paths)
        return f"shorten {self.node} on " + "->".join(self.paths[0])

    def apply(self, graph: DiGraph) -> DiGraph | None:
        """Transformed graph, or None if the step's preconditions fail on ``graph``."""
        if self.kind is StepKind.COLLAPSE_SCC:
            return collapse_scc(graph, self.nodes)
        if self.kind is StepKind.MERGE_PATHS:
            return merge_paths(graph, self.paths)
        assert self.node is not None
        return shorten_path(graph, self.paths[0], self.node)


def find_sccs(graph: DiGraph) -> list[tuple[str, ...]]:
    """
    Strongly connected components that are candidates for collapsing.

    Components are maximal; singletons count only when they have a self-loop.
    Each component is sorted and the list is in canonical order.
    """
    adjacency = {n: graph.successors(n) for n in graph.names}
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    stack: list[str] = []
    on_stack: set[str] = set()
    components: list[tuple[str, ...]] = []
    counter = 0

    for root in graph.names:
        if root in index:
            continue
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        work: list[tuple[str, Iterator[str]]] = [(root, iter(adjacency[root]))]
        while work:
            node, it = work[-1]
            descended = False
            for nxt in it:
                if nxt not in index:
                    index[nxt] = low[nxt] = counter
                    counter += 1
                    stack.append(nxt)
                    on_stack.add(nxt)
                    work.append((nxt, iter(adjacency[nxt])))
                    descended = True
                    break
                if nxt in on_stack:
                    low[node] = min(low[node], index[nxt])
            if descended:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
            if low[node] == index[node]:
                component = []
                while True:
                    member = stack.pop()
                    on_stack.discard(member)
                    component.append(member)
                    if member == node:
                        break
                components.append(tuple(sorted(component)))

    kept = [c for c in components if len(c) > 1 or graph.has_self_loop(c[0])]
    return sorted(kept)


def _collapsed_name(nodes: tuple[str, ...]) -> str:
    return "+".join(nodes)


def collapse_scc(graph: DiGraph, scc: tuple[str, ...] | list[str]) -> DiGraph:
    """
    Replace a strongly connected component by one self-looped node.

    The new node inherits every external in- and out-edge and the output role
    when the output is inside the component. Collapsing a self-looped singleton
    returns the graph unchanged.

    Raises:
        GraphError: If ``scc`` is not a current component, or the output is lost

    """
    members = tuple(sorted(scc))
    if members not in find_sccs(graph):
        msg = f"{list(members)} is not a strongly connected component of the graph"
        raise GraphError(msg)
    if len(members) == 1:
        return graph
    inside = set(members)
    new = _collapsed_name(members)
    if new in graph.names:
        msg = f"Collapsed node name {new} is already taken"
        raise GraphError(msg)

    def rename(n: str) -> str:
        return new if n in inside else n

    groups = {k: v for k, v in graph.members.items() if k not in inside}
    groups[new] = sorted({orig for m in members for orig in graph.members.get(m, [m])})
    output = new if graph.output in inside else graph.output
    result = DiGraph.build(
        graph.inputs,
        [s for s in graph.states if s not in inside] + [new],
        output,
        [(rename(a), rename(b)) for a, b in graph.edges],
        groups,
        graph.metadata,
    )
    if result.output != output:
        msg = f"Collapsing {list(members)} lost the output node"
        raise GraphError(msg)
    logger.debug("Collapsed %s into %s", members, new)
    return result


def _is_chain_node(graph: DiGraph, name: str) -> bool:
    """State (not output) with exactly one parent and one child, self-loops aside."""
    return (
        graph.role(name) is NodeRole.STATE
        and len(graph.predecessors(name, self_loops=False)) == 1
        and len(graph.successors(name, self_loops=False)) == 1
    )


def _remove_nodes(
    graph: DiGraph,
    removed: set[str],
    add: set[tuple[str, str]] | None = None,
    drop: set[tuple[str, str]] | None = None,
) -> DiGraph:
    dropped = drop or set()
    edges = [(a, b) for a, b in graph.edges if a not in removed and b not in removed and (a, b) not in dropped]
    edges += sorted(add or set())
    return DiGraph.build(
        graph.inputs,
        [s for s in graph.states if s not in removed],
        graph.output,
        edges,
        {k: v for k, v in graph.members.items() if k not in removed},
        graph.metadata,
    )


def parallel_paths(graph: DiGraph) -> list[tuple[NodePath, ...]]:
    """
    Groups of internally disjoint paths sharing both endpoints.

    Internal nodes of a path are chain nodes, so they touch nothing outside the
    path. A direct edge counts as a path without internal nodes.
    """
    chain = {n for n in graph.states if _is_chain_node(graph, n)}
    groups: dict[tuple[str, str], list[NodePath]] = defaultdict(list)
    for source in graph.names:
        for first in graph.successors(source, self_loops=False):
            path = [source]
            node = first
            while node in chain and node not in path:
                path.append(node)
                node = graph.successors(node, self_loops=False)[0]
            if node in path:
                continue
            path.append(node)
            groups[(source, node)].append(tuple(path))
    return [tuple(sorted(paths)) for _, paths in sorted(groups.items()) if len(paths) > 1]


def merge_paths(graph: DiGraph, paths: tuple[NodePath, ...] | list[NodePath]) -> DiGraph | None:
    """
    Keep only the longest of a group of parallel paths.

    Ties keep the lexicographically smallest node sequence. A one-path group
    returns the graph unchanged.

    Returns:
        Merged graph, or None if the group violates the preconditions

    """
    group = [tuple(p) for p in paths]
    if len(group) < 2:
        return graph
    names = set(graph.names)
    edges = set(graph.edges)
    source, dest = group[0][0], group[0][-1]
    seen_internal: set[str] = set()
    for p in group:
        if len(p) < 2 or p[0] != source or p[-1] != dest or source == dest:
            logger.debug("Rejected merge: paths do not share endpoints")
            return None
        if any(n not in names for n in p) or any((a, b) not in edges for a, b in zip(p, p[1:])):
            logger.debug("Rejected merge: %s is not a path of the graph", p)
            return None
        internal = set(p[1:-1])
        if internal & seen_internal or not all(_is_chain_node(graph, n) for n in internal):
            logger.debug("Rejected merge: %s is not isolated", p)
            return None
        seen_internal |= internal
    if len(set(group)) != len(group):
        return None

    keep = min(group, key=lambda p: (-len(p), p))
    removed_nodes: set[str] = set()
    removed_edges: set[tuple[str, str]] = set()
    for p in group:
        if p == keep:
            continue
        removed_nodes |= set(p[1:-1])
        if len(p) == 2:
            removed_edges.add((p[0], p[1]))
    result = _remove_nodes(graph, removed_nodes, drop=removed_edges)
    logger.debug("Merged %d paths %s -> %s, kept %s", len(group), source, dest, keep)
    return result


def shortenable(graph: DiGraph) -> list[ReductionStep]:
    """Shorten candidates: chain nodes that lie on some input-to-output path, by name."""
    steps = []
    out = graph.output
    for name in graph.states:
        if not _is_chain_node(graph, name):
            continue
        for x in graph.inputs:
            path = graph.shortest_path(x, out, via=name)
            if path is not None and len(set(path)) == len(path):
                steps.append(ReductionStep(StepKind.SHORTEN_PATH, paths=(tuple(path),), node=name))
                break
    return steps


def shorten_path(graph: DiGraph, path: NodePath | list[str], node: str) -> DiGraph | None:
    """
    Remove one intermediate node of an input-to-output path and splice its neighbours.

    Returns:
        Shortened graph, or None if ``node`` is not a removable interior node of ``path``

    """
    p = tuple(path)
    if len(p) < 3 or node not in p[1:-1]:
        logger.debug("Rejected shorten: %s is not interior to %s", node, p)
        return None
    edges = set(graph.edges)
    if p[0] not in graph.inputs or p[-1] != graph.output or any((a, b) not in edges for a, b in zip(p, p[1:])):
        logger.debug("Rejected shorten: %s is not an input-to-output path", p)
        return None
    if not _is_chain_node(graph, node):
        logger.debug("Rejected shorten: %s has other neighbours", node)
        return None
    i = p.index(node)
    result = _remove_nodes(graph, {node}, {(p[i - 1], p[i + 1])})
    logger.debug("Shortened %s by removing %s", p, node)
    return result


def candidates(graph: DiGraph, kind: StepKind) -> list[ReductionStep]:
    """Candidate steps of one phase in canonical order."""
    if kind is StepKind.COLLAPSE_SCC:
        return [ReductionStep(kind, nodes=c) for c in find_sccs(graph) if len(c) > 1]
    if kind is StepKind.MERGE_PATHS:
        return [ReductionStep(kind, paths=g) for g in parallel_paths(graph)]
    return shortenable(graph)
