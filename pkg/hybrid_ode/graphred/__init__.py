"""Causal-graph reduction: SCC collapse, path merging and path shortening."""

from .evaluator import SEARCH_ALPHA, SEARCH_EPOCHS, MnodeEvaluator, search_train_config
from .graph import GRAPH_SCHEMA, DiGraph, GraphNode, NodeRole
from .reduce import PHASES, AuditEntry, CachedEvaluator, ReductionResult, reduce
from .transforms import (
    ReductionStep,
    StepKind,
    candidates,
    collapse_scc,
    find_sccs,
    merge_paths,
    parallel_paths,
    shorten_path,
    shortenable,
)

__all__ = [
    "GRAPH_SCHEMA",
    "PHASES",
    "SEARCH_ALPHA",
    "SEARCH_EPOCHS",
    "AuditEntry",
    "CachedEvaluator",
    "DiGraph",
    "GraphNode",
    "MnodeEvaluator",
    "NodeRole",
    "ReductionResult",
    "ReductionStep",
    "StepKind",
    "candidates",
    "collapse_scc",
    "find_sccs",
    "merge_paths",
    "parallel_paths",
    "reduce",
    "search_train_config",
    "shorten_path",
    "shortenable",
]
