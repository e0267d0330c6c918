"""Greedy three-phase graph reduction under a validation-loss acceptance rule."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Callable, Optional, Sequence

from pydantic import BaseModel, Field

from hybrid_ode.core.exceptions import GraphError, HybridError

from .graph import DiGraph
from .transforms import ReductionStep, StepKind, candidates

logger = logging.getLogger(__name__)

GraphLoss = Callable[[DiGraph], float]

PHASES: tuple[StepKind, ...] = (StepKind.COLLAPSE_SCC, StepKind.MERGE_PATHS, StepKind.SHORTEN_PATH)


class AuditEntry(BaseModel):
    """One evaluated candidate and the decision taken on it."""

    phase: StepKind = Field(..., description="Reduction phase")
    round: int = Field(..., ge=1, description="Round within the phase")
    candidate: str = Field(..., description="Step description")
    loss: Optional[float] = Field(None, description="Validation loss; None when not evaluated")
    accepted: bool = Field(..., description="Whether the step was applied")
    best_loss: float = Field(..., description="Best loss so far when the decision was made")
    graph_hash: Optional[str] = Field(None, description="Digest of the candidate graph")
    error: Optional[str] = Field(None, description="Why the candidate was skipped")

    model_config = {"extra": "forbid"}


@dataclass
class ReductionResult:
    """Final graph with the audit log of every evaluated candidate."""

    graph: DiGraph
    audit: list[AuditEntry]
    start_loss: float
    best_loss: float
    steps: list[ReductionStep] = field(default_factory=list)

    def write_audit(self, path: str | Path) -> None:
        """Write the audit log as JSON Lines."""
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        with target.open("w", encoding="utf-8") as fh:
            for entry in self.audit:
                fh.write(entry.model_dump_json() + "\n")


def _safe_eval(fn: GraphLoss, graph: DiGraph) -> tuple[float | None, str | None]:
    try:
        loss = float(fn(graph))
    except HybridError as e:
        return None, str(e)
    if not math.isfinite(loss):
        return None, f"non-finite loss {loss}"
    return loss, None


class CachedEvaluator:
    """
    Graph loss memoized by canonical graph digest.

    ``fn`` must be deterministic; with ``jobs > 1`` it must also be picklable.
    """

    def __init__(self, fn: GraphLoss) -> None:
        """Wrap a graph-to-loss callback."""
        self.fn = fn
        self.cache: dict[str, tuple[float | None, str | None]] = {}
        self.calls = 0

    def __call__(self, graph: DiGraph) -> float:
        """
        Loss of one graph.

        Raises:
            GraphError: If the callback fails or returns a non-finite value

        """
        loss, error = self.evaluate([graph])[0]
        if loss is None:
            msg = f"Graph evaluation failed: {error}"
            raise GraphError(msg)
        return loss

    def evaluate(self, graphs: Sequence[DiGraph], jobs: int = 1) -> list[tuple[float | None, str | None]]:
        """(loss, error) per graph; uncached graphs run in a process pool when ``jobs > 1``."""
        keys = [g.digest() for g in graphs]
        todo: dict[str, DiGraph] = {}
        for key, g in zip(keys, graphs):
            if key not in self.cache and key not in todo:
                todo[key] = g
        if todo:
            self.calls += len(todo)
            if jobs > 1 and len(todo) > 1:
                with ProcessPoolExecutor(max_workers=jobs) as pool:
                    results = list(pool.map(_safe_eval, [self.fn] * len(todo), list(todo.values())))
            else:
                results = [_safe_eval(self.fn, g) for g in todo.values()]
            self.cache.update(zip(todo, results))
        return [self.cache[k] for k in keys]


def reduce(
    graph: DiGraph,
    evaluator: GraphLoss,
    tolerance: float = 0.10,
    phases: Sequence[StepKind] = PHASES,
    audit_path: str | Path | None = None,
    jobs: int = 1,
) -> ReductionResult:
    """
    Collapse cycles, merge parallel paths and shorten paths while the loss allows it.

    Each phase repeats rounds: every candidate of the current graph is
    evaluated and the one with the least loss is applied if that loss is at
    most ``(1 + tolerance)`` times the best loss seen so far. Ties go to the
    first candidate in canonical order. A phase ends when no candidate
    qualifies. Candidates that fail their preconditions, would disconnect an
    input from the output, or whose evaluation fails are skipped and logged.

    Args:
        graph: Starting graph
        evaluator: Graph to validation loss
        tolerance: Allowed relative increase over the best loss
        phases: Phases to run, in order
        audit_path: JSON Lines file that receives entries as they are decided
        jobs: Worker processes for candidate evaluation

    Returns:
        Final graph, audit log and losses

    Raises:
        GraphError: If the starting graph cannot be evaluated

    """
    cached = evaluator if isinstance(evaluator, CachedEvaluator) else CachedEvaluator(evaluator)
    start = graph.canonical()
    start_loss = cached(start)
    best = start_loss
    current = start
    audit: list[AuditEntry] = []
    steps: list[ReductionStep] = []
    logger.info("Reduction start: %d nodes, %d edges, loss %.6g", len(current.nodes), len(current.edges), start_loss)

    sink: IO[str] | None = None
    if audit_path is not None:
        Path(audit_path).parent.mkdir(parents=True, exist_ok=True)
        sink = Path(audit_path).open("w", encoding="utf-8")
    try:
        for phase in phases:
            round_no = 0
            while True:
                steps_here = candidates(current, phase)
                if not steps_here:
                    break
                round_no += 1
                entries, chosen = _run_round(current, steps_here, cached, phase, round_no, best, tolerance, jobs)
                audit.extend(entries)
                if sink is not None:
                    for entry in entries:
                        sink.write(entry.model_dump_json() + "\n")
                    sink.flush()
                if chosen is None:
                    break
                step, candidate, loss = chosen
                current = candidate
                best = min(best, loss)
                steps.append(step)
                logger.info("Accepted %s (loss %.6g, best %.6g)", step.describe(), loss, best)
            logger.info("Phase %s done after %d rounds", phase.value, round_no)
    finally:
        if sink is not None:
            sink.close()

    logger.info("Reduction end: %d nodes, %d edges, %d steps", len(current.nodes), len(current.edges), len(steps))
    return ReductionResult(current, audit, start_loss, best, steps)


def _run_round(
    current: DiGraph,
    steps: list[ReductionStep],
    evaluator: CachedEvaluator,
    phase: StepKind,
    round_no: int,
    best: float,
    tolerance: float,
    jobs: int,
) -> tuple[list[AuditEntry], tuple[ReductionStep, DiGraph, float] | None]:
    """Evaluate every candidate of one round and pick the step to accept, if any."""
    disconnected = set(current.disconnected_inputs())
    graphs: list[DiGraph | None] = []
    reasons: list[str | None] = []
    for step in steps:
        candidate = step.apply(current)
        if candidate is None:
            graphs.append(None)
            reasons.append("preconditions not met")
        elif set(candidate.disconnected_inputs()) - disconnected:
            graphs.append(None)
            reasons.append("disconnects an input from the output")
        else:
            graphs.append(candidate)
            reasons.append(None)

    results = iter(evaluator.evaluate([g for g in graphs if g is not None], jobs))
    losses: list[float | None] = []
    for i, g in enumerate(graphs):
        if g is None:
            losses.append(None)
            continue
        loss, error = next(results)
        losses.append(loss)
        if error is not None:
            reasons[i] = error

    scored = [(loss, i) for i, loss in enumerate(losses) if loss is not None]
    winner: int | None = None
    if scored:
        top_loss, top = min(scored)
        if top_loss <= (1.0 + tolerance) * best:
            winner = top

    entries = []
    for i, (step, g, loss, reason) in enumerate(zip(steps, graphs, losses, reasons)):
        if reason is not None:
            logger.warning("Skipped %s: %s", step.describe(), reason)
        else:
            logger.info("Evaluated %s: loss %.6g", step.describe(), loss)
        entries.append(
            AuditEntry(
                phase=phase,
                round=round_no,
                candidate=step.describe(),
                loss=loss,
                accepted=i == winner,
                best_loss=best,
                graph_hash=None if g is None else g.digest(),
                error=reason,
            ),
        )
    if winner is None:
        return entries, None
    chosen_graph, chosen_loss = graphs[winner], losses[winner]
    assert chosen_graph is not None and chosen_loss is not None
    return entries, (steps[winner], chosen_graph, chosen_loss)
