"""Build the consistency graph for one problem.

Vertices are the problem's candidates in the fixed perspective order; edges
carry execution-verified agreement between candidates from different
perspectives. Edge weights come from :class:`~mpsc.core.ExecutionRecord`
values looked up by vertex pair; failed, timed-out or missing verifications
contribute weight 0 (agreement that was never demonstrated counts as
disagreement).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import (
    CandidateVertex,
    ConsistencyGraph,
    DuplicateVertexId,
    MixedTaskIds,
    Perspective,
    Problem,
    order_vertices,
)

logger = logging.getLogger(__name__)

__all__ = [
    "GraphConfig",
    "PairRecords",
    "pair_key",
    "build_graph",
    "edge_mass",
    "neighbor_partition",
    "golden_test_vertices",
]

# Execution records are keyed by (vertex_id, vertex_id) ordered by
# perspective rank: (solution, spec), (solution, test), (spec, test).
PairRecords = dict


def pair_key(u: CandidateVertex, v: CandidateVertex) -> tuple[str, str]:
    """Canonical record key for a cross-perspective pair."""
    if u.perspective.rank <= v.perspective.rank:
        return (u.vertex_id, v.vertex_id)
    return (v.vertex_id, u.vertex_id)


@dataclass(frozen=True)
class GraphConfig:
    """Knobs for graph construction.

    ``solspec_sample_cap`` bounds how many parsed test inputs feed the
    solution-vs-specification expectation. ``neighbor_threshold`` binarizes
    fractional edges for neighbor sets and structural equivalence; the
    default 0.99 counts a fractional edge as a neighbor only on near-total
    agreement, and leaves binary edges untouched.
    """

    include_specifications: bool = True
    include_testcases: bool = True
    solspec_sample_cap: int = 50
    neighbor_threshold: float = 0.99

    def __post_init__(self) -> None:
        if self.solspec_sample_cap < 1:
            raise ValueError("solspec_sample_cap must be at least 1")
        if not 0.0 < self.neighbor_threshold <= 1.0:
            raise ValueError("neighbor_threshold must lie in (0, 1]")

    def keeps(self, perspective: Perspective) -> bool:
        if perspective is Perspective.SPECIFICATION:
            return self.include_specifications
        if perspective is Perspective.TESTCASE:
            return self.include_testcases
        return True


def build_graph(
    problem: Problem,
    candidates: list[CandidateVertex],
    records: PairRecords,
    config: GraphConfig | None = None,
) -> ConsistencyGraph:
    """Assemble the multipartite graph from candidates and execution records.

    Ablated perspectives contribute no vertices and no edges; weights among
    the remaining vertices are unchanged by ablation. Pairs without a record
    get weight 0 and are counted in a single warning.
    """
    config = config or GraphConfig()

    seen: set[str] = set()
    for c in candidates:
        if c.vertex_id in seen:
            raise DuplicateVertexId(c.vertex_id)
        seen.add(c.vertex_id)
        if c.task_id != problem.task_id:
            raise MixedTaskIds(
                f"candidate {c.vertex_id!r} belongs to {c.task_id!r}, "
                f"expected {problem.task_id!r}"
            )

    vertices = order_vertices([c for c in candidates if config.keeps(c.perspective)])
    n = len(vertices)
    w = np.zeros((n, n))
    missing = 0
    for i in range(n):
        for j in range(i + 1, n):
            if vertices[i].perspective is vertices[j].perspective:
                continue
            record = records.get(pair_key(vertices[i], vertices[j]))
            if record is None:
                missing += 1
                continue
            weight = record.weight
            w[i, j] = weight
            w[j, i] = weight
    if missing:
        logger.warning(
            "%s: %d cross-perspective pairs had no execution record (weight 0)",
            problem.task_id,
            missing,
        )

    return ConsistencyGraph(
        task_id=problem.task_id,
        vertices=tuple(vertices),
        adjacency=w,
        prior=np.zeros(n),
    )


def edge_mass(graph: ConsistencyGraph) -> float:
    """Total edge weight sum_{i<j} W_ij, the graph-density statistic."""
    return float(np.triu(graph.adjacency, 1).sum())


def neighbor_partition(
    graph: ConsistencyGraph, vertex: int, threshold: float
) -> dict[Perspective, set[int]]:
    """Neighbors of one vertex above the threshold, split by perspective.

    Every perspective present in the graph appears as a key; the vertex's
    own perspective always maps to the empty set.
    """
    if not 0 <= vertex < len(graph):
        raise IndexError(f"vertex {vertex} out of range for graph of {len(graph)}")
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0, 1]")
    row = graph.adjacency[vertex]
    own = graph.vertices[vertex].perspective
    parts: dict[Perspective, set[int]] = {
        p: set() for p in graph.perspectives_present()
    }
    for j in np.flatnonzero(row >= threshold):
        p = graph.vertices[j].perspective
        if p is not own:
            parts[p].add(int(j))
    return parts


def golden_test_vertices(
    problem: Problem, count: int | None = None
) -> list[CandidateVertex]:
    """Labeled test-case vertices built from a problem's golden assertions.

    Used both for label supervision and for the user-provided test-case
    injection mode; ``count`` truncates in listed order.
    """
    tests = problem.labeled_tests
    if count is not None:
        tests = tests[: max(count, 0)]
    return [
        CandidateVertex(
            vertex_id=f"{problem.task_id}/testcase/golden{i}",
            task_id=problem.task_id,
            perspective=Perspective.TESTCASE,
            source_text=text,
            is_label=True,
        )
        for i, text in enumerate(tests)
    ]
