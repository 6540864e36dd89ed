"""Shared domain types for the consistency-graph reranking pipeline.

A *problem* is one benchmark task. Candidate outputs for a problem come from
three perspectives: solutions (implementations), specifications (pre/post
condition predicates) and test cases (single input/output assertions).
Execution-checked agreement between candidates from different perspectives
forms the edges of an undirected multipartite graph; a per-vertex prior
carries agreement within a perspective. Everything downstream (graph
construction, priors, score propagation, evaluation) speaks these types.

All types are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "Perspective",
    "Status",
    "Problem",
    "CandidateVertex",
    "ConsistencyGraph",
    "ScoreVector",
    "ExecutionRecord",
    "validate_graph",
    "DuplicateVertexId",
    "MixedTaskIds",
]

# Fixed vertex ordering of every graph: all solutions (in generation order),
# then all specifications, then all test cases. Matrices and vectors are
# aligned to this order, which makes serialization deterministic.
PERSPECTIVE_ORDER = ("solution", "specification", "testcase")


class Perspective(enum.Enum):
    """One of the three ways a candidate output describes the task."""

    SOLUTION = "solution"
    SPECIFICATION = "specification"
    TESTCASE = "testcase"

    @property
    def rank(self) -> int:
        return PERSPECTIVE_ORDER.index(self.value)

    @classmethod
    def from_name(cls, name: str) -> "Perspective":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(f"unknown perspective {name!r}") from None


class Status(enum.Enum):
    """Outcome of one sandboxed verification program."""

    OK = "Ok"
    TIMEOUT = "Timeout"
    RUNTIME_ERROR = "RuntimeError"
    PARSE_ERROR = "ParseError"


class DuplicateVertexId(ValueError):
    pass


class MixedTaskIds(ValueError):
    pass


@dataclass(frozen=True)
class Problem:
    """One benchmark task: natural-language intent plus entry point.

    ``labeled_tests`` holds golden assertion strings (benchmark-provided or
    extracted from the prompt's docstring examples); they feed adjudication
    and optional label injection, never the generated candidate pool.
    ``canonical_solution`` is evaluation-only and must stay invisible to
    ranking.
    """

    task_id: str
    prompt: str
    entry_point: str
    labeled_tests: tuple[str, ...] = ()
    canonical_solution: str | None = None

    def __post_init__(self) -> None:
        if not self.task_id:
            raise ValueError("task_id must be non-empty")
        if self.entry_point and not re.search(
            rf"\b{re.escape(self.entry_point)}\b", self.prompt
        ):
            raise ValueError(
                f"entry point {self.entry_point!r} does not appear in the prompt "
                f"of {self.task_id!r}"
            )
        object.__setattr__(self, "labeled_tests", tuple(self.labeled_tests))


@dataclass(frozen=True)
class CandidateVertex:
    """One generated output, tagged with its perspective.

    ``source_text`` is opaque program text in the dataset's evaluation
    language; its interpretation depends on the perspective (a function
    for solutions, a pair of predicate functions for specifications, one
    assertion for test cases). ``logprob`` is the mean per-token
    log-probability reported at generation time, when available.
    ``is_label`` marks golden test cases injected as supervision.
    """

    vertex_id: str
    task_id: str
    perspective: Perspective
    source_text: str
    logprob: float | None = None
    is_label: bool = False

    def __post_init__(self) -> None:
        if self.is_label and self.perspective is not Perspective.TESTCASE:
            raise ValueError(
                f"{self.vertex_id}: is_label is only meaningful for test cases"
            )


@dataclass(frozen=True)
class ConsistencyGraph:
    """Undirected weighted multipartite graph over one problem's candidates.

    ``adjacency`` is the symmetric weight matrix with zero diagonal and zero
    blocks inside each perspective; ``prior`` is the per-vertex
    intra-consistency vector. Arrays are owned by the graph and must not be
    mutated by callers.
    """

    task_id: str
    vertices: tuple[CandidateVertex, ...]
    adjacency: np.ndarray
    prior: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "vertices", tuple(self.vertices))
        w = np.asarray(self.adjacency, dtype=float)
        y = np.asarray(self.prior, dtype=float)
        n = len(self.vertices)
        if w.shape != (n, n):
            raise ValueError(f"adjacency shape {w.shape} does not match {n} vertices")
        if y.shape != (n,):
            raise ValueError(f"prior shape {y.shape} does not match {n} vertices")
        w.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "adjacency", w)
        object.__setattr__(self, "prior", y)

    def __len__(self) -> int:
        return len(self.vertices)

    @property
    def degrees(self) -> np.ndarray:
        """Weighted degree of every vertex, d_i = sum_j W_ij."""
        return self.adjacency.sum(axis=1)

    def indices_of(self, perspective: Perspective) -> np.ndarray:
        return np.array(
            [i for i, v in enumerate(self.vertices) if v.perspective is perspective],
            dtype=int,
        )

    def perspectives_present(self) -> tuple[Perspective, ...]:
        seen = {v.perspective for v in self.vertices}
        return tuple(p for p in Perspective if p in seen)

    def with_prior(self, prior: np.ndarray) -> "ConsistencyGraph":
        return replace(self, prior=np.asarray(prior, dtype=float).copy())


@dataclass(frozen=True)
class ScoreVector:
    """Learned confidence over a graph's vertices, with solver provenance."""

    scores: np.ndarray
    alpha: float
    iterations: int
    converged: bool
    residual: float
    method: str = "iterative"
    epsilon: float = 1e-9

    def __post_init__(self) -> None:
        s = np.asarray(self.scores, dtype=float)
        if not np.all(np.isfinite(s)):
            raise ValueError("scores must be finite")
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)


@dataclass(frozen=True)
class ExecutionRecord:
    """Cached outcome of one sandboxed verification program.

    ``value`` is the program's final_result in [0, 1] and is present exactly
    when the run succeeded.
    """

    program_hash: str
    status: Status
    value: float | None
    wall_time_ms: int

    def __post_init__(self) -> None:
        if (self.status is Status.OK) != (self.value is not None):
            raise ValueError("value must be present iff status is Ok")
        if self.value is not None and not 0.0 <= self.value <= 1.0:
            raise ValueError(f"value {self.value} outside [0, 1]")

    @property
    def weight(self) -> float:
        """Edge weight this record contributes: the value on success, else 0."""
        return self.value if self.status is Status.OK else 0.0


def validate_graph(graph: ConsistencyGraph) -> list[str]:
    """Check every structural invariant of a graph; return one message per violation.

    An empty list means the graph is well-formed. Diagnostic only, never raises.
    """
    violations: list[str] = []
    w = graph.adjacency
    n = len(graph)

    seen_ids: set[str] = set()
    for v in graph.vertices:
        if v.vertex_id in seen_ids:
            violations.append(f"duplicate vertex id {v.vertex_id!r}")
        seen_ids.add(v.vertex_id)
        if v.task_id != graph.task_id:
            violations.append(
                f"vertex {v.vertex_id!r} belongs to task {v.task_id!r}, "
                f"graph is for {graph.task_id!r}"
            )

    ranks = [v.perspective.rank for v in graph.vertices]
    if ranks != sorted(ranks):
        violations.append(
            "vertex ordering violated: expected all solutions, then "
            "specifications, then test cases"
        )

    asym = np.argwhere(w != w.T)
    for i, j in asym[: len(asym) // 2 + 1]:
        if i < j:
            violations.append(f"asymmetry at ({i}, {j}): {w[i, j]} != {w[j, i]}")

    for i in np.flatnonzero(np.diag(w)):
        violations.append(f"nonzero diagonal at ({i}, {i})")

    bad = np.argwhere((w < 0.0) | (w > 1.0))
    for i, j in bad:
        if i <= j:
            violations.append(f"weight out of [0, 1] at ({i}, {j}): {w[i, j]}")

    for i in range(n):
        for j in range(i + 1, n):
            if (
                graph.vertices[i].perspective is graph.vertices[j].perspective
                and w[i, j] != 0.0
            ):
                violations.append(f"multipartite violation at ({i}, {j})")

    if not np.all(np.isfinite(graph.prior)):
        violations.append("prior contains non-finite entries")
    else:
        # Per perspective the prior block sums to 1 under every measure,
        # except blocks deliberately left all-zero (no labels, no support).
        for p in graph.perspectives_present():
            block = graph.prior[graph.indices_of(p)]
            total = float(block.sum())
            if abs(total) > 1e-12 and abs(total - 1.0) > 1e-9:
                violations.append(
                    f"prior block for {p.value} sums to {total}, expected 1 or 0"
                )

    return violations


def order_vertices(candidates: list[CandidateVertex]) -> list[CandidateVertex]:
    """Stable-sort candidates into the fixed perspective order."""
    return sorted(candidates, key=lambda v: v.perspective.rank)
