"""Consistency-graph reranking for generated code.

Candidate solutions, specifications and test cases for a programming task
form the vertices of an undirected multipartite graph. A sandboxed
interpreter verifies every cross-perspective pair and the agreement becomes
edge weight; per-perspective priors capture agreement within a perspective;
propagating the prior over the normalized graph yields a confidence score
per candidate, and the best-scoring solutions are selected and evaluated
with Pass@k.
"""

__version__ = "0.1.0"

from .core import (
    CandidateVertex,
    ConsistencyGraph,
    ExecutionRecord,
    Perspective,
    Problem,
    ScoreVector,
    Status,
    validate_graph,
)
from .consistency import MeasureKind, code_bleu, intra_prior, structural_equivalence
from .graph import GraphConfig, build_graph, edge_mass, neighbor_partition
from .metrics import pass_at_k_ranked, pass_at_k_unbiased
from .ranker import ConsistencyPropagation
from .solver import (
    SolverConfig,
    select_top,
    solve_closed_form,
    solve_iterative,
    transition_matrix,
)

__all__ = [
    "__version__",
    "CandidateVertex",
    "ConsistencyGraph",
    "ExecutionRecord",
    "Perspective",
    "Problem",
    "ScoreVector",
    "Status",
    "validate_graph",
    "MeasureKind",
    "code_bleu",
    "intra_prior",
    "structural_equivalence",
    "GraphConfig",
    "build_graph",
    "edge_mass",
    "neighbor_partition",
    "pass_at_k_ranked",
    "pass_at_k_unbiased",
    "ConsistencyPropagation",
    "SolverConfig",
    "select_top",
    "solve_closed_form",
    "solve_iterative",
    "transition_matrix",
]
