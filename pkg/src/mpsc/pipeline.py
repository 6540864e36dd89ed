"""End-to-end orchestration for one problem: execute, build, score, select.

The CLI, the sweep driver and the tests all go through these functions so
that every path produces identical artifacts. Stages communicate through
values (records -> graph -> prior -> scores), which keeps each one
independently replayable: pre-recorded records skip the sandbox entirely.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from . import consistency, execution, graph as graphmod, metrics, solver
from .core import CandidateVertex, ConsistencyGraph, Perspective, Problem, ScoreVector
from .ingest import extract_docstring_tests

logger = logging.getLogger(__name__)

__all__ = ["RankOptions", "RankedProblem", "rank_problem", "evaluate_problem"]


@dataclass(frozen=True)
class RankOptions:
    measure: consistency.MeasureKind = consistency.MeasureKind.UNIFORM
    alpha: float = 0.5
    epsilon: float = 1e-9
    max_iterations: int = 10_000
    method: str = "iterative"
    threshold: float = 0.99
    drop: frozenset[Perspective] = frozenset()
    inject_golden: int | None = None
    probability_literal: bool = False
    solspec_sample_cap: int = 50
    timeout_ms: int = execution.DEFAULT_TIMEOUT_MS
    memory_mb: int = execution.DEFAULT_MEMORY_MB
    parallelism: int = 8
    top_k: int = 5

    def graph_config(self) -> graphmod.GraphConfig:
        return graphmod.GraphConfig(
            include_specifications=Perspective.SPECIFICATION not in self.drop,
            include_testcases=Perspective.TESTCASE not in self.drop,
            solspec_sample_cap=self.solspec_sample_cap,
            neighbor_threshold=self.threshold,
        )

    def solver_config(self) -> solver.SolverConfig:
        return solver.SolverConfig(
            alpha=self.alpha,
            epsilon=self.epsilon,
            max_iterations=self.max_iterations,
            method=self.method,
        )


@dataclass(frozen=True)
class RankedProblem:
    problem: Problem
    graph: ConsistencyGraph
    scores: ScoreVector
    selected: tuple[str, ...]  # best-first solution vertex ids
    edge_mass: float


def _label_pool(problem: Problem) -> list[CandidateVertex]:
    if problem.labeled_tests:
        return graphmod.golden_test_vertices(problem)
    return extract_docstring_tests(problem)


def _injected_labels(
    problem: Problem, options: RankOptions
) -> list[CandidateVertex]:
    """Labeled vertices to add to the graph.

    An explicit ``inject_golden`` count wins; otherwise the label measure
    pulls in every available golden test (it has nothing to supervise with
    otherwise) and all other measures inject none.
    """
    pool = _label_pool(problem)
    if options.inject_golden is not None:
        return pool[: options.inject_golden]
    if options.measure is consistency.MeasureKind.LABEL:
        return pool
    return []


def rank_problem(
    problem: Problem,
    candidates: list[CandidateVertex],
    options: RankOptions,
    cache: execution.ExecutionCache | None = None,
    runner: execution.RunnerConfig | None = None,
    records: dict | None = None,
) -> RankedProblem:
    """Score one problem's candidates and select its top solutions.

    ``records`` replays pre-recorded execution results instead of running
    the sandbox; everything downstream of execution is pure math.
    """
    graph_config = options.graph_config()
    working = list(candidates) + _injected_labels(problem, options)

    if records is None:
        records = execution.collect_pair_records(
            problem,
            working,
            graph_config,
            cache=cache,
            parallelism=options.parallelism,
            runner=runner,
            timeout_ms=options.timeout_ms,
            memory_mb=options.memory_mb,
        )

    graph = graphmod.build_graph(problem, working, records, graph_config)
    classes = consistency.structural_equivalence(graph, options.threshold)
    prior = consistency.intra_prior(
        graph,
        options.measure,
        classes,
        options.threshold,
        probability_literal=options.probability_literal,
    )
    graph = graph.with_prior(prior)
    scores = solver.solve(graph, options.solver_config())

    selected: tuple[str, ...] = ()
    if any(v.perspective is Perspective.SOLUTION for v in graph.vertices):
        top = solver.select_top(scores, graph, Perspective.SOLUTION, options.top_k)
        selected = tuple(graph.vertices[i].vertex_id for i in top)

    return RankedProblem(
        problem=problem,
        graph=graph,
        scores=scores,
        selected=selected,
        edge_mass=graphmod.edge_mass(graph),
    )


def evaluate_problem(
    problem: Problem,
    candidates: list[CandidateVertex],
    solution_ids: list[str],
    solution_scores: list[float],
    ks: tuple[int, ...],
    edge_mass: float = 0.0,
    cache: execution.ExecutionCache | None = None,
    runner: execution.RunnerConfig | None = None,
    parallelism: int = 8,
    timeout_ms: int = execution.DEFAULT_TIMEOUT_MS,
) -> metrics.ProblemEvaluation:
    """Adjudicate the ranked solutions and compute ranked Pass@k."""
    by_id = {c.vertex_id: c for c in candidates}
    solutions = [by_id[vid] for vid in solution_ids]
    correctness = metrics.adjudicate(
        problem,
        solutions,
        cache=cache,
        runner=runner,
        parallelism=parallelism,
        timeout_ms=timeout_ms,
    )
    pass_at_k = {
        k: metrics.pass_at_k_ranked(solution_scores, correctness, k)
        for k in ks
        if k <= len(solutions)
    }
    return metrics.ProblemEvaluation(
        task_id=problem.task_id,
        pass_at_k=pass_at_k,
        edge_mass=edge_mass,
        n_solutions=len(solutions),
        n_correct=correctness.n_correct,
    )
