"""Pass@k evaluation: the unbiased estimator and its score-ranked variant.

The classic estimator answers "if k of the n samples were drawn uniformly,
how likely is at least one correct?". Methods that rank their samples are
instead judged on the top of their ordering: take the k-th best score, keep
every solution scoring at least that (the tie set may be larger than k),
and apply the same hypergeometric argument inside that set. With constant
scores the tie set is everything and the two estimators coincide exactly.

Correctness comes only from golden tests, adjudicated in the same sandbox
as edge construction but under a separate cache namespace.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import execution
from .core import CandidateVertex, Perspective, Problem, Status

logger = logging.getLogger(__name__)

__all__ = [
    "CorrectnessVector",
    "ProblemEvaluation",
    "pass_at_k_unbiased",
    "pass_at_k_ranked",
    "adjudicate",
    "aggregate",
    "format_report_table",
    "InvalidCounts",
    "NoGoldenTests",
]


class InvalidCounts(ValueError):
    pass


class NoGoldenTests(ValueError):
    pass


@dataclass(frozen=True)
class CorrectnessVector:
    """Per-solution verdicts against the problem's golden tests, in order."""

    values: tuple[bool, ...]

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    def __getitem__(self, i: int) -> bool:
        return self.values[i]

    @property
    def n_correct(self) -> int:
        return sum(self.values)


def pass_at_k_unbiased(n: int, c: int, k: int) -> float:
    """1 - C(n-c, k)/C(n, k), evaluated as a stable product of ratios."""
    if not 0 <= c <= n:
        raise InvalidCounts(f"need 0 <= c <= n, got c={c}, n={n}")
    if not 1 <= k <= n:
        raise InvalidCounts(f"need 1 <= k <= n, got k={k}, n={n}")
    if n - c < k:
        return 1.0
    return float(1.0 - np.prod(1.0 - k / np.arange(n - c + 1, n + 1)))


def pass_at_k_ranked(
    scores: "np.ndarray | list[float]",
    correctness: CorrectnessVector | list[bool],
    k: int,
) -> float:
    """Pass@k over the tie set of the k best-scoring solutions."""
    scores = np.asarray(scores, dtype=float)
    verdicts = list(correctness)
    if len(scores) != len(verdicts):
        raise InvalidCounts(
            f"{len(scores)} scores vs {len(verdicts)} correctness entries"
        )
    n = len(scores)
    if not 1 <= k <= n:
        raise InvalidCounts(f"need 1 <= k <= n, got k={k}, n={n}")
    kth_best = np.sort(scores)[::-1][k - 1]
    selected = scores >= kth_best
    n_hat = int(selected.sum())
    c_hat = int(sum(v for v, s in zip(verdicts, selected) if s))
    return pass_at_k_unbiased(n_hat, c_hat, k)


def adjudicate(
    problem: Problem,
    solutions: list[CandidateVertex],
    golden_tests: list[str] | None = None,
    cache: execution.ExecutionCache | None = None,
    parallelism: int = 8,
    runner: "execution.RunnerConfig | None" = None,
    timeout_ms: int = execution.DEFAULT_TIMEOUT_MS,
) -> CorrectnessVector:
    """A solution is correct iff it passes every golden test within limits."""
    tests = list(golden_tests) if golden_tests is not None else list(
        problem.labeled_tests
    )
    if not tests:
        raise NoGoldenTests(problem.task_id)
    for s in solutions:
        if s.perspective is not Perspective.SOLUTION:
            raise ValueError(f"{s.vertex_id} is not a solution vertex")

    golden = [
        CandidateVertex(
            vertex_id=f"{problem.task_id}/golden/{i}",
            task_id=problem.task_id,
            perspective=Perspective.TESTCASE,
            source_text=text,
            is_label=True,
        )
        for i, text in enumerate(tests)
    ]
    cache = cache or execution.ExecutionCache(None)
    golden_cache = cache.namespace("golden")

    jobs = []
    keys: list[list[str]] = []
    for solution in solutions:
        row = []
        for test in golden:
            job = execution.compose_program(
                execution.PairKind.SOLUTION_TEST,
                solution,
                test,
                timeout_ms=timeout_ms,
            )
            jobs.append(job)
            row.append(job.job_key)
        keys.append(row)

    records = execution.run_jobs(jobs, golden_cache, parallelism, runner)
    verdicts = tuple(
        all(
            records[key].status is Status.OK and records[key].value == 1.0
            for key in row
        )
        for row in keys
    )
    return CorrectnessVector(verdicts)


@dataclass(frozen=True)
class ProblemEvaluation:
    task_id: str
    pass_at_k: dict[int, float]
    edge_mass: float = 0.0
    n_solutions: int = 0
    n_correct: int = 0


def aggregate(
    evaluations: list[ProblemEvaluation],
    ks: tuple[int, ...] = (1, 2, 5),
    bins: int = 0,
    skipped: tuple[str, ...] = (),
) -> dict:
    """Benchmark-level report: means per k, per-problem rows, density bins.

    ``skipped`` names problems excluded for missing golden tests; they never
    enter the means. ``bins > 0`` adds an edge-mass histogram with the share
    of problems at perfect Pass@1 in each bin.
    """
    if not evaluations:
        raise ValueError("nothing to aggregate")

    means = {}
    for k in ks:
        values = [e.pass_at_k[k] for e in evaluations if k in e.pass_at_k]
        means[str(k)] = float(np.mean(values)) if values else None

    report = {
        "ks": list(ks),
        "mean_pass_at_k": means,
        "n_problems": len(evaluations),
        "skipped": {"count": len(skipped), "task_ids": sorted(skipped)},
        "problems": [
            {
                "task_id": e.task_id,
                "pass_at_k": {str(k): v for k, v in sorted(e.pass_at_k.items())},
                "edge_mass": e.edge_mass,
                "n_solutions": e.n_solutions,
                "n_correct": e.n_correct,
            }
            for e in sorted(evaluations, key=lambda e: e.task_id)
        ],
    }

    if bins > 0:
        masses = np.array([e.edge_mass for e in evaluations])
        lo, hi = float(masses.min()), float(masses.max())
        width = (hi - lo) / bins if hi > lo else 1.0
        rows = []
        for b in range(bins):
            left = lo + b * width
            right = lo + (b + 1) * width
            if b == bins - 1:
                member = (masses >= left) & (masses <= hi)
            else:
                member = (masses >= left) & (masses < right)
            chosen = [e for e, m in zip(evaluations, member) if m]
            perfect = [e for e in chosen if e.pass_at_k.get(ks[0], 0.0) >= 1.0]
            rows.append(
                {
                    "edge_mass_lo": left,
                    "edge_mass_hi": right,
                    "count": len(chosen),
                    "perfect_ratio": (len(perfect) / len(chosen)) if chosen else None,
                }
            )
        report["bins"] = rows

    return report


def format_report_table(report: dict, label: str = "mpsc") -> str:
    """Plain-text table, one row per method, Pass@k in percent."""
    ks = report["ks"]
    header = f"{'Method':<28}" + "".join(f"Pass@{k:<4}" for k in ks)
    means = report["mean_pass_at_k"]
    cells = []
    for k in ks:
        value = means.get(str(k))
        cells.append(f"{100.0 * value:>8.2f} " if value is not None else f"{'-':>8} ")
    lines = [header, "-" * len(header), f"{label:<28}" + "".join(cells)]
    if report["skipped"]["count"]:
        lines.append(
            f"(skipped {report['skipped']['count']} problems without golden tests)"
        )
    if "bins" in report:
        lines.append("")
        lines.append(f"{'edge mass':<24}{'problems':>10}{'perfect@1':>12}")
        for row in report["bins"]:
            ratio = row["perfect_ratio"]
            ratio_text = f"{100.0 * ratio:.1f}%" if ratio is not None else "-"
            lines.append(
                f"[{row['edge_mass_lo']:.2f}, {row['edge_mass_hi']:.2f})"
                f"{row['count']:>12}{ratio_text:>12}"
            )
    return "\n".join(lines) + "\n"
