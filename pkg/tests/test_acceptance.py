"""Acceptance gate: every primary criterion at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one PASS line per
criterion. Budgets and tolerances are pinned here, not configurable.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

import planted
from mpsc.cli import main as cli_main
from mpsc.consistency import MeasureKind, raw_measure, structural_equivalence
from mpsc.ingest import canonical_json, load_dataset, load_records, scores_payload
from mpsc.metrics import pass_at_k_ranked, pass_at_k_unbiased
from mpsc.pipeline import RankOptions, rank_problem
from mpsc.solver import (
    SolverConfig,
    objective_value,
    solve_closed_form,
    solve_iterative,
)
from graphtools import make_graph, random_multipartite

RNG = np.random.default_rng(52_2024)


def _report(name: str) -> None:
    print(f"[PASS] {name}")


def _random_cases(count: int = 50):
    cases = []
    alphas = (0.1, 0.5, 0.9)
    for i in range(count):
        if i % 10 == 0:
            sizes = (int(RNG.integers(120, 200)), int(RNG.integers(60, 120)),
                     int(RNG.integers(120, 200)))
        else:
            sizes = (int(RNG.integers(4, 40)), int(RNG.integers(2, 30)),
                     int(RNG.integers(4, 40)))
        assert sum(sizes) <= 500
        w = random_multipartite(RNG, sizes, density=0.3)
        y = RNG.random(sum(sizes))
        cases.append((sizes, w, y, alphas[i % 3]))
    return cases


@pytest.fixture(scope="module")
def random_graph_cases():
    return _random_cases()


@pytest.fixture(scope="module")
def planted_run(tmp_path_factory):
    """One full CLI pass over the planted dataset plus both ablations."""
    root = tmp_path_factory.mktemp("acceptance")
    problems, candidates = planted.write_dataset(root / "data")
    cache = root / "cache"
    runner = CliRunner()

    def rank(out: Path, *extra: str) -> None:
        args = [
            "rank", "--problems", str(problems), "--candidates", str(candidates),
            "--out-dir", str(out), "--cache-dir", str(cache), *extra,
        ]
        result = runner.invoke(cli_main, args)
        assert result.exit_code == 0, result.output

    def evaluate(out: Path) -> dict:
        result = runner.invoke(
            cli_main,
            [
                "evaluate", "--problems", str(problems),
                "--candidates", str(candidates),
                "--run-dir", str(out), "--cache-dir", str(cache),
            ],
        )
        assert result.exit_code == 0, result.output
        return json.loads((out / "report.json").read_text())

    started = time.perf_counter()
    full = root / "full"
    rank(full)
    full_report = evaluate(full)
    no_spec = root / "no_spec"
    rank(no_spec, "--drop", "specification")
    no_spec_report = evaluate(no_spec)
    no_test = root / "no_test"
    rank(no_test, "--drop", "testcase")
    no_test_report = evaluate(no_test)
    elapsed = time.perf_counter() - started

    return {
        "problems": problems,
        "candidates": candidates,
        "cache": cache,
        "root": root,
        "full_dir": full,
        "full": full_report,
        "no_spec": no_spec_report,
        "no_test": no_test_report,
        "elapsed_s": elapsed,
    }


def test_criterion_solver_oracle_equivalence(random_graph_cases):
    """Iterative and closed form agree within 1e-6 on 50 random graphs, < 10 s."""
    started = time.perf_counter()
    worst = 0.0
    for sizes, w, y, alpha in random_graph_cases:
        graph = make_graph(*sizes, adjacency=w, prior=y)
        config = SolverConfig(alpha=alpha, epsilon=1e-10)
        iterative = solve_iterative(graph, config).scores
        closed = solve_closed_form(graph, config).scores
        worst = max(worst, float(np.max(np.abs(iterative - closed))))
    elapsed = time.perf_counter() - started
    assert worst < 1e-6, f"L-infinity gap {worst}"
    assert elapsed < 10.0, f"took {elapsed:.1f} s"
    _report(
        f"solver oracle equivalence: 50 graphs, worst gap {worst:.2e}, "
        f"{elapsed:.1f} s"
    )


def test_criterion_hand_computed_fixed_point():
    """alpha=0.5, W=[[0,1],[1,0]], y=[1,0] yields exactly [2/3, 1/3]."""
    w = np.array([[0.0, 1.0], [1.0, 0.0]])
    graph = make_graph(1, 0, 1, w, prior=np.array([1.0, 0.0]))
    expected = np.array([2 / 3, 1 / 3])
    for solve in (solve_iterative, solve_closed_form):
        scores = solve(graph, SolverConfig(alpha=0.5, epsilon=1e-13)).scores
        assert np.max(np.abs(scores - expected)) <= 1e-9, solve.__name__
    _report("hand-computed 2-vertex fixed point within 1e-9")


def test_criterion_objective_minimization(random_graph_cases):
    """Scores beat the prior's objective; 100 random nudges never improve."""
    for sizes, w, y, alpha in random_graph_cases:
        graph = make_graph(*sizes, adjacency=w, prior=y)
        f = solve_iterative(graph, SolverConfig(alpha=alpha, epsilon=1e-11)).scores
        at_f = objective_value(graph, f, alpha=alpha)
        at_y = objective_value(graph, y, alpha=alpha)
        assert at_f <= at_y + 1e-9
        for _ in range(100):
            delta = RNG.choice([-1e-3, 1e-3], size=len(y))
            assert objective_value(graph, f + delta, alpha=alpha) >= at_f
    _report("objective minimization with 100 perturbations per graph")


def test_criterion_pass_at_k_monte_carlo():
    """Closed form matches 100k-draw simulation within 0.01; reduction exact."""
    rng = np.random.default_rng(7_2024)
    for _ in range(20):
        n_hat = int(rng.integers(1, 201))
        c_hat = int(rng.integers(0, n_hat + 1))
        k = int(rng.integers(1, min(5, n_hat) + 1))
        closed = pass_at_k_unbiased(n_hat, c_hat, k)
        draws = rng.hypergeometric(c_hat, n_hat - c_hat, k, size=100_000)
        simulated = float(np.mean(draws > 0))
        assert abs(closed - simulated) < 0.01, (n_hat, c_hat, k)

        correctness = [i < c_hat for i in range(n_hat)]
        ranked = pass_at_k_ranked([0.42] * n_hat, correctness, k)
        assert ranked == pass_at_k_unbiased(n_hat, c_hat, k)
    _report("pass@k Monte-Carlo agreement and exact constant-score reduction")


def test_criterion_planted_end_to_end(planted_run):
    """Uniform ranking finds a correct solution top-1 on >= 9/10 problems."""
    selected = {
        row["task_id"]: row["selected"]
        for row in map(
            json.loads,
            (planted_run["full_dir"] / "selected.jsonl").read_text().splitlines(),
        )
    }
    top_correct = sum(
        int(picks[0].rsplit("/", 1)[1]) in planted.CORRECT_SOLUTION_ORDINALS
        for picks in selected.values()
    )
    assert top_correct >= 9, f"top-1 correct on only {top_correct}/10"

    full_p1 = planted_run["full"]["mean_pass_at_k"]["1"]
    assert full_p1 > 2 / 6, "must strictly beat the random baseline"
    for name in ("no_spec", "no_test"):
        ablated = planted_run[name]["mean_pass_at_k"]["1"]
        assert ablated <= full_p1 + 1e-12, f"{name} improved Pass@1"
    assert planted_run["elapsed_s"] < 60.0, f"took {planted_run['elapsed_s']:.1f} s"
    _report(
        f"planted end-to-end: top-1 correct {top_correct}/10, Pass@1 "
        f"{full_p1:.2f} vs baseline 0.33, ablations <=, "
        f"{planted_run['elapsed_s']:.1f} s"
    )


def test_criterion_measure_algebra(random_graph_cases):
    """WeightedCardinality = Cardinality x Weight before normalization."""
    for sizes, w, y, _ in random_graph_cases[:20]:
        graph = make_graph(*sizes, adjacency=w)
        classes = structural_equivalence(graph, 0.99)
        cardinality = raw_measure(graph, MeasureKind.CARDINALITY, classes)
        weight = raw_measure(graph, MeasureKind.WEIGHT, classes)
        combined = raw_measure(graph, MeasureKind.WEIGHTED_CARDINALITY, classes)
        assert np.array_equal(combined, cardinality * weight)

        from mpsc.consistency import intra_prior

        for kind in (
            MeasureKind.BAYES_RISK,
            MeasureKind.CARDINALITY,
            MeasureKind.WEIGHT,
            MeasureKind.WEIGHTED_CARDINALITY,
            MeasureKind.UNIFORM,
        ):
            prior = intra_prior(graph, kind, classes)
            for p in graph.perspectives_present():
                block = prior[graph.indices_of(p)].sum()
                assert abs(block - 1.0) < 1e-9 or abs(block) < 1e-12
    _report("measure algebra: exact product identity and block normalization")


def test_criterion_cli_determinism(planted_run):
    """Two full CLI runs produce byte-identical score and report files."""
    runner = CliRunner()
    outputs = []
    for name in ("det_one", "det_two"):
        out = planted_run["root"] / name
        result = runner.invoke(
            cli_main,
            [
                "rank", "--problems", str(planted_run["problems"]),
                "--candidates", str(planted_run["candidates"]),
                "--out-dir", str(out), "--cache-dir", str(planted_run["cache"]),
            ],
        )
        assert result.exit_code == 0, result.output
        result = runner.invoke(
            cli_main,
            [
                "evaluate", "--problems", str(planted_run["problems"]),
                "--candidates", str(planted_run["candidates"]),
                "--run-dir", str(out), "--cache-dir", str(planted_run["cache"]),
            ],
        )
        assert result.exit_code == 0, result.output
        outputs.append(out)

    compared = 0
    for score_file in sorted((outputs[0] / "scores").glob("*.json")):
        twin = outputs[1] / "scores" / score_file.name
        assert score_file.read_bytes() == twin.read_bytes(), score_file.name
        compared += 1
    assert compared == planted.N_PROBLEMS
    for name in ("report.json", "report.txt", "selected.jsonl"):
        assert (outputs[0] / name).read_bytes() == (outputs[1] / name).read_bytes()
    _report(f"CLI determinism: {compared} score files + reports byte-identical")


def test_criterion_fixture_replay():
    """The shipped bundle ranks identically with no sandbox involved."""
    from importlib import resources

    root = Path(str(resources.files("mpsc").joinpath("fixtures", "replay")))
    dataset = load_dataset(root / "problems.jsonl", root / "candidates.jsonl")
    records = load_records(root / "records.jsonl")
    checked = 0
    for measure in ("uniform", "weighted-cardinality"):
        for task_id in sorted(dataset):
            problem, candidates = dataset[task_id]
            ranked = rank_problem(
                problem,
                candidates,
                RankOptions(measure=MeasureKind.from_name(measure)),
                records=records,
            )
            payload = scores_payload(
                task_id, ranked.scores, ranked.graph, measure, ranked.edge_mass
            )
            expected = (
                root / "expected" / measure / f"{task_id.replace('/', '_')}.json"
            ).read_bytes()
            assert canonical_json(payload).encode("utf-8") == expected
            assert ranked.selected[0].endswith("/solution/0")
            checked += 1
    _report(f"fixture replay: {checked} frozen score files reproduced exactly")
