"""The shipped replay bundle pins the math pipeline to frozen artifacts.

Records were produced by one real sandbox run and committed; these tests
rebuild graphs, priors and scores from the records alone (no interpreter)
and demand byte-identical score files. Any drift in graph assembly, the
measures, the solver or the canonical serializer shows up here.
"""

from importlib import resources
from pathlib import Path

import pytest

from mpsc.consistency import MeasureKind
from mpsc.ingest import canonical_json, load_dataset, load_records, scores_payload
from mpsc.pipeline import RankOptions, rank_problem

BUNDLE = resources.files("mpsc").joinpath("fixtures", "replay")


@pytest.fixture(scope="module")
def bundle():
    root = Path(str(BUNDLE))
    dataset = load_dataset(root / "problems.jsonl", root / "candidates.jsonl")
    records = load_records(root / "records.jsonl")
    return root, dataset, records


@pytest.mark.parametrize("measure", ["uniform", "weighted-cardinality"])
def test_replay_reproduces_frozen_scores_byte_for_byte(bundle, measure):
    root, dataset, records = bundle
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
        assert canonical_json(payload).encode("utf-8") == expected, task_id


def test_replay_ranks_the_true_solutions_first(bundle):
    _, dataset, records = bundle
    for task_id in sorted(dataset):
        problem, candidates = dataset[task_id]
        ranked = rank_problem(problem, candidates, RankOptions(), records=records)
        assert ranked.selected[0] == f"{task_id}/solution/0"


def test_cli_replay_path_matches_expected(bundle, tmp_path):
    from click.testing import CliRunner

    from mpsc.cli import main

    root, _, _ = bundle
    out = tmp_path / "run"
    result = CliRunner().invoke(
        main,
        [
            "rank",
            "--problems", str(root / "problems.jsonl"),
            "--candidates", str(root / "candidates.jsonl"),
            "--out-dir", str(out),
            "--records", str(root / "records.jsonl"),
        ],
    )
    assert result.exit_code == 0, result.output
    for name in ("replay_0", "replay_1", "replay_2"):
        produced = (out / "scores" / f"{name}.json").read_bytes()
        expected = (root / "expected" / "uniform" / f"{name}.json").read_bytes()
        assert produced == expected, name


def test_bundle_records_cover_every_cross_pair(bundle):
    _, dataset, records = bundle
    for task_id, (problem, candidates) in dataset.items():
        ranked = rank_problem(problem, candidates, RankOptions(), records=records)
        graph = ranked.graph
        n = len(graph)
        cross = sum(
            1
            for i in range(n)
            for j in range(i + 1, n)
            if graph.vertices[i].perspective is not graph.vertices[j].perspective
        )
        per_task = sum(1 for (left, _) in records if left.startswith(task_id))
        assert per_task == cross, task_id
