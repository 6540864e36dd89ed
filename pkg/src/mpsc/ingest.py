"""Dataset I/O and canonical persistence.

Problems and candidates travel as line-delimited JSON (program text is
multi-line, so JSON string escaping beats any column format). Artifacts are
persisted as canonical JSON: sorted keys, compact separators, floats at 12
significant digits, so byte-level diffs catch nondeterminism anywhere in
the pipeline.
"""

from __future__ import annotations

import doctest
import json
import logging
import math
import re
from pathlib import Path

import numpy as np

from .core import (
    CandidateVertex,
    ConsistencyGraph,
    ExecutionRecord,
    Perspective,
    Problem,
    ScoreVector,
    Status,
)

logger = logging.getLogger(__name__)

__all__ = [
    "SchemaViolation",
    "IoFailure",
    "load_dataset",
    "extract_docstring_tests",
    "canonical_json",
    "persist",
    "graph_payload",
    "load_graph",
    "scores_payload",
    "persist_records",
    "load_records",
]


class SchemaViolation(ValueError):
    pass


class IoFailure(OSError):
    pass


# ---------------------------------------------------------------------------
# Dataset loading

_REQUIRED_PROBLEM_FIELDS = ("task_id", "prompt", "entry_point")
_REQUIRED_CANDIDATE_FIELDS = ("task_id", "perspective", "source_text")


def _report(path: Path, line_no: int, message: str, strict: bool) -> None:
    text = f"{path}:{line_no}: {message}"
    if strict:
        raise SchemaViolation(text)
    logger.warning("%s (line skipped)", text)


def _iter_jsonl(path: Path, strict: bool):
    with path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                _report(path, line_no, f"malformed JSON: {exc}", strict)
                continue
            if not isinstance(row, dict):
                _report(path, line_no, "expected a JSON object", strict)
                continue
            yield line_no, row


def load_dataset(
    problems_path: str | Path,
    candidates_path: str | Path,
    strict: bool = False,
) -> dict[str, tuple[Problem, list[CandidateVertex]]]:
    """Load problems and their candidates; assign deterministic vertex ids.

    Ids follow ``{task_id}/{perspective}/{ordinal}`` with a per-perspective
    ordinal in file order, so reloading the same file reproduces identical
    ids. Malformed lines are reported with their line number and skipped
    (or raised in strict mode).
    """
    problems_path = Path(problems_path)
    candidates_path = Path(candidates_path)
    for path in (problems_path, candidates_path):
        if not path.exists():
            raise FileNotFoundError(path)

    problems: dict[str, Problem] = {}
    for line_no, row in _iter_jsonl(problems_path, strict):
        missing = [k for k in _REQUIRED_PROBLEM_FIELDS if k not in row]
        if missing:
            _report(problems_path, line_no, f"missing fields {missing}", strict)
            continue
        if row["task_id"] in problems:
            _report(
                problems_path, line_no, f"duplicate task_id {row['task_id']!r}", strict
            )
            continue
        try:
            problem = Problem(
                task_id=row["task_id"],
                prompt=row["prompt"],
                entry_point=row["entry_point"],
                labeled_tests=tuple(row.get("golden_tests") or ()),
                canonical_solution=row.get("canonical_solution"),
            )
        except (ValueError, TypeError) as exc:
            _report(problems_path, line_no, str(exc), strict)
            continue
        problems[problem.task_id] = problem

    result: dict[str, tuple[Problem, list[CandidateVertex]]] = {
        task_id: (problem, []) for task_id, problem in problems.items()
    }
    ordinals: dict[tuple[str, str], int] = {}
    for line_no, row in _iter_jsonl(candidates_path, strict):
        missing = [k for k in _REQUIRED_CANDIDATE_FIELDS if k not in row]
        if missing:
            _report(candidates_path, line_no, f"missing fields {missing}", strict)
            continue
        task_id = row["task_id"]
        if task_id not in problems:
            _report(candidates_path, line_no, f"unknown task_id {task_id!r}", strict)
            continue
        try:
            perspective = Perspective.from_name(row["perspective"])
        except ValueError as exc:
            _report(candidates_path, line_no, str(exc), strict)
            continue
        ordinal = ordinals.get((task_id, perspective.value), 0)
        ordinals[(task_id, perspective.value)] = ordinal + 1
        logprob = row.get("logprob")
        vertex = CandidateVertex(
            vertex_id=f"{task_id}/{perspective.value}/{ordinal}",
            task_id=task_id,
            perspective=perspective,
            source_text=row["source_text"],
            logprob=float(logprob) if logprob is not None else None,
        )
        result[task_id][1].append(vertex)

    return result


def extract_docstring_tests(problem: Problem) -> list[CandidateVertex]:
    """Golden test vertices from doctest-style examples in the prompt.

    Each ``>>> entry_point(...)`` example with a one-line expected value
    becomes an assertion; prompts without recognizable examples yield an
    empty list.
    """
    call_pattern = re.compile(rf"{re.escape(problem.entry_point)}\s*\(")
    vertices = []
    for example in doctest.DocTestParser().get_examples(problem.prompt):
        source = example.source.strip()
        # A docstring closing right after the example leaks its quotes into
        # the expected output; drop bare quote lines before judging shape.
        want_lines = [
            line.strip()
            for line in example.want.splitlines()
            if line.strip() and line.strip() not in ('"""', "'''")
        ]
        if len(want_lines) != 1 or "\n" in source:
            continue
        want = want_lines[0]
        if not call_pattern.match(source):
            continue
        assertion = f"assert {source} == {want}"
        vertices.append(
            CandidateVertex(
                vertex_id=f"{problem.task_id}/testcase/doc{len(vertices)}",
                task_id=problem.task_id,
                perspective=Perspective.TESTCASE,
                source_text=assertion,
                is_label=True,
            )
        )
    return vertices


# ---------------------------------------------------------------------------
# Canonical JSON

def _format_float(value: float) -> str:
    if math.isnan(value) or math.isinf(value):
        raise ValueError("non-finite floats are not persistable")
    return format(value, ".12g")


def _write_canonical(obj, out: list[str]) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_format_float(float(obj)))
    elif isinstance(obj, (list, tuple, np.ndarray)):
        out.append("[")
        items = obj.tolist() if isinstance(obj, np.ndarray) else obj
        for i, item in enumerate(items):
            if i:
                out.append(",")
            _write_canonical(item, out)
        out.append("]")
    elif isinstance(obj, dict):
        out.append("{")
        for i, key in enumerate(sorted(obj)):
            if not isinstance(key, str):
                raise TypeError(f"non-string key {key!r}")
            if i:
                out.append(",")
            out.append(json.dumps(key, ensure_ascii=False))
            out.append(":")
            _write_canonical(obj[key], out)
        out.append("}")
    else:
        raise TypeError(f"cannot persist {type(obj).__name__}")


def canonical_json(obj) -> str:
    """Deterministic JSON text: sorted keys, floats at 12 significant digits."""
    out: list[str] = []
    _write_canonical(obj, out)
    out.append("\n")
    return "".join(out)


def persist(artifact, path: str | Path) -> None:
    """Write a graph, score vector or report dict as canonical JSON."""
    if isinstance(artifact, ConsistencyGraph):
        payload = graph_payload(artifact)
    elif isinstance(artifact, ScoreVector):
        payload = _score_vector_payload(artifact)
    elif isinstance(artifact, dict):
        payload = artifact
    else:
        raise TypeError(f"cannot persist {type(artifact).__name__}")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(canonical_json(payload), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Artifact payloads

def graph_payload(graph: ConsistencyGraph) -> dict:
    return {
        "kind": "graph",
        "task_id": graph.task_id,
        "vertices": [
            {
                "vertex_id": v.vertex_id,
                "perspective": v.perspective.value,
                "source_text": v.source_text,
                "logprob": v.logprob,
                "is_label": v.is_label,
            }
            for v in graph.vertices
        ],
        "adjacency": graph.adjacency,
        "prior": graph.prior,
    }


def load_graph(path: str | Path) -> ConsistencyGraph:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    vertices = tuple(
        CandidateVertex(
            vertex_id=v["vertex_id"],
            task_id=payload["task_id"],
            perspective=Perspective.from_name(v["perspective"]),
            source_text=v["source_text"],
            logprob=v.get("logprob"),
            is_label=bool(v.get("is_label", False)),
        )
        for v in payload["vertices"]
    )
    return ConsistencyGraph(
        task_id=payload["task_id"],
        vertices=vertices,
        adjacency=np.array(payload["adjacency"], dtype=float).reshape(
            len(vertices), len(vertices)
        ),
        prior=np.array(payload["prior"], dtype=float),
    )


def _score_vector_payload(scores: ScoreVector) -> dict:
    return {
        "kind": "scores",
        "alpha": scores.alpha,
        "epsilon": scores.epsilon,
        "method": scores.method,
        "iterations": scores.iterations,
        "converged": scores.converged,
        "residual": scores.residual,
        "scores": scores.scores,
    }


def scores_payload(
    task_id: str,
    scores: ScoreVector,
    graph: ConsistencyGraph,
    measure: str,
    edge_mass: float,
) -> dict:
    """Self-contained score artifact: enough to evaluate without the graph."""
    payload = _score_vector_payload(scores)
    payload.update(
        {
            "task_id": task_id,
            "measure": measure,
            "edge_mass": edge_mass,
            "vertex_ids": [v.vertex_id for v in graph.vertices],
            "perspectives": [v.perspective.value for v in graph.vertices],
            "prior": graph.prior,
        }
    )
    return payload


# ---------------------------------------------------------------------------
# Execution record files (replay bundles, debugging)

def persist_records(
    records: dict[tuple[str, str], ExecutionRecord], path: str | Path
) -> None:
    """One JSON line per vertex pair, sorted by pair for stable bytes."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as handle:
            for (left, right), record in sorted(records.items()):
                row = {
                    "left": left,
                    "right": right,
                    "program_hash": record.program_hash,
                    "status": record.status.value,
                    "value": record.value,
                    "wall_time_ms": record.wall_time_ms,
                }
                handle.write(canonical_json(row).strip() + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_records(path: str | Path) -> dict[tuple[str, str], ExecutionRecord]:
    records: dict[tuple[str, str], ExecutionRecord] = {}
    for _, row in _iter_jsonl(Path(path), strict=True):
        records[(row["left"], row["right"])] = ExecutionRecord(
            program_hash=row.get("program_hash", ""),
            status=Status(row["status"]),
            value=row["value"],
            wall_time_ms=int(row.get("wall_time_ms", 0)),
        )
    return records
