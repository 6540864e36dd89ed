"""Command-line pipeline: generate -> rank -> evaluate -> sweep.

Every stage reads and writes files, so each one is independently
re-runnable and inspectable. Score and report files are canonical JSON;
two runs over the same inputs produce byte-identical artifacts (manifests
carry timings and are the one deliberately non-reproducible file).
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import shlex
import time
from pathlib import Path

import click
import httpx

from . import __version__
from . import consistency, execution, generator, ingest, metrics, pipeline
from .core import Perspective

logger = logging.getLogger(__name__)

_MEASURES = [m.value for m in consistency.MeasureKind]
_DROPPABLE = ["specification", "testcase"]


def _safe_name(task_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", task_id)


def _file_hash(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(
    out_dir: Path,
    command: str,
    flags: dict,
    inputs: dict[str, Path],
    cache: execution.ExecutionCache | None,
    timings_ms: dict[str, int],
) -> None:
    manifest = {
        "tool": "mpsc",
        "version": __version__,
        "command": command,
        "flags": {k: (str(v) if isinstance(v, Path) else v) for k, v in flags.items()},
        "dataset_hashes": {
            name: _file_hash(path) for name, path in inputs.items() if path.exists()
        },
        "cache": {
            "hits": cache.hits if cache else 0,
            "misses": cache.misses if cache else 0,
        },
        "timings_ms": timings_ms,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _runner_config(runner_cmd: str | None) -> execution.RunnerConfig | None:
    if not runner_cmd:
        return None
    return execution.RunnerConfig(tuple(shlex.split(runner_cmd)))


def _parse_ks(text: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(piece) for piece in text.replace(" ", "").split(",") if piece)
    except ValueError:
        raise click.BadParameter(f"cannot parse k list {text!r}")
    if not ks or min(ks) < 1:
        raise click.BadParameter("k values must be positive integers")
    return ks


@click.group()
@click.version_option(version=__version__, prog_name="mpsc")
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def main(verbose: bool) -> None:
    """Rank generated programs by cross-checked execution agreement."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


# ---------------------------------------------------------------------------
# generate

@main.command("generate")
@click.option("--problems", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--endpoint", required=True, help="Base URL of the chat-completions API.")
@click.option("--model", required=True)
@click.option("--temperature", type=float, default=0.8, show_default=True)
@click.option("--top-p", type=float, default=0.95, show_default=True)
@click.option("--n-solutions", type=int, default=200, show_default=True)
@click.option("--n-specifications", type=int, default=100, show_default=True)
@click.option("--n-testcases", type=int, default=500, show_default=True)
@click.option("--logprobs/--no-logprobs", default=True, show_default=True)
@click.option("--resume", is_flag=True, help="Skip problems already in the output.")
@click.option("--strict", is_flag=True)
def cmd_generate(
    problems: Path,
    out: Path,
    endpoint: str,
    model: str,
    temperature: float,
    top_p: float,
    n_solutions: int,
    n_specifications: int,
    n_testcases: int,
    logprobs: bool,
    resume: bool,
    strict: bool,
) -> None:
    """Sample candidates for every problem and append them to a JSONL file."""
    started = time.perf_counter()
    config = generator.GenerationConfig(
        endpoint_url=endpoint,
        model=model,
        temperature=temperature,
        top_p=top_p,
        n_solutions=n_solutions,
        n_specifications=n_specifications,
        n_testcases=n_testcases,
        request_logprobs=logprobs,
    )
    dataset = ingest.load_dataset(problems, problems, strict=strict)

    done: set[str] = set()
    if resume and out.exists():
        with out.open(encoding="utf-8") as handle:
            for line in handle:
                try:
                    done.add(json.loads(line)["task_id"])
                except (json.JSONDecodeError, KeyError):
                    continue

    out.parent.mkdir(parents=True, exist_ok=True)
    mode = "a" if resume and out.exists() else "w"
    with httpx.Client(
        headers={"Authorization": f"Bearer {generator.require_api_key()}"}
    ) as client, out.open(mode, encoding="utf-8") as sink:
        for task_id in sorted(dataset):
            if task_id in done:
                logger.info("%s: already generated, skipping", task_id)
                continue
            problem, _ = dataset[task_id]
            vertices = generator.sample_candidates(problem, config, client)
            for v in vertices:
                sink.write(
                    json.dumps(
                        {
                            "task_id": v.task_id,
                            "perspective": v.perspective.value,
                            "source_text": v.source_text,
                            "logprob": v.logprob,
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )
            sink.flush()
            click.echo(f"{task_id}: {len(vertices)} candidates")

    _write_manifest(
        out.parent,
        "generate",
        {
            "problems": problems,
            "out": out,
            "endpoint": endpoint,
            "model": model,
            "temperature": temperature,
            "top_p": top_p,
            "n_solutions": n_solutions,
            "n_specifications": n_specifications,
            "n_testcases": n_testcases,
            "logprobs": logprobs,
        },
        {"problems": problems},
        None,
        {"total": int((time.perf_counter() - started) * 1000)},
    )


# ---------------------------------------------------------------------------
# rank

_RANK_OPTIONS = [
    click.option("--measure", type=click.Choice(_MEASURES), default="uniform",
                 show_default=True),
    click.option("--alpha", type=float, default=0.5, show_default=True),
    click.option("--epsilon", type=float, default=1e-9, show_default=True),
    click.option("--max-iterations", type=int, default=10_000, show_default=True),
    click.option("--method", type=click.Choice(["iterative", "closed"]),
                 default="iterative", show_default=True),
    click.option("--threshold", type=float, default=0.99, show_default=True,
                 help="Binarization threshold for neighbor sets and equivalence."),
    click.option("--drop", "drops", type=click.Choice(_DROPPABLE), multiple=True,
                 help="Ablate a perspective (repeatable)."),
    click.option("--inject-golden", type=int, default=None,
                 help="Add N golden tests as labeled vertices."),
    click.option("--probability-literal", is_flag=True,
                 help="Normalize raw log-probabilities instead of softmax."),
    click.option("--solspec-cap", type=int, default=50, show_default=True),
    click.option("--timeout-ms", type=int, default=10_000, show_default=True),
    click.option("--memory-mb", type=int, default=512, show_default=True),
    click.option("--parallelism", type=int, default=8, show_default=True),
    click.option("--top", "top_k", type=int, default=5, show_default=True),
    click.option("--cache-dir", type=click.Path(path_type=Path), default=None),
    click.option("--runner-cmd", default=None,
                 help="Override the sandbox worker command."),
    click.option("--records", type=click.Path(exists=True, path_type=Path),
                 default=None,
                 help="Replay pre-recorded execution records (no sandbox)."),
    click.option("--strict", is_flag=True),
]


def _with_options(options):
    def wrap(fn):
        for option in reversed(options):
            fn = option(fn)
        return fn

    return wrap


def _build_rank_options(
    measure: str,
    alpha: float,
    epsilon: float,
    max_iterations: int,
    method: str,
    threshold: float,
    drops: tuple[str, ...],
    inject_golden: int | None,
    probability_literal: bool,
    solspec_cap: int,
    timeout_ms: int,
    memory_mb: int,
    parallelism: int,
    top_k: int,
) -> pipeline.RankOptions:
    return pipeline.RankOptions(
        measure=consistency.MeasureKind.from_name(measure),
        alpha=alpha,
        epsilon=epsilon,
        max_iterations=max_iterations,
        method=method,
        threshold=threshold,
        drop=frozenset(Perspective.from_name(d) for d in drops),
        inject_golden=inject_golden,
        probability_literal=probability_literal,
        solspec_sample_cap=solspec_cap,
        timeout_ms=timeout_ms,
        memory_mb=memory_mb,
        parallelism=parallelism,
        top_k=top_k,
    )


def _rank_dataset(
    problems: Path,
    candidates: Path,
    out_dir: Path,
    options: pipeline.RankOptions,
    cache: execution.ExecutionCache,
    runner: execution.RunnerConfig | None,
    records_path: Path | None,
    strict: bool,
) -> dict[str, int]:
    dataset = ingest.load_dataset(problems, candidates, strict=strict)
    records = ingest.load_records(records_path) if records_path else None

    timings: dict[str, int] = {}
    (out_dir / "graphs").mkdir(parents=True, exist_ok=True)
    (out_dir / "scores").mkdir(parents=True, exist_ok=True)
    selected_rows = []
    for task_id in sorted(dataset):
        problem, candidate_list = dataset[task_id]
        if not candidate_list:
            logger.warning("%s: no candidates, skipping", task_id)
            continue
        t0 = time.perf_counter()
        ranked = pipeline.rank_problem(
            problem, candidate_list, options, cache=cache, runner=runner,
            records=records,
        )
        timings[task_id] = int((time.perf_counter() - t0) * 1000)

        name = _safe_name(task_id)
        ingest.persist(ranked.graph, out_dir / "graphs" / f"{name}.json")
        ingest.persist(
            ingest.scores_payload(
                task_id,
                ranked.scores,
                ranked.graph,
                options.measure.value,
                ranked.edge_mass,
            ),
            out_dir / "scores" / f"{name}.json",
        )
        selected_rows.append(
            {"task_id": task_id, "selected": list(ranked.selected)}
        )
        click.echo(
            f"{task_id}: edge mass {ranked.edge_mass:.2f}, "
            f"top {ranked.selected[:1] or ['-']}"
        )

    with (out_dir / "selected.jsonl").open("w", encoding="utf-8") as handle:
        for row in selected_rows:
            handle.write(ingest.canonical_json(row).strip() + "\n")
    return timings


@main.command("rank")
@click.option("--problems", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--candidates", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--out-dir", type=click.Path(path_type=Path), required=True)
@_with_options(_RANK_OPTIONS)
def cmd_rank(problems: Path, candidates: Path, out_dir: Path, **kw) -> None:
    """Execute, build graphs, compute priors and scores, select solutions."""
    started = time.perf_counter()
    cache = execution.ExecutionCache(kw["cache_dir"])
    runner = _runner_config(kw["runner_cmd"])
    options = _build_rank_options(
        kw["measure"], kw["alpha"], kw["epsilon"], kw["max_iterations"],
        kw["method"], kw["threshold"], kw["drops"], kw["inject_golden"],
        kw["probability_literal"], kw["solspec_cap"], kw["timeout_ms"],
        kw["memory_mb"], kw["parallelism"], kw["top_k"],
    )
    timings = _rank_dataset(
        problems, candidates, out_dir, options, cache, runner,
        kw["records"], kw["strict"],
    )
    timings["total"] = int((time.perf_counter() - started) * 1000)
    flags = {k: v for k, v in kw.items()}
    flags.update({"problems": problems, "candidates": candidates, "out_dir": out_dir})
    flags["drops"] = list(kw["drops"])
    _write_manifest(
        out_dir, "rank", flags,
        {"problems": problems, "candidates": candidates},
        cache, timings,
    )


# ---------------------------------------------------------------------------
# evaluate

def _evaluate_run(
    problems: Path,
    candidates: Path,
    run_dir: Path,
    ks: tuple[int, ...],
    bins: int,
    cache: execution.ExecutionCache,
    runner: execution.RunnerConfig | None,
    parallelism: int,
    timeout_ms: int,
    strict: bool,
) -> dict:
    dataset = ingest.load_dataset(problems, candidates, strict=strict)
    scores_dir = run_dir / "scores"
    if not scores_dir.is_dir():
        raise click.ClickException(f"no scores directory under {run_dir}")

    evaluations = []
    skipped: list[str] = []
    for score_file in sorted(scores_dir.glob("*.json")):
        payload = json.loads(score_file.read_text(encoding="utf-8"))
        task_id = payload["task_id"]
        if task_id not in dataset:
            logger.warning("%s: scored but absent from dataset, ignoring", task_id)
            continue
        problem, candidate_list = dataset[task_id]
        if not problem.labeled_tests:
            skipped.append(task_id)
            continue
        solution_ids = [
            vid
            for vid, p in zip(payload["vertex_ids"], payload["perspectives"])
            if p == Perspective.SOLUTION.value
        ]
        solution_scores = [
            s
            for s, p in zip(payload["scores"], payload["perspectives"])
            if p == Perspective.SOLUTION.value
        ]
        evaluations.append(
            pipeline.evaluate_problem(
                problem,
                candidate_list,
                solution_ids,
                solution_scores,
                ks,
                edge_mass=payload.get("edge_mass", 0.0),
                cache=cache,
                runner=runner,
                parallelism=parallelism,
                timeout_ms=timeout_ms,
            )
        )

    if not evaluations:
        raise click.ClickException("no problem had both scores and golden tests")
    return metrics.aggregate(
        evaluations, ks=ks, bins=bins, skipped=tuple(skipped)
    )


@main.command("evaluate")
@click.option("--problems", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--candidates", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--run-dir", type=click.Path(exists=True, path_type=Path), required=True,
              help="Output directory of a rank run.")
@click.option("--out-dir", type=click.Path(path_type=Path), default=None,
              help="Defaults to the run directory.")
@click.option("--k", "ks_text", default="1,2,5", show_default=True)
@click.option("--bins", type=int, default=0, show_default=True,
              help="Edge-mass histogram bins for the density analysis.")
@click.option("--parallelism", type=int, default=8, show_default=True)
@click.option("--timeout-ms", type=int, default=10_000, show_default=True)
@click.option("--cache-dir", type=click.Path(path_type=Path), default=None)
@click.option("--runner-cmd", default=None)
@click.option("--label", default=None, help="Row label in the text table.")
@click.option("--strict", is_flag=True)
def cmd_evaluate(
    problems: Path,
    candidates: Path,
    run_dir: Path,
    out_dir: Path | None,
    ks_text: str,
    bins: int,
    parallelism: int,
    timeout_ms: int,
    cache_dir: Path | None,
    runner_cmd: str | None,
    label: str | None,
    strict: bool,
) -> None:
    """Adjudicate against golden tests and report ranked Pass@k."""
    started = time.perf_counter()
    out_dir = out_dir or run_dir
    ks = _parse_ks(ks_text)
    cache = execution.ExecutionCache(cache_dir)
    report = _evaluate_run(
        problems, candidates, run_dir, ks, bins, cache,
        _runner_config(runner_cmd), parallelism, timeout_ms, strict,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    ingest.persist(report, out_dir / "report.json")
    table = metrics.format_report_table(report, label=label or "mpsc")
    (out_dir / "report.txt").write_text(table, encoding="utf-8")
    click.echo(table, nl=False)
    _write_manifest(
        out_dir, "evaluate",
        {
            "problems": problems, "candidates": candidates, "run_dir": run_dir,
            "k": list(ks), "bins": bins,
        },
        {"problems": problems, "candidates": candidates},
        cache,
        {"total": int((time.perf_counter() - started) * 1000)},
    )


# ---------------------------------------------------------------------------
# sweep

@main.command("sweep")
@click.option("--problems", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--candidates", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--out-dir", type=click.Path(path_type=Path), required=True)
@click.option("--alphas", default=None, help="Comma list, e.g. 0.1,0.5,0.9.")
@click.option("--spec-counts", default=None,
              help="Comma list of specification sample sizes.")
@click.option("--test-counts", default=None,
              help="Comma list of test-case sample sizes.")
@click.option("--k", "ks_text", default="1,2,5", show_default=True)
@_with_options(_RANK_OPTIONS)
def cmd_sweep(
    problems: Path,
    candidates: Path,
    out_dir: Path,
    alphas: str | None,
    spec_counts: str | None,
    test_counts: str | None,
    ks_text: str,
    **kw,
) -> None:
    """Rank and evaluate over a grid of alphas or sampling sizes.

    Sampling sweeps keep the first N candidates of a perspective by ordinal,
    so every grid point reuses the same execution cache.
    """
    started = time.perf_counter()
    cache = execution.ExecutionCache(kw["cache_dir"])
    runner = _runner_config(kw["runner_cmd"])
    ks = _parse_ks(ks_text)

    alpha_grid = (
        [float(piece) for piece in alphas.split(",") if piece]
        if alphas
        else [kw["alpha"]]
    )
    spec_grid = (
        [int(piece) for piece in spec_counts.split(",") if piece]
        if spec_counts
        else [None]
    )
    test_grid = (
        [int(piece) for piece in test_counts.split(",") if piece]
        if test_counts
        else [None]
    )

    rows = []
    for alpha in alpha_grid:
        for n_specs in spec_grid:
            for n_tests in test_grid:
                tags = [f"alpha={alpha:g}"]
                if n_specs is not None:
                    tags.append(f"specs={n_specs}")
                if n_tests is not None:
                    tags.append(f"tests={n_tests}")
                point = "_".join(tags).replace("=", "")
                point_dir = out_dir / "points" / point
                subset = _subset_candidates(candidates, point_dir, n_specs, n_tests)
                options = _build_rank_options(
                    kw["measure"], alpha, kw["epsilon"], kw["max_iterations"],
                    kw["method"], kw["threshold"], kw["drops"],
                    kw["inject_golden"], kw["probability_literal"],
                    kw["solspec_cap"], kw["timeout_ms"], kw["memory_mb"],
                    kw["parallelism"], kw["top_k"],
                )
                _rank_dataset(
                    problems, subset, point_dir, options, cache, runner,
                    kw["records"], kw["strict"],
                )
                try:
                    report = _evaluate_run(
                        problems, subset, point_dir, ks, 0, cache, runner,
                        kw["parallelism"], kw["timeout_ms"], kw["strict"],
                    )
                    means = report["mean_pass_at_k"]
                except click.ClickException:
                    means = {str(k): None for k in ks}
                rows.append({"point": ", ".join(tags), "mean_pass_at_k": means})
                click.echo(f"{', '.join(tags)}: {means}")

    grid = {"ks": list(ks), "rows": rows}
    out_dir.mkdir(parents=True, exist_ok=True)
    ingest.persist(grid, out_dir / "grid.json")
    lines = [f"{'point':<36}" + "".join(f"Pass@{k:<6}" for k in ks)]
    for row in rows:
        cells = []
        for k in ks:
            value = row["mean_pass_at_k"].get(str(k))
            cells.append(f"{100 * value:>10.2f} " if value is not None else
                         f"{'-':>10} ")
        lines.append(f"{row['point']:<36}" + "".join(cells))
    (out_dir / "grid.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    click.echo("\n".join(lines))
    _write_manifest(
        out_dir, "sweep",
        {"alphas": alphas, "spec_counts": spec_counts, "test_counts": test_counts},
        {"problems": problems, "candidates": candidates},
        cache,
        {"total": int((time.perf_counter() - started) * 1000)},
    )


def _subset_candidates(
    candidates: Path, point_dir: Path, n_specs: int | None, n_tests: int | None
) -> Path:
    """Deterministic ordinal-prefix subsample of a candidates file."""
    if n_specs is None and n_tests is None:
        return candidates
    caps = {"specification": n_specs, "testcase": n_tests}
    counts: dict[tuple[str, str], int] = {}
    point_dir.mkdir(parents=True, exist_ok=True)
    subset_path = point_dir / "candidates.jsonl"
    with candidates.open(encoding="utf-8") as src, subset_path.open(
        "w", encoding="utf-8"
    ) as sink:
        for line in src:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            perspective = row.get("perspective", "")
            cap = caps.get(perspective)
            if cap is not None:
                key = (row.get("task_id", ""), perspective)
                seen = counts.get(key, 0)
                if seen >= cap:
                    continue
                counts[key] = seen + 1
            sink.write(line + "\n")
    return subset_path


if __name__ == "__main__":
    main()
