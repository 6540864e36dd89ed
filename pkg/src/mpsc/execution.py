"""Compose and run the verification programs behind every edge weight.

For each cross-perspective pair a small self-contained Python program is
assembled whose last act is to set ``final_result``:

* solution vs test case: 1 when the solution runs the assertion cleanly;
* specification vs test case: 1 when the test's input passes the
  precondition and its input/output pair passes the postcondition;
* solution vs specification: the fraction of sampled inputs accepted by the
  precondition whose solution output satisfies the postcondition.

Programs run in short-lived sandbox worker processes speaking line-delimited
JSON. Worker startup dominates job cost, so each worker serves a small chunk
of jobs; a worker lost mid-chunk triggers individual re-execution of the
jobs behind the failure, keeping records strictly per job. Results are
cached on disk keyed by a content hash of the program and its limits, so
rebuilding graphs is cheap and reruns are idempotent. Failures of any kind
(timeout, crash, unparsable test) become weight 0, never failures of the
batch.
"""

from __future__ import annotations

import ast
import enum
import hashlib
import importlib.util
import json
import logging
import os
import shlex
import signal
import subprocess
import sys
import textwrap
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .core import CandidateVertex, ExecutionRecord, Perspective, Problem, Status
from .graph import GraphConfig, pair_key

logger = logging.getLogger(__name__)

__all__ = [
    "PairKind",
    "SandboxJob",
    "ExecutionCache",
    "RunnerConfig",
    "compose_program",
    "run_jobs",
    "parse_assertions",
    "collect_pair_records",
    "PerspectiveMismatch",
    "EmptyInputPool",
    "RunnerUnavailable",
    "CacheCorrupt",
]

DEFAULT_TIMEOUT_MS = 10_000
DEFAULT_MEMORY_MB = 512
KILL_GRACE_MS = 2_000


class PerspectiveMismatch(ValueError):
    pass


class EmptyInputPool(ValueError):
    pass


class RunnerUnavailable(RuntimeError):
    pass


class CacheCorrupt(RuntimeError):
    pass


class PairKind(enum.Enum):
    SOLUTION_TEST = "solution-test"
    SOLUTION_SPEC = "solution-spec"
    SPEC_TEST = "spec-test"


_EXPECTED_PERSPECTIVES = {
    PairKind.SOLUTION_TEST: (Perspective.SOLUTION, Perspective.TESTCASE),
    PairKind.SOLUTION_SPEC: (Perspective.SOLUTION, Perspective.SPECIFICATION),
    PairKind.SPEC_TEST: (Perspective.SPECIFICATION, Perspective.TESTCASE),
}


@dataclass(frozen=True)
class SandboxJob:
    """One verification program plus its resource limits.

    ``job_key`` is a deterministic content hash of everything that can
    influence the result, and doubles as the cache address.
    """

    program_text: str
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    memory_mb: int = DEFAULT_MEMORY_MB
    mode: str = "Execute"
    entry_point: str | None = None
    job_key: str = field(init=False)

    def __post_init__(self) -> None:
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")
        digest = hashlib.sha256(
            json.dumps(
                [
                    self.mode,
                    self.program_text,
                    self.timeout_ms,
                    self.memory_mb,
                    self.entry_point,
                ],
                ensure_ascii=False,
            ).encode("utf-8")
        ).hexdigest()
        object.__setattr__(self, "job_key", digest)

    @property
    def program_hash(self) -> str:
        return hashlib.sha256(self.program_text.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Program composition

_SOLUTION_TEST_TEMPLATE = """\
{solution}

final_result = 0
try:
{assertion}
    final_result = 1
except Exception:
    final_result = 0
"""

_SPEC_TEST_TEMPLATE = """\
{spec}

_args = {args!r}
_expected = {expected!r}
final_result = 0
try:
    if preconditions(*_args) is not False:
        if postconditions(*_args, _expected) is not False:
            final_result = 1
except Exception:
    final_result = 0
"""

# The specification is defined first so that a docstring stub it may carry
# cannot shadow the real solution; predicate references are pinned before the
# solution executes.
_SOLUTION_SPEC_TEMPLATE = """\
{spec}

_pre_fn = preconditions
_post_fn = postconditions

{solution}

_entry_fn = {entry_point}
_inputs = {inputs!r}
_valid = 0
_agree = 0
for _args in _inputs:
    try:
        if _pre_fn(*_args) is False:
            continue
    except Exception:
        continue
    _valid += 1
    try:
        _out = _entry_fn(*_args)
        if _post_fn(*_args, _out) is not False:
            _agree += 1
    except Exception:
        pass
final_result = (_agree / _valid) if _valid else 0.0
"""


def _require_perspectives(
    kind: PairKind, left: CandidateVertex, right: CandidateVertex
) -> None:
    expected = _EXPECTED_PERSPECTIVES[kind]
    actual = (left.perspective, right.perspective)
    if actual != expected:
        raise PerspectiveMismatch(
            f"{kind.value} expects {tuple(p.value for p in expected)}, "
            f"got {tuple(p.value for p in actual)}"
        )


def compose_program(
    kind: PairKind,
    left: CandidateVertex,
    right: CandidateVertex,
    inputs: list[tuple] | None = None,
    entry_point: str | None = None,
    timeout_ms: int = DEFAULT_TIMEOUT_MS,
    memory_mb: int = DEFAULT_MEMORY_MB,
) -> SandboxJob:
    """Build the verification program for one cross-perspective pair.

    ``inputs`` (parsed argument tuples) and ``entry_point`` are required for
    solution-vs-specification pairs only. For specification-vs-test pairs,
    ``inputs`` carries the single parsed (args, expected) pair of the test.
    """
    _require_perspectives(kind, left, right)

    if kind is PairKind.SOLUTION_TEST:
        program = _SOLUTION_TEST_TEMPLATE.format(
            solution=left.source_text.rstrip(),
            assertion=textwrap.indent(right.source_text.strip(), "    "),
        )
    elif kind is PairKind.SPEC_TEST:
        if not inputs or len(inputs) != 1 or len(inputs[0]) != 2:
            raise ValueError("spec-test composition needs one parsed (args, expected)")
        args, expected = inputs[0]
        program = _SPEC_TEST_TEMPLATE.format(
            spec=left.source_text.rstrip(), args=tuple(args), expected=expected
        )
    else:
        if not inputs:
            raise EmptyInputPool(
                f"no sampled inputs for {left.vertex_id} x {right.vertex_id}"
            )
        if not entry_point:
            raise ValueError("solution-spec composition needs the entry point name")
        program = _SOLUTION_SPEC_TEMPLATE.format(
            spec=right.source_text.rstrip(),
            solution=left.source_text.rstrip(),
            entry_point=entry_point,
            inputs=[tuple(args) for args in inputs],
        )
    return SandboxJob(program_text=program, timeout_ms=timeout_ms, memory_mb=memory_mb)


# ---------------------------------------------------------------------------
# Result cache

class ExecutionCache:
    """Content-addressed JSON store, one file per job key with 2-char fan-out.

    Writes go through a temp file and an atomic rename so concurrent writers
    can never expose a torn record. ``root=None`` keeps everything in memory
    (tests, dry runs).
    """

    def __init__(self, root: str | Path | None):
        self.root = Path(root) if root is not None else None
        self._memory: dict[str, dict] = {}
        self.hits = 0
        self.misses = 0

    def namespace(self, name: str) -> "ExecutionCache":
        """A cache view rooted in a subdirectory (separate key space)."""
        if self.root is None:
            child = ExecutionCache(None)
            child._memory = self._memory.setdefault(f"ns:{name}", {})  # type: ignore[assignment]
            return child
        return ExecutionCache(self.root / name)

    def _path(self, key: str) -> Path:
        assert self.root is not None
        return self.root / key[:2] / f"{key[2:]}.json"

    def get(self, key: str) -> dict | None:
        if self.root is None:
            payload = self._memory.get(key)
            self.hits += payload is not None
            self.misses += payload is None
            return payload
        path = self._path(key)
        if not path.exists():
            self.misses += 1
            return None
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise CacheCorrupt(f"{path}: {exc}") from exc
        if not isinstance(payload, dict):
            raise CacheCorrupt(f"{path}: expected a JSON object")
        self.hits += 1
        return payload

    def put(self, key: str, payload: dict) -> None:
        if self.root is None:
            self._memory[key] = payload
            return
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
        tmp.write_text(
            json.dumps(payload, sort_keys=True, ensure_ascii=False), encoding="utf-8"
        )
        os.replace(tmp, path)


def _record_to_payload(record: ExecutionRecord) -> dict:
    return {
        "program_hash": record.program_hash,
        "status": record.status.value,
        "value": record.value,
        "wall_time_ms": record.wall_time_ms,
    }


def _record_from_payload(payload: dict, key: str) -> ExecutionRecord:
    try:
        return ExecutionRecord(
            program_hash=payload["program_hash"],
            status=Status(payload["status"]),
            value=payload["value"],
            wall_time_ms=int(payload["wall_time_ms"]),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise CacheCorrupt(f"record {key}: {exc}") from exc


# ---------------------------------------------------------------------------
# Sandbox dispatch

_BOOTSTRAP = (
    "import sys;sys.path.insert(0,sys.argv[1]);del sys.argv[1];"
    "from mpsc_runner.__main__ import main;sys.exit(main())"
)


@dataclass(frozen=True)
class RunnerConfig:
    """How to start a sandbox worker process.

    Worker startup gates every verification job, so when the worker package
    is resolvable the default launches it with ``-S -E`` (no site machinery)
    through a tiny bootstrap; otherwise it falls back to ``-m mpsc_runner``.
    The MPSC_RUNNER environment variable or an explicit command overrides
    either.
    """

    command: tuple[str, ...]

    @classmethod
    def default(cls) -> "RunnerConfig":
        override = os.environ.get("MPSC_RUNNER", "").strip()
        if override:
            return cls(tuple(shlex.split(override)))
        try:
            spec = importlib.util.find_spec("mpsc_runner")
        except (ImportError, ValueError):
            spec = None
        if spec is not None and spec.origin:
            package_parent = str(Path(spec.origin).parent.parent)
            return cls(
                (sys.executable, "-S", "-E", "-c", _BOOTSTRAP, package_parent)
            )
        return cls((sys.executable, "-m", "mpsc_runner"))


_PROBED_COMMANDS: set[tuple[str, ...]] = set()


def _kill_process_group(proc: subprocess.Popen) -> None:
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        pass
    try:
        proc.wait(timeout=5)
    except subprocess.TimeoutExpired:  # pragma: no cover - kernel-level stall
        pass


def _run_batch(
    requests: list[dict],
    budget_ms: int,
    memory_mb: int,
    runner: RunnerConfig,
) -> tuple[list[dict | None], bool]:
    """Feed requests to one worker process; collect one response line each.

    Returns the responses aligned with the requests (``None`` where the
    worker died before answering) and whether the overall budget expired.
    Worker startup dominates job cost on small machines, so callers batch a
    handful of requests per process; a worker killed mid-batch only loses
    the answers it had not produced yet.
    """
    cmd = list(runner.command) + ["--memory-mb", str(memory_mb)]
    try:
        proc = subprocess.Popen(
            cmd,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            start_new_session=True,
        )
    except (FileNotFoundError, PermissionError) as exc:
        raise RunnerUnavailable(f"cannot start sandbox worker {cmd}: {exc}") from exc

    payload = "".join(json.dumps(r) + "\n" for r in requests)
    out = ""
    timed_out = False
    try:
        out, _ = proc.communicate(
            payload, timeout=(budget_ms + KILL_GRACE_MS) / 1000.0
        )
    except subprocess.TimeoutExpired:
        timed_out = True
        _kill_process_group(proc)
        try:  # reap and close the pipes; keep whatever was already written
            out, _ = proc.communicate(timeout=5)
        except (subprocess.TimeoutExpired, ValueError, OSError):
            out = ""
    finally:
        if proc.poll() is None:
            _kill_process_group(proc)

    responses: list[dict | None] = [None] * len(requests)
    for i, line in enumerate(out.splitlines()[: len(requests)] if out else []):
        try:
            decoded = json.loads(line)
        except json.JSONDecodeError:
            continue
        if isinstance(decoded, dict):
            responses[i] = decoded
    return responses, timed_out


def _probe_runner(runner: RunnerConfig) -> None:
    if runner.command in _PROBED_COMMANDS:
        return
    responses, _ = _run_batch(
        [{"mode": "Execute", "program_text": "final_result = 1", "timeout_ms": 5000}],
        budget_ms=5000,
        memory_mb=DEFAULT_MEMORY_MB,
        runner=runner,
    )
    if not responses[0] or responses[0].get("status") != "Ok":
        raise RunnerUnavailable(
            f"sandbox worker {list(runner.command)} failed its probe; "
            "is the mpsc-runner package installed for this interpreter?"
        )
    _PROBED_COMMANDS.add(runner.command)


def _record_from_response(job: SandboxJob, response: dict) -> ExecutionRecord:
    status_name = response.get("status", "RuntimeError")
    try:
        status = Status(status_name)
    except ValueError:
        status = Status.RUNTIME_ERROR
    value = response.get("value") if status is Status.OK else None
    if status is Status.OK and not isinstance(value, (int, float)):
        status, value = Status.RUNTIME_ERROR, None
    if value is not None:
        value = min(max(float(value), 0.0), 1.0)
    wall = response.get("wall_time_ms")
    return ExecutionRecord(
        program_hash=job.program_hash,
        status=status,
        value=value,
        wall_time_ms=int(wall) if isinstance(wall, (int, float)) else 0,
    )


def _execute_chunk(
    chunk: list[SandboxJob], runner: RunnerConfig
) -> tuple[dict[str, ExecutionRecord], list[SandboxJob]]:
    """Run a chunk in one worker; report records plus jobs needing a retry.

    Responses come back in request order, so when the worker dies the first
    unanswered job is the one that killed it (crash) or wedged it past its
    budget (timeout); everything after it gets re-run elsewhere so that a
    poisonous job can never affect another job's record.
    """
    requests = [
        {"mode": "Execute", "program_text": j.program_text, "timeout_ms": j.timeout_ms}
        for j in chunk
    ]
    budget_ms = sum(j.timeout_ms for j in chunk)
    started = time.perf_counter()
    responses, timed_out = _run_batch(
        requests, budget_ms, chunk[0].memory_mb, runner
    )
    wall_ms = int((time.perf_counter() - started) * 1000)

    records: dict[str, ExecutionRecord] = {}
    unresolved: list[SandboxJob] = []
    answered = sum(1 for r in responses if r is not None)
    for i, (job, response) in enumerate(zip(chunk, responses)):
        if response is not None:
            records[job.job_key] = _record_from_response(job, response)
        elif i == answered:
            # The in-flight job when the worker stopped responding.
            records[job.job_key] = ExecutionRecord(
                program_hash=job.program_hash,
                status=Status.TIMEOUT if timed_out else Status.RUNTIME_ERROR,
                value=None,
                wall_time_ms=wall_ms,
            )
        else:
            unresolved.append(job)
    return records, unresolved


def run_jobs(
    jobs: list[SandboxJob],
    cache: ExecutionCache,
    parallelism: int = 8,
    runner: RunnerConfig | None = None,
    jobs_per_worker: int = 8,
) -> dict[str, ExecutionRecord]:
    """Execute a batch, at most once per job key per cache lifetime.

    Cache hits never touch the sandbox; at most ``parallelism`` worker
    processes are alive at any moment. Job failures are recorded, not
    raised; only a missing/broken worker binary raises.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be at least 1")
    runner = runner or RunnerConfig.default()

    results: dict[str, ExecutionRecord] = {}
    pending: dict[str, SandboxJob] = {}
    for job in jobs:
        if job.job_key in results or job.job_key in pending:
            continue
        if job.mode != "Execute":
            raise ValueError("run_jobs handles Execute jobs; see parse_assertions")
        payload = cache.get(job.job_key)
        if payload is not None:
            results[job.job_key] = _record_from_payload(payload, job.job_key)
        else:
            pending[job.job_key] = job

    if pending:
        _probe_runner(runner)
        chunk_size = max(1, jobs_per_worker)
        by_memory: dict[int, list[SandboxJob]] = {}
        for job in pending.values():
            by_memory.setdefault(job.memory_mb, []).append(job)
        chunks = [
            group[i : i + chunk_size]
            for group in by_memory.values()
            for i in range(0, len(group), chunk_size)
        ]
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            retries: list[SandboxJob] = []
            for records, unresolved in pool.map(
                lambda c: _execute_chunk(c, runner), chunks
            ):
                results.update(records)
                retries.extend(unresolved)
            if retries:
                # One job per worker this time: full isolation for stragglers.
                for records, _ in pool.map(
                    lambda j: _execute_chunk([j], runner), retries
                ):
                    results.update(records)
        for key, job in pending.items():
            cache.put(key, _record_to_payload(results[key]))
    return results


# ---------------------------------------------------------------------------
# Assertion parsing through the worker (same isolation boundary)

def _literal_from_wire(value):
    """Rebuild a Python literal from its protocol encoding."""
    if isinstance(value, dict):
        if set(value) == {"__pyrepr__"}:
            return ast.literal_eval(value["__pyrepr__"])
        return {k: _literal_from_wire(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_literal_from_wire(v) for v in value]
    return value


def parse_assertions(
    tests: list[CandidateVertex],
    entry_point: str,
    cache: ExecutionCache,
    parallelism: int = 8,
    runner: RunnerConfig | None = None,
) -> dict[str, tuple[tuple, object] | None]:
    """Parse each test vertex into (args tuple, expected), or None if unparsable."""
    runner = runner or RunnerConfig.default()
    parse_cache = cache.namespace("parse")

    def job_for(test: CandidateVertex) -> SandboxJob:
        return SandboxJob(
            program_text=test.source_text,
            timeout_ms=5_000,
            mode="ParseAssertion",
            entry_point=entry_point,
        )

    def decode(payload: dict) -> tuple[tuple, object] | None:
        if payload.get("status") != "Ok":
            return None
        value = payload.get("value") or {}
        try:
            args = tuple(_literal_from_wire(a) for a in value["args"])
            expected = _literal_from_wire(value["expected"])
        except (KeyError, TypeError, ValueError, SyntaxError):
            return None
        return args, expected

    results: dict[str, tuple[tuple, object] | None] = {}
    pending: list[tuple[CandidateVertex, SandboxJob]] = []
    for test in tests:
        job = job_for(test)
        payload = parse_cache.get(job.job_key)
        if payload is not None:
            results[test.vertex_id] = decode(payload)
        else:
            pending.append((test, job))

    if pending:
        _probe_runner(runner)
        chunks = [pending[i : i + 16] for i in range(0, len(pending), 16)]

        def call(chunk: list[tuple[CandidateVertex, SandboxJob]]) -> list[dict]:
            requests = [
                {
                    "mode": "ParseAssertion",
                    "program_text": job.program_text,
                    "timeout_ms": job.timeout_ms,
                    "entry_point": entry_point,
                }
                for _, job in chunk
            ]
            responses, _ = _run_batch(
                requests,
                budget_ms=sum(job.timeout_ms for _, job in chunk),
                memory_mb=DEFAULT_MEMORY_MB,
                runner=runner,
            )
            return [
                r if r is not None else {"status": "RuntimeError", "value": None}
                for r in responses
            ]

        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            for chunk, payloads in zip(chunks, pool.map(call, chunks)):
                for (test, job), payload in zip(chunk, payloads):
                    parse_cache.put(job.job_key, payload)
                    results[test.vertex_id] = decode(payload)
    return results


# ---------------------------------------------------------------------------
# Per-problem orchestration

def collect_pair_records(
    problem: Problem,
    candidates: list[CandidateVertex],
    config: GraphConfig | None = None,
    cache: ExecutionCache | None = None,
    parallelism: int = 8,
    runner: RunnerConfig | None = None,
    timeout_ms: int = DEFAULT_TIMEOUT_MS,
    memory_mb: int = DEFAULT_MEMORY_MB,
) -> dict[tuple[str, str], ExecutionRecord]:
    """Execute every cross-perspective check one graph needs.

    Returns records keyed the way :func:`mpsc.graph.build_graph` expects.
    The solution-vs-specification input pool is drawn from the parsed inputs
    of all the problem's test candidates (first occurrence order, capped),
    independent of perspective ablation, so specification edges survive a
    test-case ablation.
    """
    config = config or GraphConfig()
    cache = cache or ExecutionCache(None)
    runner = runner or RunnerConfig.default()

    solutions = [c for c in candidates if c.perspective is Perspective.SOLUTION]
    specs = [c for c in candidates if c.perspective is Perspective.SPECIFICATION]
    tests = [c for c in candidates if c.perspective is Perspective.TESTCASE]

    parsed = parse_assertions(tests, problem.entry_point, cache, parallelism, runner)

    pool: list[tuple] = []
    seen_inputs: set[str] = set()
    for test in tests:
        hit = parsed.get(test.vertex_id)
        if hit is None:
            continue
        args = hit[0]
        fingerprint = repr(args)
        if fingerprint not in seen_inputs:
            seen_inputs.add(fingerprint)
            pool.append(args)
        if len(pool) >= config.solspec_sample_cap:
            break

    kept_specs = specs if config.include_specifications else []
    kept_tests = tests if config.include_testcases else []

    jobs: list[SandboxJob] = []
    pairs_of_key: dict[str, list[tuple[str, str]]] = {}

    def add(job: SandboxJob, left: CandidateVertex, right: CandidateVertex) -> None:
        jobs.append(job)
        pairs_of_key.setdefault(job.job_key, []).append(pair_key(left, right))

    for solution in solutions:
        for test in kept_tests:
            add(
                compose_program(
                    PairKind.SOLUTION_TEST,
                    solution,
                    test,
                    timeout_ms=timeout_ms,
                    memory_mb=memory_mb,
                ),
                solution,
                test,
            )
    for spec in kept_specs:
        for test in kept_tests:
            hit = parsed.get(test.vertex_id)
            if hit is None:
                continue  # unparsable test: no spec edge, by construction
            add(
                compose_program(
                    PairKind.SPEC_TEST,
                    spec,
                    test,
                    inputs=[hit],
                    timeout_ms=timeout_ms,
                    memory_mb=memory_mb,
                ),
                spec,
                test,
            )
    if pool:
        for solution in solutions:
            for spec in kept_specs:
                add(
                    compose_program(
                        PairKind.SOLUTION_SPEC,
                        solution,
                        spec,
                        inputs=pool,
                        entry_point=problem.entry_point,
                        timeout_ms=timeout_ms,
                        memory_mb=memory_mb,
                    ),
                    solution,
                    spec,
                )
    elif solutions and kept_specs:
        logger.warning(
            "%s: no parsable test inputs, solution-specification edges are 0",
            problem.task_id,
        )

    records = run_jobs(jobs, cache, parallelism, runner)
    out: dict[tuple[str, str], ExecutionRecord] = {}
    for key, pairs in pairs_of_key.items():
        for pair in pairs:
            out[pair] = records[key]
    return out
