import time

import pytest

from mpsc.core import Perspective, Status, Problem
from mpsc.execution import (
    CacheCorrupt,
    EmptyInputPool,
    ExecutionCache,
    PairKind,
    PerspectiveMismatch,
    RunnerConfig,
    RunnerUnavailable,
    SandboxJob,
    collect_pair_records,
    compose_program,
    parse_assertions,
    run_jobs,
)
from mpsc.graph import GraphConfig, pair_key
from graphtools import make_vertex

INCREMENT = make_vertex(
    "toy/0", Perspective.SOLUTION, "def f(x):\n    return x + 1", 0
)
IDENTITY = make_vertex("toy/0", Perspective.SOLUTION, "def f(x):\n    return x", 1)
PASSING_TEST = make_vertex("toy/0", Perspective.TESTCASE, "assert f(1) == 2", 0)
SPEC = make_vertex(
    "toy/0",
    Perspective.SPECIFICATION,
    "def preconditions(x):\n"
    "    assert isinstance(x, int)\n"
    "\n"
    "def postconditions(x, y):\n"
    "    assert y == x + 1\n",
    0,
)


def run_one(job: SandboxJob, cache: ExecutionCache | None = None):
    cache = cache or ExecutionCache(None)
    return run_jobs([job], cache)[job.job_key]


class TestComposeProgram:
    def test_correct_solution_passes_its_assertion(self):
        job = compose_program(PairKind.SOLUTION_TEST, INCREMENT, PASSING_TEST)
        record = run_one(job)
        assert record.status is Status.OK and record.value == 1.0

    def test_wrong_solution_fails_the_assertion(self):
        job = compose_program(PairKind.SOLUTION_TEST, IDENTITY, PASSING_TEST)
        record = run_one(job)
        assert record.status is Status.OK and record.value == 0.0

    def test_solution_spec_fraction_over_valid_inputs(self):
        # Hand evaluation: "a" fails the precondition and drops out; the
        # three integer inputs all satisfy the postcondition, so 3/3 = 1.0.
        job = compose_program(
            PairKind.SOLUTION_SPEC,
            INCREMENT,
            SPEC,
            inputs=[(1,), (2,), (3,), ("a",)],
            entry_point="f",
        )
        record = run_one(job)
        assert record.status is Status.OK and record.value == 1.0

    def test_solution_spec_partial_agreement(self):
        # Clamp-at-3 solution: agrees on inputs 1 and 2, disagrees on 3.
        clamped = make_vertex(
            "toy/0", Perspective.SOLUTION, "def f(x):\n    return min(x + 1, 3)", 2
        )
        job = compose_program(
            PairKind.SOLUTION_SPEC,
            clamped,
            SPEC,
            inputs=[(1,), (2,), (3,)],
            entry_point="f",
        )
        record = run_one(job)
        assert record.status is Status.OK
        assert record.value == pytest.approx(2 / 3)

    def test_spec_test_agreement_and_disagreement(self):
        good = compose_program(
            PairKind.SPEC_TEST, SPEC, PASSING_TEST, inputs=[((1,), 2)]
        )
        assert run_one(good).value == 1.0
        bad = compose_program(
            PairKind.SPEC_TEST, SPEC, PASSING_TEST, inputs=[((1,), 3)]
        )
        assert run_one(bad).value == 0.0

    def test_perspective_mismatch(self):
        with pytest.raises(PerspectiveMismatch):
            compose_program(PairKind.SOLUTION_TEST, PASSING_TEST, INCREMENT)

    def test_empty_input_pool(self):
        with pytest.raises(EmptyInputPool):
            compose_program(
                PairKind.SOLUTION_SPEC, INCREMENT, SPEC, inputs=[], entry_point="f"
            )

    def test_broken_solution_is_a_runtime_error(self):
        broken = make_vertex("toy/0", Perspective.SOLUTION, "def f(x) return x", 3)
        record = run_one(compose_program(PairKind.SOLUTION_TEST, broken, PASSING_TEST))
        assert record.status in (Status.PARSE_ERROR, Status.RUNTIME_ERROR)
        assert record.weight == 0.0


class TestRunJobs:
    def test_cache_hit_is_fast_and_identical(self, tmp_path):
        cache = ExecutionCache(tmp_path / "cache")
        job = SandboxJob(program_text="final_result = 0.25")
        first = run_jobs([job], cache)[job.job_key]
        started = time.perf_counter()
        second = run_jobs([job], cache)[job.job_key]
        elapsed = time.perf_counter() - started
        assert elapsed < 0.005
        assert first == second  # wall_time_ms included: replayed, not re-measured

    def test_timeout_is_recorded_not_raised(self):
        job = SandboxJob(program_text="while True:\n    pass", timeout_ms=1000)
        record = run_one(job)
        assert record.status is Status.TIMEOUT
        assert record.value is None

    def test_signal_starved_loop_is_killed_at_the_process_level(self):
        # This loop shape never reaches the interpreter's signal check, so
        # the worker's own timer cannot fire; the orchestrator's process kill
        # must step in and still record a timeout.
        starved = SandboxJob(
            program_text=(
                "while True:\n"
                "    try:\n"
                "        x = 1\n"
                "    except Exception:\n"
                "        pass\n"
            ),
            timeout_ms=800,
        )
        record = run_one(starved)
        assert record.status is Status.TIMEOUT

    def test_parallel_matches_serial(self):
        jobs = [
            SandboxJob(program_text=f"final_result = {i % 2}") for i in range(100)
        ]
        parallel = run_jobs(jobs, ExecutionCache(None), parallelism=8)
        serial = run_jobs(jobs, ExecutionCache(None), parallelism=1)
        assert set(parallel) == set(serial)
        for key in parallel:
            assert parallel[key].status == serial[key].status
            assert parallel[key].value == serial[key].value

    def test_bounded_parallelism(self):
        # 8 jobs sleeping 0.4s across 4 single-job workers need two waves.
        jobs = [
            SandboxJob(program_text=f"import time\ntime.sleep(0.4)\nfinal_result = {i}")
            for i in range(8)
        ]
        started = time.perf_counter()
        run_jobs(jobs, ExecutionCache(None), parallelism=4, jobs_per_worker=1)
        elapsed = time.perf_counter() - started
        assert elapsed >= 0.8

    def test_fork_bomb_affects_only_its_own_record(self):
        bomb = SandboxJob(
            program_text=(
                "import os, time\n"
                "for _ in range(10):\n"
                "    if os.fork() == 0:\n"
                "        time.sleep(30)\n"
                "        os._exit(0)\n"
                "time.sleep(30)\n"
                "final_result = 1\n"
            ),
            timeout_ms=1000,
        )
        goods = [SandboxJob(program_text=f"final_result = {i % 2}") for i in range(6)]
        records = run_jobs(
            [bomb] + goods, ExecutionCache(None), parallelism=4, jobs_per_worker=1
        )
        assert records[bomb.job_key].status in (Status.TIMEOUT, Status.RUNTIME_ERROR)
        for job in goods:
            assert records[job.job_key].status is Status.OK

    def test_worker_death_mid_chunk_only_hurts_the_culprit(self):
        # All four jobs share one worker; the crash kills it after the first
        # answer, and the jobs behind the crash are re-run in isolation.
        first = SandboxJob(program_text="final_result = 0.125")
        crasher = SandboxJob(program_text="import os\nos._exit(9)")
        behind = [
            SandboxJob(program_text=f"final_result = 0.{i}5") for i in (3, 7)
        ]
        records = run_jobs(
            [first, crasher] + behind,
            ExecutionCache(None),
            parallelism=1,
            jobs_per_worker=4,
        )
        assert records[first.job_key].value == 0.125
        assert records[crasher.job_key].status is Status.RUNTIME_ERROR
        for job in behind:
            assert records[job.job_key].status is Status.OK

    def test_crashing_worker_is_a_runtime_error(self):
        job = SandboxJob(program_text="import os\nos._exit(7)", timeout_ms=5000)
        record = run_one(job)
        assert record.status is Status.RUNTIME_ERROR

    def test_idempotent_reruns(self, tmp_path):
        cache = ExecutionCache(tmp_path / "cache")
        jobs = [SandboxJob(program_text=f"final_result = {i % 2}") for i in range(6)]
        first = run_jobs(jobs, cache)
        second = run_jobs(jobs, cache)
        assert first == second

    def test_runner_unavailable(self):
        with pytest.raises(RunnerUnavailable):
            run_jobs(
                [SandboxJob(program_text="final_result = 1")],
                ExecutionCache(None),
                runner=RunnerConfig(("/does/not/exist",)),
            )

    def test_corrupt_cache_raises(self, tmp_path):
        cache = ExecutionCache(tmp_path / "cache")
        job = SandboxJob(program_text="final_result = 1")
        run_jobs([job], cache)
        cache_file = cache._path(job.job_key)
        cache_file.write_text("{not json", encoding="utf-8")
        with pytest.raises(CacheCorrupt):
            run_jobs([job], cache)


class TestParseAssertions:
    def test_structured_and_exotic_literals_round_trip(self):
        plain = make_vertex("t/0", Perspective.TESTCASE, "assert f([3, 1, 2]) == 2", 0)
        exotic = make_vertex(
            "t/0", Perspective.TESTCASE, "assert f((1, 2), {3}) == (4,)", 1
        )
        bad = make_vertex("t/0", Perspective.TESTCASE, "assert f(g(1)) == 2", 2)
        parsed = parse_assertions(
            [plain, exotic, bad], "f", ExecutionCache(None)
        )
        assert parsed[plain.vertex_id] == (([3, 1, 2],), 2)
        assert parsed[exotic.vertex_id] == (((1, 2), {3}), (4,))
        assert parsed[bad.vertex_id] is None

    def test_parse_results_are_cached(self, tmp_path):
        cache = ExecutionCache(tmp_path / "cache")
        test = make_vertex("t/0", Perspective.TESTCASE, "assert f(1) == 2", 0)
        parse_assertions([test], "f", cache)
        started = time.perf_counter()
        again = parse_assertions([test], "f", cache)
        assert time.perf_counter() - started < 0.005
        assert again[test.vertex_id] == ((1,), 2)

    def test_parse_soundness_reproduces_edge_values(self):
        # Rebuilding the assertion from its parsed (args, expected) must give
        # the same verdict as executing the original text.
        tests = [
            make_vertex("t/0", Perspective.TESTCASE, "assert f([2, 1]) == [3, 2]", 0),
            make_vertex(
                "t/0", Perspective.TESTCASE, "assert f((5,)) == (6,), 'message'", 1
            ),
        ]
        solution = make_vertex(
            "t/0",
            Perspective.SOLUTION,
            "def f(xs):\n    return type(xs)(x + 1 for x in xs)",
            0,
        )
        parsed = parse_assertions(tests, "f", ExecutionCache(None))
        for test in tests:
            args, expected = parsed[test.vertex_id]
            rebuilt_text = (
                f"assert f({', '.join(repr(a) for a in args)}) == {expected!r}"
            )
            rebuilt = make_vertex("t/0", Perspective.TESTCASE, rebuilt_text, 9)
            original_record = run_one(
                compose_program(PairKind.SOLUTION_TEST, solution, test)
            )
            rebuilt_record = run_one(
                compose_program(PairKind.SOLUTION_TEST, solution, rebuilt)
            )
            assert original_record.value == rebuilt_record.value == 1.0


class TestCollectPairRecords:
    def test_full_problem_pipeline(self):
        problem = Problem(
            task_id="toy/0",
            prompt='def f(x):\n    """Increment."""\n',
            entry_point="f",
        )
        failing_test = make_vertex(
            "toy/0", Perspective.TESTCASE, "assert f(5) == 99", 1
        )
        candidates = [INCREMENT, IDENTITY, SPEC, PASSING_TEST, failing_test]
        records = collect_pair_records(problem, candidates, GraphConfig())

        assert records[pair_key(INCREMENT, PASSING_TEST)].value == 1.0
        assert records[pair_key(IDENTITY, PASSING_TEST)].value == 0.0
        assert records[pair_key(INCREMENT, failing_test)].value == 0.0
        # Spec agrees with the passing test, not the wrong one.
        assert records[pair_key(SPEC, PASSING_TEST)].value == 1.0
        assert records[pair_key(SPEC, failing_test)].value == 0.0
        # Input pool {1, 5}: increment satisfies the spec on both.
        assert records[pair_key(INCREMENT, SPEC)].value == 1.0
        assert records[pair_key(IDENTITY, SPEC)].value == 0.0
        # Only solution-vs-specification weights may be fractional.
        for (left, right), record in records.items():
            fractional_pair = "/solution/" in left and "/specification/" in right
            if record.value is not None and not fractional_pair:
                assert record.value in (0.0, 1.0)

    def test_spec_edges_survive_testcase_ablation(self):
        problem = Problem(
            task_id="toy/0",
            prompt='def f(x):\n    """Increment."""\n',
            entry_point="f",
        )
        config = GraphConfig(include_testcases=False)
        records = collect_pair_records(
            problem, [INCREMENT, SPEC, PASSING_TEST], config
        )
        assert records[pair_key(INCREMENT, SPEC)].value == 1.0
        assert pair_key(INCREMENT, PASSING_TEST) not in records
