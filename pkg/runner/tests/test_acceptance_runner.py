"""Acceptance gate for the sandbox worker: protocol conformance, isolation.

Run with ``pytest runner/tests/test_acceptance_runner.py -v -s`` for one
PASS line per criterion. Everything here drives the worker through its real
process boundary (stdin/stdout line protocol), never in-process.
"""

import json
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor

from runner_helpers import RUNNER_CMD, call_runner


def _report(name: str) -> None:
    print(f"[PASS] {name}")


def test_criterion_protocol_conformance():
    """Execute, timeout window, assertion parsing, 200 mixed requests."""
    responses, _ = call_runner(
        [{"mode": "Execute", "program_text": "final_result = 1",
          "timeout_ms": 5000}]
    )
    assert responses[0]["status"] == "Ok" and responses[0]["value"] == 1.0

    started = time.monotonic()
    responses, _ = call_runner(
        [{"mode": "Execute", "program_text": "while True:\n    pass",
          "timeout_ms": 1000}]
    )
    elapsed_ms = (time.monotonic() - started) * 1000
    assert responses[0]["status"] == "Timeout"
    assert responses[0]["wall_time_ms"] <= 1500
    assert elapsed_ms < 1500 + 300  # process startup rides on top

    responses, _ = call_runner(
        [
            {"mode": "ParseAssertion", "entry_point": "median",
             "program_text": "assert median([3,1,2]) == 2"},
            {"mode": "ParseAssertion", "entry_point": "median",
             "program_text": "assert median(sorted([2,1])) == 1.5"},
        ]
    )
    assert responses[0]["status"] == "Ok"
    assert responses[0]["value"] == {"args": [[3, 1, 2]], "expected": 2}
    assert responses[1]["status"] == "ParseError"

    mixed = []
    for i in range(200):
        variant = i % 5
        if variant == 0:
            mixed.append(
                {"mode": "Execute", "program_text": f"final_result = {i} / 200",
                 "timeout_ms": 5000}
            )
        elif variant == 1:
            mixed.append(
                {"mode": "Execute", "program_text": "raise RuntimeError('x')",
                 "timeout_ms": 5000}
            )
        elif variant == 2:
            mixed.append(
                {"mode": "ParseAssertion", "entry_point": "f",
                 "program_text": f"assert f({i}) == {i + 1}"}
            )
        elif variant == 3:
            mixed.append(
                {"mode": "ParseAssertion", "entry_point": "f",
                 "program_text": "assert f(g(1)) == 2"}
            )
        else:
            mixed.append({"mode": "Execute", "program_text": "def broken(:",
                          "timeout_ms": 5000})
    responses, proc = call_runner(mixed, timeout_s=120)
    assert len(responses) == 200
    assert proc.returncode == 0
    allowed = {"Ok", "Timeout", "RuntimeError", "ParseError"}
    for response in responses:
        assert response["status"] in allowed
        assert "value" in response and "stderr_tail" in response
    _report(
        "protocol conformance: Ok/1.0, timeout inside the window, parse "
        "extraction, 200 mixed requests -> 200 well-formed responses"
    )


def test_criterion_isolation_and_concurrency():
    """A fork bomb hurts only itself; 8-way concurrency equals serial."""
    bomb = {
        "mode": "Execute",
        "program_text": (
            "import os, time\n"
            "for _ in range(8):\n"
            "    if os.fork() == 0:\n"
            "        time.sleep(20)\n"
            "        os._exit(0)\n"
            "time.sleep(20)\n"
            "final_result = 1\n"
        ),
        "timeout_ms": 800,
    }
    plain = [
        {"mode": "Execute", "program_text": f"final_result = {i} / 16",
         "timeout_ms": 5000}
        for i in range(16)
    ]

    def one_process(request):
        payload = json.dumps(request) + "\n"
        proc = subprocess.Popen(
            RUNNER_CMD,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            start_new_session=True,
        )
        try:
            # The bomb's orphans hold the pipe open; reap the group early.
            out, _ = proc.communicate(payload, timeout=6)
        except subprocess.TimeoutExpired:
            import os
            import signal as signal_module

            os.killpg(proc.pid, signal_module.SIGKILL)
            out, _ = proc.communicate()
        lines = out.splitlines()
        return json.loads(lines[0]) if lines else None

    with ThreadPoolExecutor(max_workers=8) as pool:
        concurrent = list(pool.map(one_process, [bomb] + plain))
    bomb_response, concurrent_plain = concurrent[0], concurrent[1:]
    assert bomb_response is None or bomb_response["status"] in (
        "Timeout",
        "RuntimeError",
    )
    for response, request in zip(concurrent_plain, plain):
        assert response["status"] == "Ok"

    serial = [one_process(request) for request in plain]
    for a, b in zip(concurrent_plain, serial):
        assert a["status"] == b["status"]
        assert a["value"] == b["value"]
    _report(
        "isolation: fork bomb contained to its own record; concurrent x8 "
        "matches serial exactly"
    )
