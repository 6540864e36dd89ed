"""Execute one verification program per request and report its final_result.

Requests arrive as JSON objects, one per line on stdin; each yields exactly
one JSON response line on stdout, whatever happens inside the candidate
code. Two modes exist:

Execute        run ``program_text`` and report float(final_result) clamped
               to [0, 1]; uncaught exceptions become RuntimeError, blowing
               the wall-clock budget becomes Timeout.
ParseAssertion extract structured (args, expected) from a single equality
               assertion on the entry point.

The wall-clock timeout is enforced with an interval timer whose signal
raises a BaseException subclass, so candidate code catching Exception cannot
swallow it. The orchestrating process adds its own process-level kill as a
second line of defense.
"""

from __future__ import annotations

import io
import json
import signal
import sys

__all__ = ["handle_request", "run_execute", "run_parse", "serve"]

STDERR_TAIL_LIMIT = 2048


class _SandboxTimeout(BaseException):
    """Raised by the interval timer; deliberately not an Exception."""


def _on_alarm(signum, frame):
    raise _SandboxTimeout()


def _tail(text: str) -> str:
    return text[-STDERR_TAIL_LIMIT:]


def run_execute(program_text: str, timeout_ms: int) -> dict:
    """Run one composed program under a wall-clock budget."""
    try:
        code = compile(program_text, "<candidate>", "exec")
    except (SyntaxError, ValueError) as exc:
        return {
            "status": "ParseError",
            "value": None,
            "stderr_tail": _tail(f"{type(exc).__name__}: {exc}"),
        }

    namespace: dict = {"__name__": "__verification__"}
    previous = signal.signal(signal.SIGALRM, _on_alarm)
    # Repeating timer: a delivery can be lost while exception-handling
    # bytecode is running, so keep firing. Loop shapes that starve the eval
    # breaker entirely are the orchestrator's problem (process-level kill).
    deadline = max(timeout_ms, 1) / 1000.0
    signal.setitimer(signal.ITIMER_REAL, deadline, min(deadline, 0.05))
    # Candidate prints must not corrupt the line protocol (the process entry
    # point also redirects the real descriptors; this covers in-process use).
    saved_stdout, saved_stderr = sys.stdout, sys.stderr
    sys.stdout, sys.stderr = io.StringIO(), io.StringIO()
    try:
        exec(code, namespace)  # noqa: S102 - executing candidates is the job
    except _SandboxTimeout:
        return {"status": "Timeout", "value": None, "stderr_tail": ""}
    except BaseException:
        import traceback

        return {
            "status": "RuntimeError",
            "value": None,
            "stderr_tail": _tail(traceback.format_exc()),
        }
    finally:
        signal.setitimer(signal.ITIMER_REAL, 0.0)
        signal.signal(signal.SIGALRM, previous)
        sys.stdout, sys.stderr = saved_stdout, saved_stderr

    if "final_result" not in namespace:
        return {
            "status": "RuntimeError",
            "value": None,
            "stderr_tail": "program completed without setting final_result",
        }
    try:
        value = float(namespace["final_result"])
    except (TypeError, ValueError) as exc:
        return {
            "status": "RuntimeError",
            "value": None,
            "stderr_tail": _tail(f"final_result not numeric: {exc}"),
        }
    if value != value:  # NaN
        return {
            "status": "RuntimeError",
            "value": None,
            "stderr_tail": "final_result is NaN",
        }
    return {
        "status": "Ok",
        "value": min(max(value, 0.0), 1.0),
        "stderr_tail": "",
    }


def run_parse(program_text: str, entry_point: str) -> dict:
    # Imported on demand: Execute-only worker processes never pay for ast.
    from .parsing import AssertionParseError, parse_assertion
    from .wire import encode_literal

    try:
        args, expected = parse_assertion(program_text, entry_point)
    except AssertionParseError as exc:
        return {"status": "ParseError", "value": None, "stderr_tail": _tail(str(exc))}
    return {
        "status": "Ok",
        "value": {
            "args": [encode_literal(a) for a in args],
            "expected": encode_literal(expected),
        },
        "stderr_tail": "",
    }


def handle_request(request: dict) -> dict:
    """Dispatch one request; never raises. Responses carry their wall time."""
    import time

    started = time.monotonic()
    try:
        mode = request.get("mode", "Execute")
        program_text = request.get("program_text", "")
        if not isinstance(program_text, str):
            raise TypeError("program_text must be a string")
        if mode == "Execute":
            timeout_ms = int(request.get("timeout_ms", 10_000))
            response = run_execute(program_text, timeout_ms)
        elif mode == "ParseAssertion":
            entry_point = request.get("entry_point", "")
            if not entry_point:
                raise ValueError("ParseAssertion requests need an entry_point")
            response = run_parse(program_text, entry_point)
        else:
            raise ValueError(f"unknown mode {mode!r}")
    except Exception as exc:
        response = {
            "status": "RuntimeError",
            "value": None,
            "stderr_tail": _tail(f"bad request: {exc}"),
        }
    response["wall_time_ms"] = int((time.monotonic() - started) * 1000)
    return response


def serve(in_stream, out_stream) -> None:
    """Protocol loop: one response line per request line, exit on EOF."""
    for line in in_stream:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
            if not isinstance(request, dict):
                raise TypeError("request must be a JSON object")
        except (json.JSONDecodeError, TypeError, UnicodeDecodeError) as exc:
            response = {
                "status": "RuntimeError",
                "value": None,
                "stderr_tail": _tail(f"malformed request line: {exc}"),
            }
        else:
            response = handle_request(request)
        out_stream.write(json.dumps(response, separators=(",", ":")) + "\n")
        out_stream.flush()
