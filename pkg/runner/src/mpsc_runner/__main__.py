"""Process entry point: lock down the environment, then serve the protocol.

Protocol I/O is moved to private duplicated descriptors before any candidate
code runs, and fds 0/1 are pointed at /dev/null, so candidate reads and
writes (including os.write to fd 1) cannot touch the request/response
stream. The process chdirs into a scratch directory and caps its address
space and file sizes; the orchestrator is expected to kill the whole process
group if the runner itself is wedged.

Startup latency gates every verification job, so flags are parsed by hand
and everything heavyweight is imported lazily.
"""

from __future__ import annotations

import os
import sys

from .worker import serve


def _flag(argv: list[str], name: str, default: int) -> int:
    if name in argv:
        return int(argv[argv.index(name) + 1])
    return default


def _string_flag(argv: list[str], name: str) -> str | None:
    if name in argv:
        return argv[argv.index(name) + 1]
    return None


def _apply_limits(memory_mb: int, fsize_mb: int) -> None:
    import resource

    try:
        mem = memory_mb * 1024 * 1024
        resource.setrlimit(resource.RLIMIT_AS, (mem, mem))
    except (ValueError, OSError):
        pass  # platform refuses; wall-clock and process kill still apply
    try:
        fsize = fsize_mb * 1024 * 1024
        resource.setrlimit(resource.RLIMIT_FSIZE, (fsize, fsize))
    except (ValueError, OSError):
        pass


def _make_scratch(requested: str | None) -> tuple[str, bool]:
    if requested is not None:
        os.makedirs(requested, exist_ok=True)
        return requested, False
    base = os.environ.get("TMPDIR", "/tmp")
    for attempt in range(1000):
        path = os.path.join(base, f"mpsc-runner-{os.getpid()}-{attempt}")
        try:
            os.mkdir(path, 0o700)
            return path, True
        except FileExistsError:
            continue
    return base, False


def _remove_tree(path: str) -> None:
    for entry in os.scandir(path):
        if entry.is_dir(follow_symlinks=False):
            _remove_tree(entry.path)
        else:
            try:
                os.unlink(entry.path)
            except OSError:
                pass
    try:
        os.rmdir(path)
    except OSError:
        pass


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    memory_mb = _flag(argv, "--memory-mb", 512)
    fsize_mb = _flag(argv, "--fsize-mb", 8)
    requested_scratch = _string_flag(argv, "--scratch-dir")

    proto_out = os.fdopen(os.dup(1), "w", buffering=1, encoding="utf-8")
    proto_in = os.fdopen(os.dup(0), "r", encoding="utf-8")
    devnull = os.open(os.devnull, os.O_RDWR)
    os.dup2(devnull, 0)
    os.dup2(devnull, 1)
    sys.stdin = os.fdopen(os.dup(devnull), "r", encoding="utf-8")

    scratch, owned = _make_scratch(requested_scratch)
    os.chdir(scratch)
    _apply_limits(memory_mb, fsize_mb)

    try:
        serve(proto_in, proto_out)
    finally:
        if owned:
            os.chdir("/")
            _remove_tree(scratch)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
