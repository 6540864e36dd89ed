"""Sandbox worker for verification programs.

Speaks line-delimited JSON on stdin/stdout: each request names a mode
(Execute or ParseAssertion), a program text and a timeout, and gets exactly
one response with a status, an optional value and a bounded stderr tail.
Run as ``python -m mpsc_runner`` or via the ``mpsc-runner`` script.

Attribute access is lazy so that process startup (which gates every
verification job) pays only for what it uses.
"""

__version__ = "0.1.0"

__all__ = [
    "AssertionParseError",
    "parse_assertion",
    "decode_literal",
    "encode_literal",
    "handle_request",
    "run_execute",
    "run_parse",
    "serve",
]

_HOMES = {
    "AssertionParseError": "parsing",
    "parse_assertion": "parsing",
    "decode_literal": "wire",
    "encode_literal": "wire",
    "handle_request": "worker",
    "run_execute": "worker",
    "run_parse": "worker",
    "serve": "worker",
}


def __getattr__(name: str):
    home = _HOMES.get(name)
    if home is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    from importlib import import_module

    return getattr(import_module(f".{home}", __name__), name)
