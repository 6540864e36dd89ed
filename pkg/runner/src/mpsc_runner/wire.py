"""Lossless JSON encoding for parsed Python literals.

Assertion arguments can be any Python literal, including tuples, sets and
bytes, which JSON cannot carry natively (and silently turning a tuple into a
list would change call semantics). Values that JSON represents exactly pass
through unchanged; anything else travels as {"__pyrepr__": "<repr>"} and is
rebuilt with ast.literal_eval on the other side. repr round-trips through
literal_eval for every value the assertion parser can produce.
"""

from __future__ import annotations

import math

REPR_KEY = "__pyrepr__"


def _wrap(value) -> dict:
    return {REPR_KEY: repr(value)}


def encode_literal(value):
    """Encode one parsed literal for the line protocol."""
    if value is None or isinstance(value, (bool, str, int)):
        return value
    if isinstance(value, float):
        if math.isinf(value):
            # repr(inf) is not itself a literal; an overflowing one is.
            return {REPR_KEY: "1e999" if value > 0 else "-1e999"}
        if math.isnan(value):
            raise ValueError("nan is not expressible as a literal")
        return value
    if isinstance(value, list):
        return [encode_literal(v) for v in value]
    if isinstance(value, dict):
        if all(isinstance(k, str) for k in value) and REPR_KEY not in value:
            return {k: encode_literal(v) for k, v in value.items()}
        return _wrap(value)
    return _wrap(value)


def decode_literal(value):
    """Inverse of :func:`encode_literal`."""
    if isinstance(value, dict):
        if set(value) == {REPR_KEY}:
            import ast

            return ast.literal_eval(value[REPR_KEY])
        return {k: decode_literal(v) for k, v in value.items()}
    if isinstance(value, list):
        return [decode_literal(v) for v in value]
    return value
