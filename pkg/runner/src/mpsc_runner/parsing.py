"""Turn assertion-style test cases into structured (arguments, expected) pairs.

Only the exact shape ``assert <entry_point>(<literal args>) == <literal>`` is
accepted. Anything else (other comparators, computed arguments, keyword
arguments, multiple statements) is rejected so that downstream consumers can
trust the extracted values byte for byte. Tests that fail to parse still
participate in direct execution; they just cannot be cross-checked against
specifications.
"""

from __future__ import annotations

import ast

__all__ = ["AssertionParseError", "parse_assertion"]


class AssertionParseError(ValueError):
    pass


def _literal(node: ast.expr):
    try:
        return ast.literal_eval(node)
    except (ValueError, TypeError, SyntaxError, MemoryError) as exc:
        raise AssertionParseError(f"non-literal expression: {ast.dump(node)[:120]}") from exc


def parse_assertion(text: str, entry_point: str) -> tuple[list, object]:
    """Extract (args, expected) from one equality assertion on the entry point."""
    try:
        tree = ast.parse(text)
    except SyntaxError as exc:
        raise AssertionParseError(f"not parseable as Python: {exc}") from exc

    if len(tree.body) != 1 or not isinstance(tree.body[0], ast.Assert):
        raise AssertionParseError("expected exactly one assert statement")
    test = tree.body[0].test
    if not isinstance(test, ast.Compare) or len(test.ops) != 1:
        raise AssertionParseError("expected a single comparison")
    if not isinstance(test.ops[0], ast.Eq):
        raise AssertionParseError("only == comparisons are supported")

    call = test.left
    if not isinstance(call, ast.Call):
        raise AssertionParseError("left side must be a call")
    if not isinstance(call.func, ast.Name) or call.func.id != entry_point:
        raise AssertionParseError(
            f"left side must call {entry_point!r} directly"
        )
    if call.keywords:
        raise AssertionParseError("keyword arguments are not supported")

    args = [_literal(a) for a in call.args]
    expected = _literal(test.comparators[0])
    return args, expected
