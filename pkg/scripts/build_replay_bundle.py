#!/usr/bin/env python3
"""Regenerate the shipped replay bundle.

Runs the real sandbox once over three small problems, freezes the execution
records, and snapshots the canonical score files the math pipeline must
reproduce from those records alone. Commit the output; the replay test then
guards the whole ranking path on machines with no interpreter sandbox at
all.

Usage: python scripts/build_replay_bundle.py
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
BUNDLE = REPO / "src" / "mpsc" / "fixtures" / "replay"

sys.path.insert(0, str(REPO / "src"))

from mpsc.consistency import MeasureKind  # noqa: E402
from mpsc.execution import ExecutionCache, collect_pair_records  # noqa: E402
from mpsc.ingest import (  # noqa: E402
    canonical_json,
    load_dataset,
    persist_records,
    scores_payload,
)
from mpsc.pipeline import RankOptions, rank_problem  # noqa: E402

PROBLEMS = [
    {
        "task_id": "replay/0",
        "entry_point": "median",
        "prompt": (
            "def median(l):\n"
            '    """Return the median of the numbers in l.\n'
            "\n"
            "    >>> median([3, 1, 2])\n"
            "    2\n"
            "\n"
            '    """\n'
        ),
        "golden_tests": [
            "assert median([3, 1, 2]) == 2",
            "assert median([5, 1, 2, 4]) == 3.0",
            "assert median([7]) == 7",
        ],
    },
    {
        "task_id": "replay/1",
        "entry_point": "is_palindrome",
        "prompt": (
            "def is_palindrome(text):\n"
            '    """Check whether text reads the same forwards and backwards.\n'
            "\n"
            "    >>> is_palindrome('level')\n"
            "    True\n"
            "\n"
            '    """\n'
        ),
        "golden_tests": [
            "assert is_palindrome('level') == True",
            "assert is_palindrome('python') == False",
            "assert is_palindrome('') == True",
        ],
    },
    {
        "task_id": "replay/2",
        "entry_point": "sum_digits",
        "prompt": (
            "def sum_digits(n):\n"
            '    """Sum the decimal digits of the non-negative integer n.\n'
            "\n"
            "    >>> sum_digits(123)\n"
            "    6\n"
            "\n"
            '    """\n'
        ),
        "golden_tests": [
            "assert sum_digits(123) == 6",
            "assert sum_digits(0) == 0",
            "assert sum_digits(999) == 27",
        ],
    },
]

CANDIDATES = {
    "replay/0": {
        "solution": [
            "def median(l):\n    s = sorted(l)\n    n = len(s)\n"
            "    if n % 2 == 1:\n        return s[n // 2]\n"
            "    return (s[n // 2 - 1] + s[n // 2]) / 2\n",
            "def median(l):\n    return sorted(l)[len(l) // 2]\n",  # even-length bug
            "def median(l):\n    return sum(l) / len(l)\n",  # mean, not median
        ],
        "specification": [
            "def preconditions(input):\n"
            "    assert isinstance(input, list)\n"
            "    assert len(input) > 0\n"
            "\n"
            "def postconditions(input, output):\n"
            "    s = sorted(input)\n"
            "    n = len(s)\n"
            "    if n % 2 == 1:\n"
            "        assert output == s[n // 2]\n"
            "    else:\n"
            "        assert output == (s[n // 2 - 1] + s[n // 2]) / 2\n",
            "def preconditions(input):\n"
            "    assert isinstance(input, list)\n"
            "\n"
            "def postconditions(input, output):\n"
            "    assert output in input\n",  # wrong for even lengths
        ],
        "testcase": [
            "assert median([3, 1, 2]) == 2",
            "assert median([1, 2, 3, 4]) == 2.5",
            "assert median([9, 9, 9]) == 9",
            "assert median([1, 3]) == 1",  # wrong
        ],
    },
    "replay/1": {
        "solution": [
            "def is_palindrome(text):\n    return text == text[::-1]\n",
            "def is_palindrome(text):\n"
            "    for i in range(len(text) // 2):\n"
            "        if text[i] != text[len(text) - 1 - i]:\n"
            "            return False\n"
            "    return True\n",
            "def is_palindrome(text):\n    return True\n",  # constant
        ],
        "specification": [
            "def preconditions(input):\n"
            "    assert isinstance(input, str)\n"
            "\n"
            "def postconditions(input, output):\n"
            "    assert isinstance(output, bool)\n"
            "    assert output == (input == input[::-1])\n",
        ],
        "testcase": [
            "assert is_palindrome('abba') == True",
            "assert is_palindrome('abc') == False",
            "assert is_palindrome('x') == True",
            "assert is_palindrome('ab') == True",  # wrong
        ],
    },
    "replay/2": {
        "solution": [
            "def sum_digits(n):\n    return sum(int(d) for d in str(n))\n",
            "def sum_digits(n):\n"
            "    total = 0\n"
            "    while n > 0:\n"
            "        total += n % 10\n"
            "        n //= 10\n"
            "    return total\n",
            "def sum_digits(n):\n    return n % 9\n",  # digital-root-ish, wrong
        ],
        "specification": [
            "def preconditions(input):\n"
            "    assert isinstance(input, int)\n"
            "    assert input >= 0\n"
            "\n"
            "def postconditions(input, output):\n"
            "    assert output == sum(int(d) for d in str(input))\n",
        ],
        "testcase": [
            "assert sum_digits(123) == 6",
            "assert sum_digits(10) == 1",
            "assert sum_digits(5) == 5",
            "assert sum_digits(11) == 11",  # wrong
        ],
    },
}

MEASURES = (MeasureKind.UNIFORM, MeasureKind.WEIGHTED_CARDINALITY)


def main() -> None:
    BUNDLE.mkdir(parents=True, exist_ok=True)
    problems_path = BUNDLE / "problems.jsonl"
    candidates_path = BUNDLE / "candidates.jsonl"
    with problems_path.open("w", encoding="utf-8") as handle:
        for row in PROBLEMS:
            handle.write(json.dumps(row, ensure_ascii=False) + "\n")
    with candidates_path.open("w", encoding="utf-8") as handle:
        for task_id, groups in CANDIDATES.items():
            for perspective, texts in groups.items():
                for text in texts:
                    handle.write(
                        json.dumps(
                            {
                                "task_id": task_id,
                                "perspective": perspective,
                                "source_text": text,
                            },
                            ensure_ascii=False,
                        )
                        + "\n"
                    )

    dataset = load_dataset(problems_path, candidates_path, strict=True)
    cache = ExecutionCache(None)
    all_records = {}
    for task_id in sorted(dataset):
        problem, candidates = dataset[task_id]
        all_records.update(collect_pair_records(problem, candidates, cache=cache))
    persist_records(all_records, BUNDLE / "records.jsonl")

    for measure in MEASURES:
        out_dir = BUNDLE / "expected" / measure.value
        out_dir.mkdir(parents=True, exist_ok=True)
        for task_id in sorted(dataset):
            problem, candidates = dataset[task_id]
            ranked = rank_problem(
                problem,
                candidates,
                RankOptions(measure=measure),
                records=all_records,
            )
            payload = scores_payload(
                task_id, ranked.scores, ranked.graph, measure.value, ranked.edge_mass
            )
            name = task_id.replace("/", "_")
            (out_dir / f"{name}.json").write_text(
                canonical_json(payload), encoding="utf-8"
            )
            print(f"{measure.value} {task_id}: top {ranked.selected[:1]}")

    print(f"bundle written under {BUNDLE}")


if __name__ == "__main__":
    main()
