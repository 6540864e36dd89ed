"""Per-vertex priors: agreement of a candidate within its own perspective.

Seven measures are supported. Three are structural (built on equivalence
classes of vertices whose binarized neighbor rows coincide), one is a
minimum-Bayes-risk style similarity sum, and three inject external signal
(nothing, generation log-probability, golden labels). Each perspective's
block of the resulting vector is normalized to sum to 1; blocks with no
support stay all-zero.
"""

from __future__ import annotations

import enum
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .core import ConsistencyGraph, Perspective

logger = logging.getLogger(__name__)

__all__ = [
    "MeasureKind",
    "EquivalenceClasses",
    "structural_equivalence",
    "intra_prior",
    "raw_measure",
    "code_bleu",
    "tokenize_code",
    "MissingLogprob",
]


class MissingLogprob(ValueError):
    pass


class MeasureKind(enum.Enum):
    BAYES_RISK = "bayes"
    CARDINALITY = "cardinality"
    WEIGHT = "weight"
    WEIGHTED_CARDINALITY = "weighted-cardinality"
    UNIFORM = "uniform"
    PROBABILITY = "probability"
    LABEL = "label"

    @classmethod
    def from_name(cls, name: str) -> "MeasureKind":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(f"unknown measure {name!r}") from None


@dataclass(frozen=True)
class EquivalenceClasses:
    """Partition of each perspective by identical binarized neighbor rows.

    Two candidates land in the same class exactly when every third-party
    vertex agrees with both or with neither at the binarization threshold,
    i.e. they behave identically under all cross-perspective checks.
    """

    threshold: float
    by_perspective: dict[Perspective, tuple[tuple[int, ...], ...]]
    class_of: dict[int, int]
    sizes: dict[int, int]

    def class_size(self, vertex: int) -> int:
        return self.sizes[self.class_of[vertex]]


def structural_equivalence(
    graph: ConsistencyGraph, threshold: float
) -> EquivalenceClasses:
    """Group same-perspective vertices with identical binarized adjacency rows."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0, 1]")
    binarized = graph.adjacency >= threshold
    by_perspective: dict[Perspective, tuple[tuple[int, ...], ...]] = {}
    class_of: dict[int, int] = {}
    sizes: dict[int, int] = {}
    next_id = 0
    for p in graph.perspectives_present():
        groups: dict[bytes, list[int]] = {}
        for i in graph.indices_of(p):
            groups.setdefault(binarized[i].tobytes(), []).append(int(i))
        classes = []
        for members in groups.values():
            for m in members:
                class_of[m] = next_id
            sizes[next_id] = len(members)
            classes.append(tuple(members))
            next_id += 1
        by_perspective[p] = tuple(classes)
    return EquivalenceClasses(
        threshold=threshold,
        by_perspective=by_perspective,
        class_of=class_of,
        sizes=sizes,
    )


# ---------------------------------------------------------------------------
# BLEU over code tokens

# Identifiers and numbers stay whole; every other non-space character is its
# own token.
_TOKEN_RE = re.compile(r"\d+\.\d+|\w+|[^\w\s]")
_MAX_ORDER = 4


def tokenize_code(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


def _ngram_counts(tokens: list[str], order: int) -> Counter:
    return Counter(
        tuple(tokens[i : i + order]) for i in range(len(tokens) - order + 1)
    )


def code_bleu(reference: str, hypothesis: str) -> float:
    """Sentence-level BLEU-4 of hypothesis against reference over code tokens.

    Unigram precision is unsmoothed, so fully disjoint token sets score 0;
    higher orders use add-one smoothing to keep short snippets comparable.
    Empty against empty is 1, empty against non-empty is 0.
    """
    ref = tokenize_code(reference)
    hyp = tokenize_code(hypothesis)
    if not ref and not hyp:
        return 1.0
    if not ref or not hyp:
        return 0.0

    log_sum = 0.0
    for order in range(1, _MAX_ORDER + 1):
        possible = max(len(hyp) - order + 1, 0)
        matches = sum((_ngram_counts(hyp, order) & _ngram_counts(ref, order)).values())
        if order == 1:
            if matches == 0:
                return 0.0
            precision = matches / possible
        else:
            precision = (matches + 1.0) / (possible + 1.0)
        log_sum += math.log(precision)
    geo_mean = math.exp(log_sum / _MAX_ORDER)

    if len(hyp) >= len(ref):
        brevity = 1.0
    else:
        brevity = math.exp(1.0 - len(ref) / len(hyp))
    return brevity * geo_mean


def _symmetric_bleu(a: str, b: str, memo: dict) -> float:
    key = (a, b) if a <= b else (b, a)
    cached = memo.get(key)
    if cached is None:
        cached = 0.5 * (code_bleu(a, b) + code_bleu(b, a))
        memo[key] = cached
    return cached


# ---------------------------------------------------------------------------
# Measures

def _neighbor_counts(graph: ConsistencyGraph, threshold: float) -> dict:
    """Per perspective t, the vector of |{j in t : W_ij >= threshold}| by vertex."""
    binarized = graph.adjacency >= threshold
    return {
        p: binarized[:, graph.indices_of(p)].sum(axis=1)
        for p in graph.perspectives_present()
    }


def raw_measure(
    graph: ConsistencyGraph,
    kind: MeasureKind,
    classes: EquivalenceClasses | None = None,
    threshold: float = 0.99,
) -> np.ndarray:
    """Pre-normalization measure values, one per vertex.

    ``classes`` must have been computed at the same threshold when given;
    it is derived on the fly otherwise.
    """
    n = len(graph)
    values = np.zeros(n)
    if n == 0:
        return values

    if kind in (
        MeasureKind.CARDINALITY,
        MeasureKind.WEIGHT,
        MeasureKind.WEIGHTED_CARDINALITY,
    ):
        if classes is None:
            classes = structural_equivalence(graph, threshold)
        elif classes.threshold != threshold:
            raise ValueError(
                f"classes were computed at threshold {classes.threshold}, "
                f"measure requested at {threshold}"
            )

    if kind is MeasureKind.UNIFORM:
        values[:] = 1.0

    elif kind is MeasureKind.BAYES_RISK:
        memo: dict = {}
        for p in graph.perspectives_present():
            idx = graph.indices_of(p)
            texts = [graph.vertices[i].source_text for i in idx]
            for row, i in enumerate(idx):
                values[i] = sum(
                    _symmetric_bleu(texts[row], other, memo) for other in texts
                )

    elif kind is MeasureKind.CARDINALITY:
        for i in range(n):
            values[i] = classes.class_size(i)

    elif kind in (MeasureKind.WEIGHT, MeasureKind.WEIGHTED_CARDINALITY):
        counts = _neighbor_counts(graph, threshold)
        for i, v in enumerate(graph.vertices):
            product = 1.0
            for p, per_vertex in counts.items():
                if p is not v.perspective:
                    product *= float(per_vertex[i])
            values[i] = product
        if kind is MeasureKind.WEIGHTED_CARDINALITY:
            for i in range(n):
                values[i] *= classes.class_size(i)

    elif kind is MeasureKind.PROBABILITY:
        for i, v in enumerate(graph.vertices):
            if v.logprob is None:
                raise MissingLogprob(
                    f"vertex {v.vertex_id!r} has no logprob; the probability "
                    "measure needs generation log-probabilities on every vertex"
                )
            values[i] = v.logprob

    elif kind is MeasureKind.LABEL:
        for i, v in enumerate(graph.vertices):
            values[i] = 1.0 if v.is_label else 0.0

    else:  # pragma: no cover - enum is closed
        raise ValueError(f"unhandled measure {kind}")

    return values


def intra_prior(
    graph: ConsistencyGraph,
    kind: MeasureKind,
    classes: EquivalenceClasses | None = None,
    threshold: float = 0.99,
    probability_literal: bool = False,
) -> np.ndarray:
    """Normalized prior vector y for a graph under one measure.

    Each perspective's block sums to 1; a block whose raw values sum to 0
    stays all-zero (no support, no supervision). The probability measure
    defaults to a softmax over each block's logprobs; ``probability_literal``
    switches to direct normalization of the raw log-probabilities, which can
    invert rankings when they are negative, and is kept for fidelity with
    the literal definition.
    """
    y = np.zeros(len(graph))
    if len(graph) == 0:
        return y

    if kind is MeasureKind.PROBABILITY and not probability_literal:
        raw = raw_measure(graph, kind, classes, threshold)  # validates logprobs
        for p in graph.perspectives_present():
            idx = graph.indices_of(p)
            block = raw[idx]
            shifted = np.exp(block - block.max())
            y[idx] = shifted / shifted.sum()
        return y

    raw = raw_measure(graph, kind, classes, threshold)
    if kind is MeasureKind.LABEL and not raw.any():
        logger.warning(
            "%s: label measure requested but the graph has no labeled vertices; "
            "prior is all-zero (consider --inject-golden or --measure uniform)",
            graph.task_id,
        )
    for p in graph.perspectives_present():
        idx = graph.indices_of(p)
        total = float(raw[idx].sum())
        if abs(total) > 1e-12:
            y[idx] = raw[idx] / total
    return y
