"""Ranking metrics, classification metrics, and pseudo-label error counts."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

__all__ = [
    "ErrorDecomposition",
    "hit_at_k",
    "mrr",
    "precision_recall_f1",
    "decompose_errors",
]


def hit_at_k(ranks: Sequence[int], k: int) -> float:
    """Percentage of ranks within the top k."""
    if len(ranks) == 0:
        raise ValueError("hit_at_k requires at least one rank")
    return 100.0 * sum(1 for r in ranks if r <= k) / len(ranks)


def mrr(ranks: Sequence[int]) -> float:
    """Mean reciprocal rank."""
    if len(ranks) == 0:
        raise ValueError("mrr requires at least one rank")
    return sum(1.0 / r for r in ranks) / len(ranks)


def precision_recall_f1(
    predicted: Iterable[tuple[int, int]], test: Iterable[tuple[int, int]]
) -> tuple[float, float, float]:
    """Classification metrics of a predicted pair set against test pairs.

    Precision is 0 for an empty prediction set; F1 is 0 when both precision
    and recall are 0. An empty test set is an error.
    """
    pred = set(predicted)
    ref = set(test)
    if not ref:
        raise ValueError("test alignment set is empty")
    hits = len(pred & ref)
    p = hits / len(pred) if pred else 0.0
    r = hits / len(ref)
    f1 = 2 * p * r / (p + r) if (p + r) > 0 else 0.0
    return p, r, f1


@dataclass(frozen=True)
class ErrorDecomposition:
    """Partition of a selected pair set into correct pairs, conflicted
    misalignments, and one-to-one misalignments."""

    correct: int
    conflicted: int
    one_to_one: int

    @property
    def total(self) -> int:
        return self.correct + self.conflicted + self.one_to_one


def decompose_errors(
    selected: Iterable[tuple[int, int]], truth: Iterable[tuple[int, int]]
) -> ErrorDecomposition:
    """Classify each selected pair against a ground-truth bijection.

    A selected pair is correct iff it appears in the truth (even when it
    participates in a conflict). An incorrect pair sharing its left or right
    entity with another selected pair is a conflicted misalignment;
    otherwise it is a one-to-one misalignment.
    """
    sel = set(selected)
    ref = set(truth)
    lefts = {l for l, _ in ref}
    rights = {r for _, r in ref}
    if len(lefts) != len(ref) or len(rights) != len(ref):
        raise ValueError("truth alignments must form a bijection")
    left_count = Counter(l for l, _ in sel)
    right_count = Counter(r for _, r in sel)
    correct = conflicted = one_to_one = 0
    for l, r in sel:
        if (l, r) in ref:
            correct += 1
        elif left_count[l] > 1 or right_count[r] > 1:
            conflicted += 1
        else:
            one_to_one += 1
    return ErrorDecomposition(correct=correct, conflicted=conflicted, one_to_one=one_to_one)
