"""Explanation quality metrics: ROUGE-L, faithfulness and ranking scores."""

from __future__ import annotations

import math
from typing import Callable, Sequence

SUPPORTED_TAGS = ("current-state", "kkt")


def _lcs(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> float:
    """Longest common token subsequence divided by the reference length.

    Tokens are lowercase whitespace-separated words.
    """
    ref = reference.lower().split()
    if not ref:
        raise ValueError("reference text is empty")
    return _lcs(candidate.lower().split(), ref) / len(ref)


def faithfulness(statements: Sequence, supported: Callable = None) -> float:
    """Fraction of statements supported by the instantaneous context.

    By default a statement counts as supported when its ``tag`` is
    ``current-state`` or ``kkt``.
    """
    if not statements:
        raise ValueError("no statements to score")
    if supported is None:
        supported = lambda s: getattr(s, "tag", None) in SUPPORTED_TAGS  # noqa: E731
    return sum(1 for s in statements if supported(s)) / len(statements)


def ranking_metrics(predicted: Sequence[str], truth: Sequence[str], k: int) -> dict:
    """Precision, recall and F1 at ``k``, reciprocal rank, and binary-relevance NDCG at ``k``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    relevant = set(truth)
    top = list(predicted)[:k]
    hits = sum(1 for p in top if p in relevant)
    prec = hits / k
    rec = hits / len(relevant) if relevant else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
    rr = 0.0
    for i, p in enumerate(predicted, start=1):
        if p in relevant:
            rr = 1.0 / i
            break
    dcg = sum(1.0 / math.log2(i + 2) for i, p in enumerate(top) if p in relevant)
    ideal = sum(1.0 / math.log2(i + 2) for i in range(min(k, len(relevant))))
    ndcg = dcg / ideal if ideal > 0 else 0.0
    return {"precision": prec, "recall": rec, "f1": f1, "mrr": rr, "ndcg": ndcg}
