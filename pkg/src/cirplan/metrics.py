"""Ranking metrics and verifier-score ranking.

Recall@K and AP@K are exact rationals. AP@K divides by ``min(|gt|, K)``, the
convention of the CIRCO evaluation server, so a perfect ranking scores 1 even
when the ground truth is larger than the cutoff. NDCG uses binary gains and
the ``1/log2(rank + 1)`` discount.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Collection, Iterable, Mapping, Sequence

from .errors import DataError
from .model import AtomicRetrieval, CandidateSet

Ranking = Sequence[int]


def _gt_set(gt: CandidateSet | Collection[int]) -> CandidateSet:
    out = gt if isinstance(gt, CandidateSet) else CandidateSet(gt)
    if not out:
        raise DataError("ground truth is empty")
    return out


def _check(ranking: Ranking, k: int) -> None:
    if k < 1:
        raise DataError(f"cutoff must be >= 1, got {k}")
    if len(set(ranking)) != len(ranking):
        raise DataError("ranking contains duplicates")


def recall_at_k(ranking: Ranking, gt: CandidateSet | Collection[int], k: int) -> Fraction:
    gt = _gt_set(gt)
    _check(ranking, k)
    hits = sum(1 for i in ranking[:k] if i in gt)
    return Fraction(hits, len(gt))


def average_precision_at_k(ranking: Ranking, gt: CandidateSet | Collection[int], k: int) -> Fraction:
    gt = _gt_set(gt)
    _check(ranking, k)
    hits = 0
    total = Fraction(0)
    for pos, i in enumerate(ranking[:k], 1):
        if i in gt:
            hits += 1
            total += Fraction(hits, pos)
    return total / min(len(gt), k)


def map_at_k(batch: Iterable[tuple[Ranking, CandidateSet | Collection[int]]], k: int) -> Fraction:
    aps = [average_precision_at_k(r, g, k) for r, g in batch]
    if not aps:
        raise DataError("empty batch")
    return sum(aps, Fraction(0)) / len(aps)


def ndcg_at_k(ranking: Ranking, gt: CandidateSet | Collection[int], k: int) -> float:
    gt = _gt_set(gt)
    _check(ranking, k)
    dcg = sum(1.0 / math.log2(pos + 1) for pos, i in enumerate(ranking[:k], 1) if i in gt)
    idcg = sum(1.0 / math.log2(pos + 1) for pos in range(1, min(len(gt), k) + 1))
    return dcg / idcg


def relevance_score(z_yes: float, z_no: float) -> float:
    """``sigmoid(z_yes - z_no)``: P(yes) renormalized over {yes, no}."""
    if not (math.isfinite(z_yes) and math.isfinite(z_no)):
        raise DataError("logits must be finite")
    gap = z_yes - z_no
    if gap >= 0:
        return 1.0 / (1.0 + math.exp(-gap))
    e = math.exp(gap)
    return e / (1.0 + e)


def fallback_order(final: CandidateSet, retrievals: Iterable[AtomicRetrieval]) -> dict[int, int]:
    """Best (smallest) rank of each final item across the given retrievals."""
    out: dict[int, int] = {}
    for r in retrievals:
        for pos, i in enumerate(r.ranking, 1):
            if i in final and pos < out.get(i, 1 << 60):
                out[i] = pos
    return out


def rank_final_set(
    final: CandidateSet,
    scores: Mapping[int, float] | None,
    fallback: Mapping[int, int],
) -> list[int]:
    """Scored items by descending score, then unscored items by fallback rank.

    Ties break on fallback rank, then image id, so the output never depends
    on the iteration order of the inputs.
    """
    scores = scores or {}
    scored, unscored = [], []
    for i in final:
        if i in scores:
            scored.append((-scores[i], fallback.get(i, math.inf), i))
        elif i in fallback:
            unscored.append((fallback[i], i))
        else:
            raise DataError(f"image {i} has neither a score nor a fallback rank")
    scored.sort()
    unscored.sort()
    return [i for *_, i in scored] + [i for _, i in unscored]


def f1_components(result: CandidateSet, gt: CandidateSet) -> dict[str, Fraction]:
    tp = len(result & gt)
    fp = len(result) - tp
    precision = Fraction(tp, len(result)) if result else Fraction(0)
    recall = Fraction(tp, len(gt))
    f1 = Fraction(2 * tp, len(gt) + tp + fp) if tp else Fraction(0)
    return {"precision": precision, "recall": recall, "f1": f1}
