"""Ranking metrics for single-relevant-item retrieval."""

from __future__ import annotations

import math

from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InputError


def rank_gt(scores, gt: Sequence[int]) -> list[int]:
    """1-based rank of each query's gt code under descending scores.

    Ties are pessimistic: every competitor scoring at least as high as the
    gt code is counted ahead of it.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != len(gt):
        raise DimensionError(f"scores of shape {s.shape} do not match {len(gt)} ground-truth entries")
    ranks = []
    for i, g in enumerate(gt):
        if not 0 <= g < s.shape[1]:
            raise InputError(f"gt index {g} out of range for {s.shape[1]} candidates")
        ahead = int(np.count_nonzero(s[i] >= s[i, g])) - 1
        ranks.append(ahead + 1)
    return ranks


def _check(ranks) -> np.ndarray:
    r = np.asarray(list(ranks), dtype=np.float64)
    if r.size == 0:
        raise InputError("no ranks given")
    if np.any(r < 1):
        raise InputError("ranks are 1-based")
    return r


def mrr(ranks: Iterable[int]) -> float:
    r = _check(ranks)
    # fsum keeps the result independent of summation order
    return math.fsum(1.0 / r) / r.size


def recall_at_k(ranks: Iterable[int], k: int) -> float:
    if k < 1:
        raise InputError("k must be at least 1")
    return float(np.mean(_check(ranks) <= k))


@dataclass(frozen=True)
class RankResult:
    ranks: tuple[int, ...]
    mrr: float
    recall: dict[int, float]

    def to_dict(self) -> dict:
        return {"mrr": self.mrr, "recall": {str(k): v for k, v in sorted(self.recall.items())}}


def evaluate(scores, gt, ks=(1, 5, 10)) -> RankResult:
    ranks = rank_gt(scores, gt)
    return RankResult(tuple(ranks), mrr(ranks), {int(k): recall_at_k(ranks, k) for k in ks})
