"""InfoNCE, the code-code auxiliary loss over K/L partitions, and gradients.

The auxiliary loss for anchor b with gt code g is::

    -ln( exp(c_g . c_g) / (|K_b| + sum_{l in L_b} exp(c_g . c_l)) )

averaged over anchors.  K_b and L_b come out of the recursion and are
treated as fixed structure, so no gradient flows through them.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .ingest import EmbeddingBatch


@dataclass(frozen=True)
class Partition:
    K: frozenset[int]
    L: frozenset[int]


class PartitionSet(dict):
    """Mapping anchor -> Partition."""

    @classmethod
    def from_traces(cls, traces) -> "PartitionSet":
        return cls({t.anchor: Partition(frozenset(t.K), frozenset(t.L)) for t in traces})

    @classmethod
    def from_pairs(cls, pairs: Mapping[int, tuple]) -> "PartitionSet":
        return cls({int(b): Partition(frozenset(k), frozenset(l)) for b, (k, l) in pairs.items()})

    def validate(self, batch: EmbeddingBatch) -> None:
        if not self:
            raise InputError("the anchor set is empty")
        for b, part in self.items():
            if not 0 <= b < batch.n:
                raise InputError(f"anchor {b} out of range for {batch.n} queries")
            if part.K & part.L:
                raise InputError(f"anchor {b}: K and L overlap on {sorted(part.K & part.L)}")
            if batch.gt[b] not in part.K:
                raise InputError(f"anchor {b}: gt code {batch.gt[b]} is not in K")
            if any(not 0 <= j < batch.m for j in part.K | part.L):
                raise InputError(f"anchor {b}: partition index out of range")


@dataclass(frozen=True)
class LossReport:
    l_info: float
    l_ureca: float
    l_combined: float
    per_anchor: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "l_info": self.l_info,
            "l_ureca": self.l_ureca,
            "l_combined": self.l_combined,
            "per_anchor": list(self.per_anchor),
        }


def _check_temperature(temperature: float) -> None:
    if not temperature > 0:
        raise InputError(f"temperature must be positive, got {temperature}")


def _log_softmax_rows(s: np.ndarray) -> np.ndarray:
    mx = s.max(axis=1, keepdims=True)
    return s - mx - np.log(np.exp(s - mx).sum(axis=1, keepdims=True))


def info_nce_terms(queries, codes, gt, temperature: float = 1.0) -> np.ndarray:
    _check_temperature(temperature)
    s = np.asarray(queries) @ np.asarray(codes).T / temperature
    logp = _log_softmax_rows(s)
    return -logp[np.arange(s.shape[0]), list(gt)]


def info_nce(batch: EmbeddingBatch, temperature: float = 1.0) -> float:
    return float(np.mean(info_nce_terms(batch.queries, batch.codes, batch.gt, temperature)))


def ureca_terms(codes, gt, parts: PartitionSet) -> tuple[list[int], np.ndarray]:
    codes = np.asarray(codes)
    anchors = sorted(parts)
    terms = np.empty(len(anchors))
    for idx, b in enumerate(anchors):
        part = parts[b]
        c = codes[gt[b]]
        neg = [c @ codes[l] for l in sorted(part.L)]
        pos = c @ c
        # ln(|K| + sum exp(s_l)) computed stably
        shift = max([0.0, *neg])
        log_den = shift + np.log(len(part.K) * np.exp(-shift) + np.sum(np.exp(np.array(neg) - shift)))
        terms[idx] = log_den - pos
    return anchors, terms


def ureca_aux_loss(batch: EmbeddingBatch, parts: PartitionSet) -> float:
    parts.validate(batch)
    _, terms = ureca_terms(batch.codes, batch.gt, parts)
    return float(np.mean(terms))


def combined_loss(batch: EmbeddingBatch, parts: PartitionSet, temperature: float = 1.0) -> LossReport:
    parts.validate(batch)
    l_info = info_nce(batch, temperature)
    _, terms = ureca_terms(batch.codes, batch.gt, parts)
    l_ureca = float(np.mean(terms))
    return LossReport(l_info, l_ureca, l_info + l_ureca, tuple(float(t) for t in terms))


def grad_info_nce(queries, codes, gt, temperature: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    _check_temperature(temperature)
    q, c = np.asarray(queries, dtype=np.float64), np.asarray(codes, dtype=np.float64)
    n = q.shape[0]
    p = np.exp(_log_softmax_rows(q @ c.T / temperature))
    p[np.arange(n), list(gt)] -= 1.0
    g = p / (n * temperature)
    return g @ c, g.T @ q


def grad_ureca(codes, gt, parts: PartitionSet) -> np.ndarray:
    c = np.asarray(codes, dtype=np.float64)
    grad = np.zeros_like(c)
    anchors = sorted(parts)
    for b in anchors:
        part = parts[b]
        g = gt[b]
        cb = c[g]
        L = sorted(part.L)
        neg = np.array([cb @ c[l] for l in L])
        shift = max([0.0, *neg])
        den = len(part.K) * np.exp(-shift) + np.sum(np.exp(neg - shift))
        w = np.exp(neg - shift) / den
        grad[g] -= 2.0 * cb
        for wl, l in zip(w, L):
            grad[g] += wl * c[l]
            grad[l] += wl * cb
    return grad / len(anchors)


def grad_combined(batch: EmbeddingBatch, parts: PartitionSet, temperature: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the combined loss w.r.t. every query and code coordinate."""
    parts.validate(batch)
    gq, gc = grad_info_nce(batch.queries, batch.codes, batch.gt, temperature)
    return gq, gc + grad_ureca(batch.codes, batch.gt, parts)


def finite_diff_check(loss_fn: Callable[[np.ndarray], float], x, analytic, h: float = 1e-4) -> float:
    """Max over coordinates of ``|analytic - numeric| / max(1, |numeric|)``.

    ``numeric`` is the central difference ``(f(x+h) - f(x-h)) / 2h``.
    """
    if not h > 0:
        raise InputError("step h must be positive")
    x = np.array(x, dtype=np.float64)
    analytic = np.asarray(analytic, dtype=np.float64).reshape(x.shape)
    worst = 0.0
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = loss_fn(x)
        flat[i] = orig - h
        fm = loss_fn(x)
        flat[i] = orig
        numeric = (fp - fm) / (2 * h)
        worst = max(worst, abs(analytic.reshape(-1)[i] - numeric) / max(1.0, abs(numeric)))
    return worst


def check_batch_gradients(batch: EmbeddingBatch, parts: PartitionSet | None, temperature: float = 1.0, h: float = 1e-4) -> dict[str, float]:
    """Finite-difference errors of the InfoNCE and auxiliary gradients."""
    q0, c0, gt = batch.queries, batch.codes, batch.gt
    n = q0.size
    packed = np.concatenate([q0.ravel(), c0.ravel()])

    def unpack(x):
        return x[:n].reshape(q0.shape), x[n:].reshape(c0.shape)

    gq, gc = grad_info_nce(q0, c0, gt, temperature)
    out = {
        "info": finite_diff_check(
            lambda x: float(np.mean(info_nce_terms(*unpack(x), gt, temperature))),
            packed,
            np.concatenate([gq.ravel(), gc.ravel()]),
            h,
        )
    }
    if parts is not None:
        parts.validate(batch)
        out["ureca"] = finite_diff_check(
            lambda x: float(np.mean(ureca_terms(x.reshape(c0.shape), gt, parts)[1])),
            c0.ravel(),
            grad_ureca(c0, gt, parts).ravel(),
            h,
        )
    return out
