"""Dense kernels shared by the rest of the package.

Everything here computes in float64 regardless of the input dtype, and
returns fresh arrays; inputs are never modified.
"""

from __future__ import annotations

from collections.abc import Iterable

import numpy as np

from .errors import DimensionError, InputError

WEIGHT_SUM_TOL = 1e-9


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InputError(f"{name} contains non-finite entries")
    return m


def as_vector(v, name: str = "vector") -> np.ndarray:
    x = np.asarray(v, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputError(f"{name} contains non-finite entries")
    return x


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}: "
            f"inner dimensions {a.shape[1]} != {b.shape[0]}"
        )
    return a @ b


def row_softmax(m) -> np.ndarray:
    """Softmax along each row, max-shifted so large logits cannot overflow."""
    m = as_matrix(m)
    shifted = m - m.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


def log_sum_exp(v, weights) -> float:
    """ln(sum_j w_j exp(v_j)) for a probability vector ``weights``."""
    v = as_vector(v, "values")
    w = as_vector(weights, "weights")
    if v.shape != w.shape:
        raise DimensionError(f"values ({v.size}) and weights ({w.size}) differ in length")
    if np.any(w < 0):
        raise InputError("weights must be nonnegative")
    total = w.sum()
    if abs(total - 1.0) > WEIGHT_SUM_TOL:
        raise InputError(f"weights must sum to 1 (got {total!r})")
    support = w > 0
    vmax = v[support].max()
    return float(vmax + np.log(np.sum(w[support] * np.exp(v[support] - vmax))))


def argsort_desc(v) -> list[int]:
    """Indices ordering ``v`` from largest to smallest; ties keep index order."""
    v = as_vector(v)
    # stable sort on the negated values keeps equal entries in ascending index order
    return [int(i) for i in np.argsort(-v, kind="stable")]


def renormalize_rows(m, active: Iterable[int], rows: Iterable[int] | None = None) -> np.ndarray:
    """Zero the columns outside ``active`` and rescale rows to sum to one.

    Only the rows listed in ``rows`` are rescaled (all rows by default);
    any other row keeps its zeroed columns but is not rescaled.
    """
    m = as_matrix(m)
    active = sorted(set(int(i) for i in active))
    if any(i < 0 or i >= m.shape[1] for i in active):
        raise InputError(f"active indices out of range for {m.shape[1]} columns")
    out = np.zeros_like(m)
    out[:, active] = m[:, active]
    targets = range(m.shape[0]) if rows is None else sorted(set(int(r) for r in rows))
    for r in targets:
        mass = out[r].sum()
        if not mass > 0:
            raise InputError(f"row {r} has no mass on the active columns; cannot renormalize")
        out[r] /= mass
    return out
