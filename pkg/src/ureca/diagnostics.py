"""Measurements on recorded transport trajectories.

The convergence statements these check are limits, which finite data can
only falsify at a tolerance.  Each function therefore returns a number
(a deviation, a slope, a range) and leaves pass/fail to explicit
thresholds in :func:`convergence_report`.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass

import numpy as np

from . import numerics
from .core import Step
from .errors import InputError


@dataclass(frozen=True)
class Trajectory:
    steps: tuple[Step, ...]

    def __post_init__(self):
        for s in self.steps:
            if len(s.evidence) != len(s.active):
                raise InputError(f"step t={s.t}: {len(s.evidence)} evidence values for {len(s.active)} active clusters")
            if s.probability is not None and len(s.probability) != len(s.active):
                raise InputError(f"step t={s.t}: probability length does not match the active set")
            if not np.all(np.isfinite(s.evidence)):
                raise InputError(f"step t={s.t}: non-finite evidence")

    def __len__(self):
        return len(self.steps)

    @classmethod
    def from_steps(cls, steps: Iterable) -> "Trajectory":
        out = []
        for i, s in enumerate(steps):
            if isinstance(s, Step):
                out.append(s)
                continue
            ev = tuple(float(x) for x in s["evidence"])
            active = tuple(int(a) for a in s.get("active", range(len(ev))))
            prob = s.get("probability")
            mass = s.get("mass")
            out.append(Step(
                int(s.get("t", i)),
                active,
                ev,
                None if prob is None else tuple(float(x) for x in prob),
                None if mass is None else tuple(float(x) for x in mass),
            ))
        return cls(tuple(out))

    @classmethod
    def from_json(cls, doc: Mapping, anchor: int | None = None) -> "Trajectory":
        """Accept a bare ``{"steps": [...]}``, one trace, or a trace file."""
        if "traces" in doc:
            traces = doc["traces"]
            if not traces:
                raise InputError("trace file holds no traces")
            if anchor is None:
                doc = traces[0]
            else:
                matches = [t for t in traces if t.get("anchor") == anchor]
                if not matches:
                    raise InputError(f"no trace for anchor {anchor}")
                doc = matches[0]
        if "steps" not in doc:
            raise InputError("document has no 'steps' field")
        return cls.from_steps(doc["steps"])


def jensen_gap(evid, weights) -> np.ndarray:
    """Per-target gap ``ln E_w[exp(e)] - E_w[e]`` for each weight row; never negative."""
    e = numerics.as_vector(evid, "evidence")
    w = np.asarray(weights, dtype=np.float64)
    rows = w[None, :] if w.ndim == 1 else w
    if rows.ndim != 2 or rows.shape[1] != e.size:
        raise InputError(f"weights of shape {w.shape} do not match {e.size} evidence values")
    return np.array([numerics.log_sum_exp(e, row) - float(row @ e) for row in rows])


def up_limit_deviation(traj: Trajectory, target: float, burn_in: int = 0) -> float:
    """``sup_{t >= burn_in, j} |p_t(j) - target|`` over the recorded steps."""
    window = traj.steps[burn_in:]
    if burn_in < 0 or not window:
        raise InputError(f"burn-in {burn_in} leaves no steps out of {len(traj)}")
    if any(s.probability is None for s in window):
        raise InputError("trajectory carries no probabilities")
    return float(max(np.max(np.abs(np.asarray(s.probability) - target)) for s in window))


def lipschitz_estimate(traj: Trajectory, burn_in: int = 0) -> float:
    """Largest ``|e_{t+L}(i) - e_t(a)| / L`` over step pairs and component pairs."""
    window = traj.steps[burn_in:]
    if len(window) < 2:
        return 0.0
    t = np.array([s.t for s in window], dtype=np.float64)
    hi = np.array([max(s.evidence) for s in window])
    lo = np.array([min(s.evidence) for s in window])
    best = 0.0
    for lag in range(1, len(window)):
        dt = t[lag:] - t[:-lag]
        # max |x - y| over x in step t+lag, y in step t
        span = np.maximum(hi[lag:] - lo[:-lag], hi[:-lag] - lo[lag:])
        best = max(best, float(np.max(span / dt)))
    return best


def uniform_spread(traj: Trajectory) -> list[float]:
    if not traj.steps:
        raise InputError("empty trajectory")
    return [float(max(s.evidence) - min(s.evidence)) for s in traj.steps]


@dataclass(frozen=True)
class ConvergenceParams:
    j_size: int
    epsilon: float | None = None
    alpha: float | None = None
    burn_in: int = 0
    spread_tol: float = 1e-6

    def __post_init__(self):
        if self.j_size < 1:
            raise InputError("j_size must be at least 1")
        base = 1.0 / self.j_size
        eps = 0.05 * base if self.epsilon is None else float(self.epsilon)
        if not 0 <= eps < base:
            raise InputError(f"epsilon must lie in [0, 1/|J|) = [0, {base})")
        ceiling = (base - eps) / (base + eps)
        alpha = 0.5 * ceiling if self.alpha is None else float(self.alpha)
        if not 0 <= alpha < ceiling:
            raise InputError(f"alpha must lie in [0, {ceiling})")
        if not self.spread_tol > 0:
            raise InputError("spread_tol must be positive")
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "alpha", alpha)

    @property
    def lipschitz_bound(self) -> float:
        base = 1.0 / self.j_size
        return self.alpha * math.log((base + self.epsilon) / (base - self.epsilon))


@dataclass(frozen=True)
class Branch:
    value: float
    threshold: float
    passed: bool

    def to_dict(self) -> dict:
        return {"value": self.value, "threshold": self.threshold, "pass": self.passed}


@dataclass(frozen=True)
class ConvergenceReport:
    up_limit: Branch
    lipschitz: Branch
    spread: Branch
    params: ConvergenceParams

    @property
    def verdict(self) -> bool:
        return self.up_limit.passed and self.lipschitz.passed and self.spread.passed

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "branches": {
                "up_limit": self.up_limit.to_dict(),
                "lipschitz": self.lipschitz.to_dict(),
                "spread": self.spread.to_dict(),
            },
            "params": {
                "j_size": self.params.j_size,
                "epsilon": self.params.epsilon,
                "alpha": self.params.alpha,
                "burn_in": self.params.burn_in,
                "spread_tol": self.params.spread_tol,
            },
            "note": "finite-window test: a pass means the limit was not falsified at these tolerances",
        }


def convergence_report(traj: Trajectory, params: ConvergenceParams) -> ConvergenceReport:
    """Check the three convergence conditions over steps ``t >= burn_in``.

    up_limit: probabilities stay within epsilon of ``1/j_size``.
    lipschitz: the evidence slope stays at or below
    ``alpha * ln((1/J + eps) / (1/J - eps))``.
    spread: the final step's evidence range is at or below ``spread_tol``.
    """
    dev = up_limit_deviation(traj, 1.0 / params.j_size, params.burn_in)
    lip = lipschitz_estimate(traj, params.burn_in)
    final_spread = uniform_spread(traj)[-1]
    bound = params.lipschitz_bound
    return ConvergenceReport(
        Branch(dev, params.epsilon, dev < params.epsilon),
        Branch(lip, bound, lip <= bound),
        Branch(final_spread, params.spread_tol, final_spread <= params.spread_tol),
        params,
    )
