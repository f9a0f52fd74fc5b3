"""Recursive evidence clustering over a query/code batch.

For one anchor query the procedure is:

1. evidence: the anchor's row of ``Q @ C.T`` (one logit per candidate code);
2. dynamics: row softmax of centroid-centroid scores, where the centroid
   of code k's cluster is the query paired with it;
3. repeat: sort active clusters by evidence, split at the gt cluster's
   position into survived (at or above gt) and dropped (below), zero the
   dynamics toward dropped clusters, and transport evidence among the
   survivors.  Stops once nothing can be dropped.

Survived clusters at the end form ``K``; the union of dropped sets is ``L``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .errors import InputError, InvariantError
from .ingest import EmbeddingBatch

TRACE_SCHEMA = "ureca.trace/1"
ROW_SUM_TOL = 1e-9


class Mode(str, enum.Enum):
    LITERAL = "literal"
    EXPECTATION = "expectation"
    CONSERVATIVE = "conservative"


@dataclass(frozen=True)
class TransportConfig:
    mode: Mode = Mode.EXPECTATION
    max_recursion_num: int = 10
    log_prior: float = 0.0
    # None picks the mode default: off for literal, on otherwise
    renormalize_after_drop: bool | None = None
    spread_tol: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.max_recursion_num < 1:
            raise InputError("max_recursion_num must be at least 1")
        if not self.spread_tol > 0:
            raise InputError("spread_tol must be positive")

    @property
    def renormalize(self) -> bool:
        if self.renormalize_after_drop is None:
            return self.mode is not Mode.LITERAL
        return self.renormalize_after_drop


class UnionFind:
    """Disjoint sets over ``0..n-1`` with union by rank and path compression."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def __len__(self):
        return len(self.parent)

    def _check(self, x: int) -> None:
        if not 0 <= x < len(self.parent):
            raise InputError(f"element {x} out of range for {len(self.parent)} elements")

    def find(self, x: int) -> int:
        self._check(x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return True

    def components(self) -> list[list[int]]:
        groups: dict[int, list[int]] = {}
        for x in range(len(self.parent)):
            groups.setdefault(self.find(x), []).append(x)
        return sorted(groups.values())


def uf_find(u: UnionFind, x: int) -> int:
    return u.find(x)


def uf_union(u: UnionFind, a: int, b: int) -> UnionFind:
    u.union(a, b)
    return u


@dataclass(frozen=True)
class EvidenceState:
    """Evidence of one anchor over all m candidate clusters.

    ``values`` always has length m; entries outside ``active`` are frozen at
    the value they had when their cluster was dropped.  ``mass`` holds the
    unnormalized cluster probabilities in conservative mode.
    """

    anchor: int
    values: np.ndarray
    active: tuple[int, ...]
    t: int = 0
    mass: np.ndarray | None = None

    def active_values(self) -> np.ndarray:
        return self.values[list(self.active)]


@dataclass(frozen=True)
class DynamicsMatrix:
    """Row i holds the mixture weights over source clusters for target i."""

    weights: np.ndarray
    active: tuple[int, ...]

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    def block(self, idx) -> np.ndarray:
        idx = list(idx)
        return self.weights[np.ix_(idx, idx)]


@dataclass(frozen=True)
class Level:
    survived: tuple[int, ...]
    dropped: tuple[int, ...]
    # evidence of the active clusters (in active order) at split time
    evidence: tuple[float, ...]


@dataclass(frozen=True)
class Step:
    t: int
    active: tuple[int, ...]
    evidence: tuple[float, ...]
    probability: tuple[float, ...]
    mass: tuple[float, ...] | None = None


@dataclass
class RecursionTrace:
    anchor: int
    gt: int
    mode: Mode
    levels: list[Level]
    steps: list[Step]
    uf: UnionFind
    K: tuple[int, ...]
    L: tuple[int, ...]
    initial_active: tuple[int, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "anchor": self.anchor,
            "gt": self.gt,
            "mode": self.mode.value,
            "levels": [
                {"survived": list(lv.survived), "dropped": list(lv.dropped), "evidence": list(lv.evidence)}
                for lv in self.levels
            ],
            "K": list(self.K),
            "L": list(self.L),
            "steps": [step_to_dict(s) for s in self.steps],
        }


def step_to_dict(s: Step) -> dict:
    d = {"t": s.t, "active": list(s.active), "evidence": list(s.evidence), "probability": list(s.probability)}
    if s.mass is not None:
        d["mass"] = list(s.mass)
    return d


def init_evidence(batch: EmbeddingBatch) -> np.ndarray:
    """Initial logits ``E[i, j] = q_i . c_j``."""
    return numerics.matmul(batch.queries, batch.codes.T)


def cluster_centroids(batch: EmbeddingBatch) -> np.ndarray:
    """One centroid per code: its paired query, or the code itself if unpaired."""
    centroids = batch.codes.copy()
    seen = set()
    for i, g in enumerate(batch.gt):
        if g not in seen:
            centroids[g] = batch.queries[i]
            seen.add(g)
    return centroids


def init_dynamics(batch: EmbeddingBatch) -> DynamicsMatrix:
    cent = cluster_centroids(batch)
    w = numerics.row_softmax(numerics.matmul(cent, cent.T))
    return DynamicsMatrix(w, tuple(range(batch.m)))


def split_by_gt(state: EvidenceState, gt: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Split the active clusters at the gt cluster's rank.

    Survived clusters rank at or above gt by descending evidence; dropped
    clusters rank strictly below.  Both groups are returned in rank order.
    """
    if gt not in state.active:
        raise InvariantError(f"gt cluster {gt} is not active for anchor {state.anchor}")
    active = list(state.active)
    order = [active[r] for r in numerics.argsort_desc(state.values[active])]
    p = order.index(gt)
    return tuple(order[: p + 1]), tuple(order[p + 1 :])


def threshold_update_dynamics(dyn: DynamicsMatrix, dropped, renorm: bool) -> DynamicsMatrix:
    """Zero the dynamics toward dropped clusters and optionally renormalize.

    Dropped clusters lose their columns (as sources) and their rows (as
    targets).  With ``renorm`` each surviving row is rescaled over the
    surviving columns.
    """
    dropped = set(int(d) for d in dropped)
    if not dropped:
        return dyn
    if not dropped <= set(dyn.active):
        raise InputError(f"dropped clusters {sorted(dropped - set(dyn.active))} are not active")
    survivors = tuple(a for a in dyn.active if a not in dropped)
    w = dyn.weights.copy()
    d = sorted(dropped)
    w[:, d] = 0.0
    w[d, :] = 0.0
    if renorm:
        try:
            w = numerics.renormalize_rows(w, survivors, rows=survivors)
        except InputError as exc:
            raise InvariantError(f"threshold update left a surviving row empty: {exc}") from None
    return DynamicsMatrix(w, survivors)


def _softmax(v: np.ndarray) -> np.ndarray:
    ex = np.exp(v - v.max())
    return ex / ex.sum()


def transport_step(state: EvidenceState, dyn: DynamicsMatrix, cfg: TransportConfig, dropped=()) -> EvidenceState:
    """Advance the evidence one step.

    literal
        ``e_S <- e_S + e_S @ M_SS`` on the survivor block as given.
    expectation
        ``e_S <- M_SS @ e_S``; every row of the block must be stochastic.
    conservative
        Moves ``M[s, d] * p_d`` of probability mass from each dropped d to
        each survivor s, with ``p = exp(e + log_prior)``.  Reads the dynamics
        from *before* the threshold update, since those entries are the
        transfer weights.  Total mass is conserved.

    Survivors are ``state.active`` minus ``dropped``.
    """
    dropped = tuple(int(d) for d in dropped)
    survivors = [a for a in state.active if a not in set(dropped)]
    if not survivors:
        raise InvariantError("transport needs at least one surviving cluster")
    values = state.values.copy()
    mass = None
    if cfg.mode is Mode.LITERAL:
        e = values[survivors]
        # overflow shows up as non-finite values, checked below
        with np.errstate(over="ignore", invalid="ignore"):
            values[survivors] = e + e @ dyn.block(survivors)
    elif cfg.mode is Mode.EXPECTATION:
        block = dyn.block(survivors)
        sums = block.sum(axis=1)
        if np.any(block < 0) or np.any(np.abs(sums - 1.0) > ROW_SUM_TOL):
            raise InvariantError("expectation transport needs row-stochastic dynamics on the survivors")
        values[survivors] = block @ values[survivors]
    else:
        p = state.mass.copy() if state.mass is not None else np.exp(values + cfg.log_prior)
        p0 = p.copy()
        for d in dropped:
            for s in survivors:
                mu = dyn.weights[s, d] * p0[d]
                p[d] -= mu
                p[s] += mu
        if np.any(p <= 0):
            bad = int(np.flatnonzero(p <= 0)[0])
            raise InvariantError(f"conservative transport drove cluster {bad} to mass {p[bad]!r} at t={state.t}")
        values = np.log(p) - cfg.log_prior
        mass = p
    if not np.all(np.isfinite(values)):
        raise InvariantError(f"non-finite evidence after step t={state.t}")
    return EvidenceState(state.anchor, values, tuple(survivors), state.t + 1, mass)


def snapshot(state: EvidenceState) -> Step:
    e = state.active_values()
    mass = None if state.mass is None else tuple(float(x) for x in state.mass)
    return Step(
        state.t,
        state.active,
        tuple(float(x) for x in e),
        tuple(float(x) for x in _softmax(e)),
        mass,
    )


def initial_state(evidence_row, anchor: int, cfg: TransportConfig, active=None) -> EvidenceState:
    values = np.array(evidence_row, dtype=np.float64)
    active = tuple(range(values.size)) if active is None else tuple(active)
    mass = np.exp(values + cfg.log_prior) if cfg.mode is Mode.CONSERVATIVE else None
    return EvidenceState(anchor, values, active, 0, mass)


def recurse(state: EvidenceState, dyn: DynamicsMatrix, gt: int, cfg: TransportConfig) -> RecursionTrace:
    """Run the split/update/transport loop from an explicit state and dynamics."""
    m = state.values.size
    uf = UnionFind(m)
    levels: list[Level] = []
    steps = [snapshot(state)]
    start = state.active
    while len(levels) < cfg.max_recursion_num and len(state.active) > 1:
        survived, dropped = split_by_gt(state, gt)
        if not dropped:
            break
        levels.append(Level(survived, dropped, tuple(float(x) for x in state.active_values())))
        for d in dropped[1:]:
            uf.union(dropped[0], d)
        updated = threshold_update_dynamics(dyn, dropped, cfg.renormalize)
        flow = dyn if cfg.mode is Mode.CONSERVATIVE else updated
        state = transport_step(state, flow, cfg, dropped)
        dyn = updated
        steps.append(snapshot(state))
    K = tuple(sorted(state.active))
    for k in K[1:]:
        uf.union(K[0], k)
    L = tuple(sorted(d for lv in levels for d in lv.dropped))
    return RecursionTrace(state.anchor, gt, cfg.mode, levels, steps, uf, K, L, tuple(start))


def run_recursion(batch: EmbeddingBatch, anchor: int, cfg: TransportConfig, evidence=None, dynamics=None) -> RecursionTrace:
    """Cluster the candidates of one anchor query.

    ``evidence`` and ``dynamics`` may be passed in when many anchors share
    the same batch, to avoid recomputing them.
    """
    if not 0 <= anchor < batch.n:
        raise InputError(f"anchor {anchor} out of range for {batch.n} queries")
    E = init_evidence(batch) if evidence is None else evidence
    dyn = init_dynamics(batch) if dynamics is None else dynamics
    state = initial_state(E[anchor], anchor, cfg)
    return recurse(state, dyn, batch.gt[anchor], cfg)


def simulate_transport(state: EvidenceState, dyn: DynamicsMatrix, cfg: TransportConfig, n_steps: int) -> list[Step]:
    """Apply ``n_steps`` transport steps under fixed dynamics, with no splitting."""
    steps = [snapshot(state)]
    for _ in range(n_steps):
        state = transport_step(state, dyn, cfg)
        steps.append(snapshot(state))
    return steps

