"""Greedy set cover and the chained set-cover construction behind entropy.

Two parts:

* Weighted set cover: greedy selection by price per newly covered element,
  an exhaustive optimum for small instances, and the harmonic bound
  ``c(greedy) <= c(OPT) * H_n``.
* Chains over a dyadic distribution.  Atoms are the ``2**k`` bit strings of
  length k, each with probability ``2**-k``.  For an event of probability p
  the predecessor cover picks disjoint atom subsets of probability exactly
  p; the successor cover wraps each of those into its own singleton
  collection; combination picks one pairwise-disjoint cluster per event.
  The chain cost of an event is ``ln |S|``, the log of the successor size,
  and its probability-weighted sum never exceeds the entropy in nats.
"""

from __future__ import annotations

import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import InputError

EULER_GAMMA = 0.5772156649015329
BRUTE_FORCE_CAP = 24
ATOM_BITS_CAP = 16


# -- weighted set cover ------------------------------------------------------

@dataclass(frozen=True)
class SetCoverInstance:
    """Universe ``0..n_elements-1`` and candidate subsets with positive costs.

    A candidate given without a cost is charged the sum of its element
    weights, i.e. the integral of the weight function over the subset.
    """

    n_elements: int
    candidates: tuple[frozenset[int], ...]
    costs: tuple[float, ...]
    element_weight: tuple[float, ...] = ()

    def __post_init__(self):
        weights = tuple(float(w) for w in self.element_weight) or (1.0,) * self.n_elements
        if len(weights) != self.n_elements:
            raise InputError("one weight per element required")
        cands = tuple(frozenset(int(e) for e in c) for c in self.candidates)
        costs = list(self.costs) + [None] * (len(cands) - len(self.costs))
        for i, c in enumerate(cands):
            if not c:
                raise InputError(f"candidate {i} is empty")
            if any(not 0 <= e < self.n_elements for e in c):
                raise InputError(f"candidate {i} has elements outside the universe")
            if costs[i] is None:
                costs[i] = sum(weights[e] for e in c)
            if not costs[i] > 0:
                raise InputError(f"candidate {i} has nonpositive cost {costs[i]}")
        object.__setattr__(self, "candidates", cands)
        object.__setattr__(self, "costs", tuple(float(x) for x in costs))
        object.__setattr__(self, "element_weight", weights)

    def uncovered(self) -> list[int]:
        covered = set().union(*self.candidates) if self.candidates else set()
        return [e for e in range(self.n_elements) if e not in covered]

    def to_dict(self) -> dict:
        return {
            "n_elements": self.n_elements,
            "candidates": [{"elements": sorted(c), "cost": cost} for c, cost in zip(self.candidates, self.costs)],
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "SetCoverInstance":
        try:
            cands = raw["candidates"]
            return cls(
                int(raw["n_elements"]),
                tuple(c["elements"] for c in cands),
                tuple(c.get("cost") for c in cands),
                tuple(raw.get("element_weight", ())),
            )
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed set-cover instance: {exc}") from None

    @classmethod
    def from_file(cls, path) -> "SetCoverInstance":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except FileNotFoundError:
            raise InputError(f"instance file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc.msg})") from None


@dataclass(frozen=True)
class GreedyResult:
    chosen: tuple[int, ...]
    prices: dict[int, float]
    total_cost: float

    def to_dict(self) -> dict:
        return {
            "chosen": list(self.chosen),
            "prices": {str(e): p for e, p in sorted(self.prices.items())},
            "total_cost": self.total_cost,
        }


def _require_solvable(inst: SetCoverInstance) -> None:
    missing = inst.uncovered()
    if missing:
        raise InputError(f"instance is unsolvable: elements {missing} are in no candidate")


def greedy_cover(inst: SetCoverInstance) -> GreedyResult:
    """Pick the candidate with the lowest cost per newly covered element until done."""
    _require_solvable(inst)
    covered: set[int] = set()
    chosen: list[int] = []
    prices: dict[int, float] = {}
    while len(covered) < inst.n_elements:
        best, best_price = -1, math.inf
        for i, cand in enumerate(inst.candidates):
            new = len(cand - covered)
            if new and inst.costs[i] / new < best_price:
                best, best_price = i, inst.costs[i] / new
        for e in inst.candidates[best] - covered:
            prices[e] = best_price
        covered |= inst.candidates[best]
        chosen.append(best)
    return GreedyResult(tuple(chosen), prices, float(sum(inst.costs[i] for i in chosen)))


def _masks(inst: SetCoverInstance) -> list[int]:
    return [sum(1 << e for e in c) for c in inst.candidates]


def brute_force_cover(inst: SetCoverInstance) -> tuple[float, tuple[int, ...]]:
    """Exact optimum by enumerating every sub-collection of candidates.

    The candidates are split in two halves whose subset tables are joined
    row by row, which keeps memory at ``2**(k/2)`` entries per table.
    """
    k = len(inst.candidates)
    if k > BRUTE_FORCE_CAP:
        raise InputError(f"exhaustive search is capped at {BRUTE_FORCE_CAP} candidates, got {k}")
    if inst.n_elements > 62:
        raise InputError("exhaustive search supports at most 62 elements")
    _require_solvable(inst)
    masks = _masks(inst)
    full = (1 << inst.n_elements) - 1
    lo, hi = k // 2, k - k // 2

    def table(offset: int, size: int):
        cover = np.zeros(1 << size, dtype=np.int64)
        cost = np.zeros(1 << size, dtype=np.float64)
        for j in range(size):
            span = 1 << j
            cover[span : 2 * span] = cover[:span] | masks[offset + j]
            cost[span : 2 * span] = cost[:span] + inst.costs[offset + j]
        return cover, cost

    lo_cover, lo_cost = table(0, lo)
    hi_cover, hi_cost = table(lo, hi)
    best, best_sel = math.inf, (0, 0)
    for h in range(1 << hi):
        ok = (lo_cover | hi_cover[h]) == full
        if not ok.any():
            continue
        total = np.where(ok, lo_cost + hi_cost[h], np.inf)
        l = int(np.argmin(total))
        if total[l] < best:
            best, best_sel = float(total[l]), (l, h)
    l, h = best_sel
    chosen = tuple([j for j in range(lo) if l >> j & 1] + [lo + j for j in range(hi) if h >> j & 1])
    return float(sum(inst.costs[i] for i in chosen)), chosen


def harmonic(n: int) -> float:
    return float(sum(Fraction(1, k) for k in range(1, n + 1)))


@dataclass(frozen=True)
class BoundCheck:
    greedy_cost: float
    opt_cost: float
    harmonic_number: float
    bound: float
    log_approx: float
    holds: bool

    def to_dict(self) -> dict:
        return {
            "greedy_cost": self.greedy_cost,
            "opt_cost": self.opt_cost,
            "harmonic_number": self.harmonic_number,
            "bound": self.bound,
            "ln_n_plus_gamma": self.log_approx,
            "holds": self.holds,
        }


def harmonic_bound_check(inst: SetCoverInstance, tol: float = 1e-9) -> BoundCheck:
    g = greedy_cover(inst).total_cost
    opt, _ = brute_force_cover(inst)
    h = harmonic(inst.n_elements)
    n = inst.n_elements
    approx = opt * (math.log(n) + EULER_GAMMA) if n > 0 else 0.0
    return BoundCheck(g, opt, h, opt * h, approx, g <= opt * h + tol)


# -- dyadic distributions and chains -------------------------------------------

def _is_power_of_two(x: int) -> bool:
    return x > 0 and x & (x - 1) == 0


@dataclass(frozen=True)
class DyadicDistribution:
    """Events with probabilities ``a / 2**j`` over ``2**bits`` uniform atoms."""

    events: tuple[tuple[str, Fraction], ...]
    bits: int

    @classmethod
    def create(cls, probs: Mapping[str, object] | Sequence[tuple[str, object]], bits: int | None = None) -> "DyadicDistribution":
        items = list(probs.items()) if isinstance(probs, Mapping) else list(probs)
        if not items:
            raise InputError("distribution has no events")
        events = []
        for label, p in items:
            try:
                frac = Fraction(p) if not isinstance(p, float) else Fraction(p).limit_denominator(1 << ATOM_BITS_CAP)
            except (ValueError, ZeroDivisionError):
                raise InputError(f"event {label!r}: cannot parse probability {p!r}") from None
            if isinstance(p, float) and float(frac) != p:
                raise InputError(f"event {label!r}: probability {p!r} is not dyadic")
            if not 0 < frac <= 1:
                raise InputError(f"event {label!r}: probability {frac} outside (0, 1]")
            if not _is_power_of_two(frac.denominator):
                raise InputError(f"event {label!r}: probability {frac} is not dyadic")
            events.append((str(label), frac))
        if len({e for e, _ in events}) != len(events):
            raise InputError("duplicate event labels")
        total = sum(p for _, p in events)
        if total != 1:
            raise InputError(f"probabilities sum to {total}, not 1")
        need = max(p.denominator.bit_length() - 1 for _, p in events)
        bits = need if bits is None else bits
        if bits < need:
            raise InputError(f"{bits} bits cannot resolve probabilities with denominator 2**{need}")
        if bits > ATOM_BITS_CAP:
            raise InputError(f"atom count capped at 2**{ATOM_BITS_CAP}")
        return cls(tuple(events), bits)

    @property
    def n_atoms(self) -> int:
        return 1 << self.bits

    def prob(self, label: str) -> Fraction:
        for e, p in self.events:
            if e == label:
                return p
        raise InputError(f"unknown event {label!r}")

    def labels(self) -> list[str]:
        return [e for e, _ in self.events]

    def atom_label(self, i: int) -> str:
        return format(i, f"0{self.bits}b") if self.bits else "0"

    def atom_index(self, label: str) -> int:
        if self.bits == 0:
            if label != "0":
                raise InputError(f"unknown atom {label!r}")
            return 0
        if len(label) != self.bits or set(label) - {"0", "1"}:
            raise InputError(f"atom {label!r} is not a {self.bits}-bit string")
        return int(label, 2)


class Ordering:
    """Tie-break policy among equal-probability candidates.

    ``next_part(uncovered, size, n_atoms, event)`` returns the candidate the
    greedy takes next: the first one, in the policy's order, of the right
    size that avoids every atom already covered.
    """

    name = "ordering"

    def next_part(self, uncovered: list[int], size: int, n_atoms: int, event: str) -> tuple[int, ...] | None:
        raise NotImplementedError


class LexOrdering(Ordering):
    """Candidates in lexicographic combination order over atom indices."""

    name = "lex"

    def next_part(self, uncovered, size, n_atoms, event):
        return tuple(uncovered[:size]) if len(uncovered) >= size else None


class InterleavedOrdering(Ordering):
    """Strided parts ``{j, j+P, j+2P, ...}`` with ``P = n_atoms // size``.

    For two bits and size 2 this gives {00,10} then {01,11}; for size 1 it
    is the natural order.  This reproduces the hand-worked a/b/c example.
    """

    name = "paper"

    def next_part(self, uncovered, size, n_atoms, event):
        stride = n_atoms // size
        free = set(uncovered)
        for j in range(stride):
            part = tuple(j + r * stride for r in range(size))
            if free.issuperset(part):
                return part
        return None


class ExplicitOrdering(Ordering):
    """Atoms ranked by a user-supplied permutation, globally or per event."""

    name = "file"

    def __init__(self, default: Sequence[int] | None = None, per_event: Mapping[str, Sequence[int]] | None = None):
        self.default = list(default) if default is not None else None
        self.per_event = {k: list(v) for k, v in (per_event or {}).items()}

    def _rank(self, event: str, n_atoms: int) -> list[int]:
        rank = self.per_event.get(event, self.default)
        if rank is None:
            return list(range(n_atoms))
        if sorted(rank) != list(range(n_atoms)):
            raise InputError(f"ordering for {event!r} is not a permutation of the {n_atoms} atoms")
        return rank

    def next_part(self, uncovered, size, n_atoms, event):
        free = set(uncovered)
        picked = [a for a in self._rank(event, n_atoms) if a in free][:size]
        return tuple(sorted(picked)) if len(picked) == size else None

    @classmethod
    def from_file(cls, path, dist: DyadicDistribution) -> "ExplicitOrdering":
        """Read ``{"atoms": [...]}`` and/or ``{"events": {label: [...]}}`` of atom labels."""
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise InputError(f"ordering file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc.msg})") from None

        def idx(labels):
            return [dist.atom_index(str(a)) for a in labels]

        default = idx(raw["atoms"]) if "atoms" in raw else None
        per_event = {k: idx(v) for k, v in raw.get("events", {}).items()}
        return cls(default, per_event)


def get_ordering(name: str | Ordering, dist: DyadicDistribution | None = None) -> Ordering:
    if isinstance(name, Ordering):
        return name
    if name == "lex":
        return LexOrdering()
    if name == "paper":
        return InterleavedOrdering()
    if name.startswith("file:"):
        if dist is None:
            raise InputError("file ordering needs the distribution to resolve atom labels")
        return ExplicitOrdering.from_file(name[len("file:") :], dist)
    raise InputError(f"unknown ordering {name!r}; expected lex, paper or file:<path>")


Family = tuple[tuple[int, ...], ...]


@dataclass(frozen=True)
class PredecessorCover:
    parts: Family
    residual: tuple[int, ...]

    @property
    def exact(self) -> bool:
        return not self.residual


def predecessor_msc(dist: DyadicDistribution, event: str, ordering: str | Ordering = "lex") -> PredecessorCover:
    """Greedy cover of the atoms by minimum-probability feasible candidates.

    Feasible candidates have probability at least p(event); the cheapest
    have exactly p.  The greedy keeps taking such candidates disjoint from
    its earlier picks.  When ``1/p`` is not an integer the atoms left over
    cannot host another disjoint candidate and are returned as ``residual``.
    """
    order = get_ordering(ordering, dist)
    p = dist.prob(event)
    n = dist.n_atoms
    size = p * n
    if size.denominator != 1:
        raise InputError(f"event {event!r}: probability {p} is finer than the {n} atoms")
    size = int(size)
    uncovered = list(range(n))
    parts = []
    while True:
        part = order.next_part(uncovered, size, n, event)
        if part is None:
            break
        if len(part) != size or not set(part) <= set(uncovered):
            raise InputError(f"ordering {order.name!r} proposed an infeasible candidate {part}")
        parts.append(tuple(part))
        taken = set(part)
        uncovered = [a for a in uncovered if a not in taken]
    return PredecessorCover(tuple(parts), tuple(uncovered))


def successor_msc(u_alpha: Sequence[Sequence[int]]) -> tuple[Family, ...]:
    """Cover the predecessor's subsets; disjointness forces one subset per pick."""
    seen: dict[int, int] = {}
    for i, part in enumerate(u_alpha):
        for a in part:
            if a in seen:
                raise InputError(f"subsets {seen[a]} and {i} overlap on atom {a}")
            seen[a] = i
    return tuple((tuple(part),) for part in u_alpha)


@dataclass(frozen=True)
class ChainResult:
    predecessors: dict[str, PredecessorCover]
    successors: dict[str, tuple[Family, ...]]
    selected: dict[str, tuple[int, ...]]
    combined: Family
    covered: tuple[int, ...] = field(default=())

    def to_dict(self, dist: DyadicDistribution) -> dict:
        lab = dist.atom_label

        def fam(f):
            return [[lab(a) for a in part] for part in f]

        return {
            "events": [
                {
                    "event": e,
                    "probability": str(dist.prob(e)),
                    "predecessor": fam(self.predecessors[e].parts),
                    "residual": [lab(a) for a in self.predecessors[e].residual],
                    "successor": [fam(s) for s in self.successors[e]],
                    "selected": [[lab(a) for a in self.selected[e]]],
                }
                for e in dist.labels()
            ],
            "combined": [[fam([part])[0]] for part in self.combined],
        }


class NoDisjointSystem(InputError):
    def __init__(self, blocking: list[str]):
        self.blocking = blocking
        super().__init__(f"no pairwise-disjoint cluster choice exists; blocked at events {blocking}")


def combine_clusters(successors: Mapping[str, Sequence[Family]], events: Sequence[str] | None = None) -> dict[str, tuple[int, ...]]:
    """Choose one cluster per event so that chosen clusters are pairwise disjoint.

    Depth-first over events in order, trying each event's clusters in the
    order the successor listed them; the first complete choice wins.
    """
    events = list(successors) if events is None else list(events)
    options = [[s[0] for s in successors[e]] for e in events]
    chosen: list[tuple[int, ...]] = []
    deepest = [0]

    def search(i: int, used: frozenset) -> bool:
        deepest[0] = max(deepest[0], i)
        if i == len(events):
            return True
        for part in options[i]:
            if used.isdisjoint(part):
                chosen.append(part)
                if search(i + 1, used | frozenset(part)):
                    return True
                chosen.pop()
        return False

    if not search(0, frozenset()):
        raise NoDisjointSystem(events[: deepest[0] + 1])
    return dict(zip(events, chosen))


def build_chains(dist: DyadicDistribution, ordering: str | Ordering = "lex", combine: bool = True) -> ChainResult:
    order = get_ordering(ordering, dist)
    preds = {e: predecessor_msc(dist, e, order) for e in dist.labels()}
    succs = {e: successor_msc(preds[e].parts) for e in dist.labels()}
    selected = combine_clusters(succs, dist.labels()) if combine else {}
    combined = tuple(selected[e] for e in dist.labels()) if combine else ()
    covered = tuple(sorted(a for part in combined for a in part))
    return ChainResult(preds, succs, selected, combined, covered)


def entropy_nats(dist: DyadicDistribution) -> float:
    return float(sum(float(p) * math.log(1 / float(p)) for _, p in dist.events))


def chain_cost(successor: Sequence[Family]) -> float:
    """ln of the number of successor picks; equals ln(1/p) for an exact cover."""
    return math.log(len(successor))


@dataclass(frozen=True)
class DualityCheck:
    expected_cover_cost: float
    entropy: float
    per_event: dict[str, float]
    exact: bool
    holds: bool

    def to_dict(self) -> dict:
        return {
            "expected_cover_cost": self.expected_cover_cost,
            "entropy": self.entropy,
            "per_event_cost": dict(self.per_event),
            "exact_covers": self.exact,
            "holds": self.holds,
        }


def duality_check(dist: DyadicDistribution, ordering: str | Ordering = "lex", tol: float = 1e-9) -> DualityCheck:
    chains = build_chains(dist, ordering, combine=False)
    costs = {e: chain_cost(chains.successors[e]) for e in dist.labels()}
    expected = float(sum(float(p) * costs[e] for e, p in dist.events))
    h = entropy_nats(dist)
    exact = all(chains.predecessors[e].exact for e in dist.labels())
    return DualityCheck(expected, h, costs, exact, expected <= h + tol)


def random_dyadic(rng: np.random.Generator, max_bits: int = 4, unit_numerators: bool = False) -> DyadicDistribution:
    """A random dyadic distribution over at most ``2**max_bits`` atoms.

    With ``unit_numerators`` every probability is a power of two (a split
    of a binary tree); otherwise atom counts per event are arbitrary.
    """
    bits = int(rng.integers(1, max_bits + 1))
    n = 1 << bits
    if unit_numerators:
        leaves = [Fraction(1)]
        target = int(rng.integers(1, n + 1))
        while len(leaves) < target:
            splittable = [i for i, p in enumerate(leaves) if p > Fraction(1, n)]
            i = splittable[int(rng.integers(len(splittable)))]
            half = leaves.pop(i) / 2
            leaves[i:i] = [half, half]
        probs = leaves
    else:
        k = int(rng.integers(1, n + 1))
        cuts = sorted(rng.choice(np.arange(1, n), size=k - 1, replace=False).tolist()) if k > 1 else []
        edges = [0, *cuts, n]
        probs = [Fraction(b - a, n) for a, b in zip(edges, edges[1:])]
    return DyadicDistribution.create([(f"e{i}", p) for i, p in enumerate(probs)], bits=bits)


def random_instance(rng: np.random.Generator, max_elements: int = 10, max_candidates: int = 12, cost_range=(0.1, 2.0)) -> SetCoverInstance:
    """A random solvable instance: every element is planted in some candidate."""
    n = int(rng.integers(1, max_elements + 1))
    k = int(rng.integers(1, max_candidates + 1))
    sets = [set() for _ in range(k)]
    for e in range(n):
        sets[int(rng.integers(k))].add(e)
    for s in sets:
        extra = rng.random(n) < 0.3
        s.update(int(e) for e in np.flatnonzero(extra))
        if not s:
            s.add(int(rng.integers(n)))
    costs = rng.uniform(*cost_range, size=k)
    return SetCoverInstance(n, tuple(frozenset(s) for s in sets), tuple(float(c) for c in costs))


def enumerate_cover_costs(inst: SetCoverInstance) -> float:
    """Optimum via a DP over covered-element bitmasks (independent of brute_force_cover)."""
    _require_solvable(inst)
    full = (1 << inst.n_elements) - 1
    best = {0: 0.0}
    for mask, cost in zip(_masks(inst), inst.costs):
        for covered, c in list(best.items()):
            nxt = covered | mask
            if c + cost < best.get(nxt, math.inf):
                best[nxt] = c + cost
    return best[full]


WORKED_EXAMPLE = {"a": Fraction(1, 2), "b": Fraction(1, 4), "c": Fraction(1, 4)}

FIVE_ELEMENT_INSTANCE = SetCoverInstance(
    5,
    (frozenset({0, 1, 2}), frozenset({3, 4}), frozenset({0, 3}), frozenset({1, 4}), frozenset({2})),
    (1.0, 1.0, 1.0, 1.0, 1.0),
)
