"""Support oracles: upward and bidirectional support sets, traces, and time-bound checks."""
from __future__ import annotations

import json
from collections.abc import Iterable
from dataclasses import dataclass
from fractions import Fraction

from .hierarchy import Concept, ConceptHierarchy
from .rational import as_fraction, as_pair


@dataclass(frozen=True)
class SupportParams:
    r: Fraction
    f: Fraction = Fraction(0)

    def __post_init__(self):
        object.__setattr__(self, "r", as_fraction(self.r))
        object.__setattr__(self, "f", as_fraction(self.f))
        if not 0 <= self.r <= 1:
            raise ValueError(f"r must lie in [0, 1], got {self.r}")
        if self.f < 0:
            raise ValueError(f"f must be nonnegative, got {self.f}")


def _base(h: ConceptHierarchy, inputs: Iterable) -> frozenset:
    return frozenset(Concept(*c) for c in inputs if Concept(*c) in h and Concept(*c).level == 0)


def supp_upward(h: ConceptHierarchy, inputs: Iterable, r) -> list[frozenset]:
    """Per-level upward support sets S(0..lmax)."""
    need = as_fraction(r) * h.k
    sets = [_base(h, inputs)]
    for lvl in h.levels[1:]:
        below = sets[-1]
        sets.append(frozenset(c for c in lvl if sum(x in below for x in h.children[c]) >= need))
    return sets


@dataclass(frozen=True)
class SupportTrace:
    params: SupportParams
    input: frozenset
    sets: tuple  # sets[t][level]
    lmax: int

    @property
    def horizon(self) -> int:
        return len(self.sets) - 1

    def at(self, level: int, t: int) -> frozenset:
        """S(level, t); times past the horizon return the fixpoint."""
        return self.sets[min(t, self.horizon)][level]

    def active(self, t: int) -> frozenset:
        """Union over levels of S(level, t)."""
        return frozenset().union(*self.sets[min(t, self.horizon)])

    def final(self, level: int) -> frozenset:
        return self.sets[-1][level]

    @property
    def support(self) -> frozenset:
        return self.active(self.horizon)

    @property
    def stabilized_at(self) -> tuple:
        return tuple(stabilization_time(self, lvl) for lvl in range(self.lmax + 1))

    def first_time(self, c) -> int | None:
        c = Concept(*c)
        for t, config in enumerate(self.sets):
            if c in config[c.level]:
                return t
        return None

    def to_dict(self) -> dict:
        def ids(s):
            return [[c.level, c.index] for c in sorted(s)]

        return {
            "r": as_pair(self.params.r),
            "f": as_pair(self.params.f),
            "B": ids(self.input),
            "sets": [
                {"level": lvl, "t": t, "concepts": ids(config[lvl])}
                for t, config in enumerate(self.sets)
                for lvl in range(self.lmax + 1)
            ],
            "stabilized_at": list(self.stabilized_at),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def supp_bidirectional(h: ConceptHierarchy, inputs: Iterable, r, f) -> SupportTrace:
    """Iterate the bidirectional support recurrence until the whole configuration repeats."""
    params = SupportParams(r, f)
    need = params.r * h.k
    base = _base(h, inputs)
    config = (base,) + tuple(frozenset() for _ in range(h.lmax))
    history = [config]
    while True:
        prev = history[-1]
        nxt = [base]
        for lvl in range(1, h.lmax + 1):
            below = prev[lvl - 1]
            above = prev[lvl + 1] if lvl < h.lmax else frozenset()
            grown = set(prev[lvl])
            for c in h.levels[lvl]:
                if c in grown:
                    continue
                up = sum(x in below for x in h.children[c])
                down = sum(p in above for p in h.parents[c])
                if up + params.f * down >= need:
                    grown.add(c)
            nxt.append(frozenset(grown))
        nxt = tuple(nxt)
        if nxt == prev:
            break
        history.append(nxt)
    return SupportTrace(params, base, tuple(history), h.lmax)


def stabilization_time(trace: SupportTrace, level: int) -> int:
    """Least t with S(level, t) equal to its final value."""
    final = trace.final(level)
    for t in range(trace.horizon + 1):
        if trace.sets[t][level] == final:
            return t
    return trace.horizon


@dataclass(frozen=True)
class MonotonicityReport:
    counterexamples: tuple  # (relation, concept)

    @property
    def ok(self) -> bool:
        return not self.counterexamples


def check_monotonicity(h: ConceptHierarchy, inputs, rs, fs) -> MonotonicityReport:
    """Support shrinks as r grows and grows as f grows."""
    r, r2 = map(as_fraction, rs)
    f, f2 = map(as_fraction, fs)
    if r > r2 or f > f2:
        raise ValueError("need r <= r' and f <= f'")
    bad = []

    def subset(name, small, big):
        bad.extend((name, c) for c in sorted(small - big))

    up_lo = frozenset().union(*supp_upward(h, inputs, r))
    up_hi = frozenset().union(*supp_upward(h, inputs, r2))
    subset("supp_r' within supp_r", up_hi, up_lo)
    bi = supp_bidirectional(h, inputs, r, f).support
    subset("supp_{r',f} within supp_{r,f}", supp_bidirectional(h, inputs, r2, f).support, bi)
    subset("supp_{r,f} within supp_{r,f'}", bi, supp_bidirectional(h, inputs, r, f2).support)
    return MonotonicityReport(tuple(bad))


def node_and_parent_violations(h: ConceptHierarchy, inputs, r, f) -> list[tuple[int, Concept]]:
    """On trees: any c in S(t) whose parent is not in S(t) must already be upward-supported."""
    trace = supp_bidirectional(h, inputs, r, f)
    upward = frozenset().union(*supp_upward(h, inputs, r))
    bad = []
    for t in range(trace.horizon + 1):
        active = trace.active(t)
        for c in active:
            if not any(p in active for p in h.parents[c]) and c not in upward:
                bad.append((t, c))
    return sorted(bad)


@dataclass(frozen=True)
class TimeBoundReport:
    stabilized_at: tuple
    bounds: tuple  # per-level bound that applies, or None
    horizon: int

    @property
    def ok(self) -> bool:
        return all(b is None or t <= b for t, b in zip(self.stabilized_at, self.bounds))


def time_bound_report(h: ConceptHierarchy, trace: SupportTrace) -> TimeBoundReport:
    """Per-level stabilization versus ℓ (no feedback) or 2·lmax−ℓ (trees)."""
    if trace.params.f == 0:
        bounds = tuple(range(h.lmax + 1))
    elif h.is_tree:
        bounds = tuple(2 * h.lmax - lvl for lvl in range(h.lmax + 1))
    else:
        bounds = tuple(None for _ in range(h.lmax + 1))
    return TimeBoundReport(trace.stabilized_at, bounds, trace.horizon)
