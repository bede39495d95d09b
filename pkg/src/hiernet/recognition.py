"""Recognition networks built from a hierarchy, and verdicts checked against the support oracles."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import InfeasibleParameters, PlacementError
from .hierarchy import Concept, ConceptHierarchy, lower_bound_chain
from .network import (
    LayeredNetwork,
    NetworkParams,
    OneShot,
    Persistent,
    Stochastic,
    run,
    sigmoid_bounds,
)
from .pool import pmap
from .rational import as_fraction, as_pair, derive_seed
from .support import supp_bidirectional, supp_upward


def _number(x):
    """Keep floats as floats (irrational scalings), everything else exact."""
    return x if isinstance(x, float) else as_fraction(x)


@dataclass(frozen=True)
class RecognitionParams:
    r1: Fraction
    r2: Fraction
    f: Fraction = Fraction(0)
    w1: Fraction | float = Fraction(1)
    w2: Fraction | float = Fraction(1)
    b: int = 2  # off-edge weights lie in [0, 1/k^(lmax+b)]
    s: Fraction | float = Fraction(1)  # scaling of child weights and threshold

    def __post_init__(self):
        for name in ("r1", "r2", "f"):
            object.__setattr__(self, name, as_fraction(getattr(self, name)))
        for name in ("w1", "w2", "s"):
            object.__setattr__(self, name, _number(getattr(self, name)))
        if not (0 <= self.r1 <= self.r2 <= 1 and self.r2 > 0):
            raise InfeasibleParameters(f"need 0 <= r1 <= r2 <= 1 and r2 > 0, got r1={self.r1}, r2={self.r2}")
        if self.f < 0:
            raise InfeasibleParameters(f"f must be nonnegative, got {self.f}")
        if not 0 <= self.w1 <= self.w2:
            raise InfeasibleParameters(f"need 0 <= w1 <= w2, got w1={self.w1}, w2={self.w2}")
        if self.b < 1:
            raise InfeasibleParameters(f"b must be a positive integer, got {self.b}")
        if not 0 < self.s <= 1:
            raise InfeasibleParameters(f"s must lie in (0, 1], got {self.s}")

    def tau(self, k: int):
        return (self.r1 + self.r2) * k * self.s / 2

    def to_dict(self) -> dict:
        def enc(x):
            return float(x) if isinstance(x, float) else as_pair(x)

        return {
            "r1": as_pair(self.r1), "r2": as_pair(self.r2), "f": as_pair(self.f),
            "w1": enc(self.w1), "w2": enc(self.w2), "b": self.b, "s": enc(self.s),
        }


def feasibility(params: RecognitionParams, k: int, feedback: bool = False) -> dict:
    """Slack of each weight-interval condition; nonnegative (strictly positive for tau) means satisfied."""
    p = params
    tau = p.tau(k)
    res = {"r2(2w1-1) - r1": p.r2 * (2 * p.w1 - 1) - p.r1}
    if feedback:
        if p.b < 2 or k < 2:
            raise InfeasibleParameters(f"feedback weight bounds need b >= 2 and k >= 2, got b={p.b}, k={k}")
        res["r2 - r1(2w2-1) - 2/k^(b-1)"] = p.r2 - p.r1 * (2 * p.w2 - 1) - Fraction(2, k ** (p.b - 1))
        res["tau - 1/k^(b-2)"] = tau - Fraction(1, k ** (p.b - 2))
    else:
        res["r2 - r1(2w2-1) - 2/(k^b s)"] = p.r2 - p.r1 * (2 * p.w2 - 1) - 2 / (k ** p.b * p.s)
        res["tau - 1/k^(b-1)"] = tau - Fraction(1, k ** (p.b - 1))
    return res


def _require_feasible(params, k, feedback=False):
    res = feasibility(params, k, feedback)
    failed = [name for name, slack in res.items() if (slack <= 0 if name.startswith("tau") else slack < 0)]
    if failed:
        detail = ", ".join(f"{name} = {float(res[name]):.6g}" for name in res)
        raise InfeasibleParameters(f"weight conditions fail ({', '.join(failed)}): {detail}", res)
    return res


class RepMap:
    """Bijection between concepts and (layer, neuron) pairs."""

    def __init__(self, forward: dict):
        self.forward = {Concept(*c): tuple(v) for c, v in forward.items()}
        self.inverse = {}
        for c, v in self.forward.items():
            if v[0] != c.level:
                raise ValueError(f"{c} placed in layer {v[0]}")
            if v in self.inverse:
                raise ValueError(f"neuron {v} represents both {self.inverse[v]} and {c}")
            self.inverse[v] = c

    @classmethod
    def placed(cls, h: ConceptHierarchy, n: int) -> RepMap:
        """Concept (level, i) sits at neuron i of layer level."""
        for c in h.concepts:
            if c.index >= n:
                raise PlacementError(f"level {c.level} needs neuron {c.index}, layers have n={n}")
        return cls({c: (c.level, c.index) for c in h.concepts})

    def rep(self, c) -> tuple[int, int]:
        return self.forward[Concept(*c)]

    def concept_at(self, layer: int, neuron: int):
        return self.inverse.get((layer, neuron))

    def rep_mask(self, layers: int, n: int) -> np.ndarray:
        mask = np.zeros((layers + 1, n), dtype=bool)
        for layer, idx in self.inverse:
            mask[layer, idx] = True
        return mask

    def to_dict(self) -> list:
        return [[c.level, c.index, v[0], v[1]] for c, v in sorted(self.forward.items())]


def child_edges(h: ConceptHierarchy, repmap: RepMap, n: int) -> np.ndarray:
    """mask[l][rep(c), rep(child)] for each concept c at level l >= 1."""
    mask = np.zeros((h.lmax + 1, n, n), dtype=bool)
    for c in h.concepts:
        if c.level == 0 or c not in repmap.forward:
            continue
        _, v = repmap.rep(c)
        for child in h.children[c]:
            if child in repmap.forward:
                mask[c.level, v, repmap.rep(child)[1]] = True
    return mask


def parent_edges(h: ConceptHierarchy, repmap: RepMap, n: int) -> np.ndarray:
    """mask[l][rep(c), rep(parent)] for each concept c at level l < lmax."""
    up = child_edges(h, repmap, n)
    down = np.zeros_like(up)
    for l in range(h.lmax):
        down[l] = up[l + 1].T
    return down


def build_exact(h: ConceptHierarchy, r1, r2) -> tuple[LayeredNetwork, RepMap]:
    """Weight 1 on child-rep to parent-rep edges, 0 elsewhere, threshold (r1+r2)k/2."""
    p = RecognitionParams(r1, r2)
    n = h.params.n
    repmap = RepMap.placed(h, n)
    net = LayeredNetwork(NetworkParams(n, h.lmax, p.tau(h.k)), grid=Fraction(1))
    net.uweight[child_edges(h, repmap, n)] = 1.0
    return net, repmap


def build_feedback(h: ConceptHierarchy, r1, r2, f) -> tuple[LayeredNetwork, RepMap]:
    """Exact network plus downward weight f on parent-rep to child-rep edges."""
    p = RecognitionParams(r1, r2, f)
    n = h.params.n
    repmap = RepMap.placed(h, n)
    grid = Fraction(1, p.f.denominator)
    net = LayeredNetwork(NetworkParams(n, h.lmax, p.tau(h.k), feedback=True), grid=grid)
    net.uweight[child_edges(h, repmap, n)] = 1.0
    net.dweight[parent_edges(h, repmap, n)] = float(p.f)
    return net, repmap


def _off_edge_cap(h, b) -> float:
    return 1.0 / h.k ** (h.lmax + b)


def build_scaled(h: ConceptHierarchy, params: RecognitionParams, seed: int = 0) -> tuple[LayeredNetwork, RepMap]:
    """Child weights uniform in [w1 s, w2 s], other edges uniform in [0, 1/k^(lmax+b)]."""
    _require_feasible(params, h.k)
    n = h.params.n
    repmap = RepMap.placed(h, n)
    rng = np.random.default_rng(seed)
    net = LayeredNetwork(NetworkParams(n, h.lmax, float(params.tau(h.k))))
    cap = _off_edge_cap(h, params.b)
    mask = child_edges(h, repmap, n)
    lo, hi = float(params.w1 * params.s), float(params.w2 * params.s)
    for l in range(1, h.lmax + 1):
        w = rng.uniform(0.0, cap, size=(n, n))
        w[mask[l]] = rng.uniform(lo, hi, size=int(mask[l].sum()))
        net.uweight[l] = w
    return net, repmap


def build_approx(h: ConceptHierarchy, params: RecognitionParams, seed: int = 0) -> tuple[LayeredNetwork, RepMap]:
    """Unscaled approximate weights; ``params.s`` must be 1."""
    if params.s != 1:
        raise InfeasibleParameters("build_approx takes s = 1; use build_scaled")
    return build_scaled(h, params, seed)


def build_feedback_approx(h: ConceptHierarchy, params: RecognitionParams, seed: int = 0) -> tuple[LayeredNetwork, RepMap]:
    """Feedback network with upward child weights in [w1, w2], downward in [f w1, f w2], off-edges tiny."""
    if params.s != 1:
        raise InfeasibleParameters("feedback approximate weights are unscaled (s = 1)")
    _require_feasible(params, h.k, feedback=True)
    n = h.params.n
    repmap = RepMap.placed(h, n)
    rng = np.random.default_rng(seed)
    net = LayeredNetwork(NetworkParams(n, h.lmax, float(params.tau(h.k)), feedback=True))
    cap = _off_edge_cap(h, params.b)
    up_mask = child_edges(h, repmap, n)
    down_mask = parent_edges(h, repmap, n)
    w1, w2, f = float(params.w1), float(params.w2), float(params.f)
    for l in range(1, h.lmax + 1):
        w = rng.uniform(0.0, cap, size=(n, n))
        w[up_mask[l]] = rng.uniform(w1, w2, size=int(up_mask[l].sum()))
        net.uweight[l] = w
    for l in range(h.lmax):
        w = rng.uniform(0.0, cap, size=(n, n))
        w[down_mask[l]] = rng.uniform(f * w1, f * w2, size=int(down_mask[l].sum()))
        net.dweight[l] = w
    return net, repmap


# -- verdicts ----------------------------------------------------------------

@dataclass(frozen=True)
class FeedForward:
    r1: Fraction
    r2: Fraction


@dataclass(frozen=True)
class Feedback:
    r1: Fraction
    r2: Fraction
    f: Fraction
    horizon: int | None = None  # default k^(lmax+1)


def input_vector(n: int, inputs) -> np.ndarray:
    vec = np.zeros(n, dtype=bool)
    for c in inputs:
        vec[Concept(*c).index] = True
    return vec


def default_horizon(h: ConceptHierarchy) -> int:
    return h.k ** (h.lmax + 1)


@dataclass(frozen=True)
class ConceptRecord:
    must_fire_ok: bool
    must_not_fire_ok: bool
    first_fire: int | None
    required: str  # "fire", "silent" or "free"


@dataclass(frozen=True)
class RecognitionVerdict:
    mode: str
    records: dict  # Concept -> ConceptRecord
    stray: tuple  # (layer, neuron, first time) of non-rep neurons that fired
    labels: dict = field(default_factory=dict, compare=False)

    @property
    def failures(self) -> list:
        return [c for c, rec in sorted(self.records.items()) if not (rec.must_fire_ok and rec.must_not_fire_ok)]

    @property
    def ok(self) -> bool:
        return not self.failures

    @property
    def non_rep_silent(self) -> bool:
        return not self.stray

    def fired(self) -> set:
        return {c for c, rec in self.records.items() if rec.first_fire is not None}

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "summary": {"recognition": self.ok, "non_rep_silent": self.non_rep_silent},
            "concepts": [
                {
                    "level": c.level,
                    "index": c.index,
                    **({"label": self.labels[c]} if c in self.labels else {}),
                    "required": rec.required,
                    "must_fire_ok": rec.must_fire_ok,
                    "must_not_fire_ok": rec.must_not_fire_ok,
                    "first_fire": rec.first_fire,
                }
                for c, rec in sorted(self.records.items())
            ],
            "stray": [list(s) for s in self.stray],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _stray(trace, repmap: RepMap, layers: int, n: int) -> tuple:
    mask = repmap.rep_mask(layers, n)
    out = []
    for l in range(1, layers + 1):
        first = trace.first_fire_times(l)
        for idx in np.flatnonzero((first >= 0) & ~mask[l]):
            out.append((l, int(idx), int(first[idx])))
    return tuple(out)


def check_recognition(net: LayeredNetwork, repmap: RepMap, h: ConceptHierarchy, inputs, mode) -> RecognitionVerdict:
    """Compare rep firing with the support oracle for one input presented at time 0."""
    inputs = frozenset(Concept(*c) for c in inputs)
    vec = input_vector(net.n, inputs)
    records = {}
    if isinstance(mode, FeedForward):
        must = frozenset().union(*supp_upward(h, inputs, mode.r2))
        allowed = frozenset().union(*supp_upward(h, inputs, mode.r1))
        trace = run(net, OneShot(vec), net.layers_max)
        for c in h.concepts:
            rep = repmap.forward.get(c)
            on_time = rep is not None and trace.fired(*rep, c.level)
            records[c] = ConceptRecord(
                c not in must or on_time,
                c in allowed or not on_time,
                None if rep is None else trace.first_fire(*rep),
                "fire" if c in must else ("free" if c in allowed else "silent"),
            )
        name = f"ff(r1={mode.r1}, r2={mode.r2})"
    elif isinstance(mode, Feedback):
        horizon = mode.horizon if mode.horizon is not None else default_horizon(h)
        must = supp_bidirectional(h, inputs, mode.r2, mode.f).support
        allowed = supp_bidirectional(h, inputs, mode.r1, mode.f).support
        trace = run(net, Persistent(vec), horizon, stop_on_repeat=True)
        for c in h.concepts:
            rep = repmap.forward.get(c)
            first = None if rep is None else trace.first_fire(*rep)
            records[c] = ConceptRecord(
                c not in must or first is not None,
                c in allowed or first is None,
                first,
                "fire" if c in must else ("free" if c in allowed else "silent"),
            )
        name = f"fb(r1={mode.r1}, r2={mode.r2}, f={mode.f}, horizon={horizon})"
    else:
        raise TypeError(f"unknown recognition mode {mode!r}")
    return RecognitionVerdict(name, records, _stray(trace, repmap, net.layers_max, net.n), dict(h.labels))


def observed_ff_sets(net: LayeredNetwork, repmap: RepMap, h: ConceptHierarchy, inputs) -> list[frozenset]:
    """Per level, the concepts whose reps fire exactly level steps after a one-shot input."""
    trace = run(net, OneShot(input_vector(net.n, inputs)), net.layers_max)
    return [
        frozenset(c for c in lvl if trace.fired(*repmap.rep(c), c.level))
        for lvl in h.levels
    ]


def observed_fb_sets(net: LayeredNetwork, repmap: RepMap, h: ConceptHierarchy, inputs, horizon: int | None = None):
    """Per time, the concepts whose reps fire under persistent input, plus the execution trace."""
    horizon = default_horizon(h) if horizon is None else horizon
    trace = run(net, Persistent(input_vector(net.n, inputs)), horizon, stop_on_repeat=True)
    per_time = []
    for t in range(trace.last_time + 1):
        state = trace.firing[t]
        per_time.append(frozenset(c for c in h.concepts if state[repmap.rep(c)]))
    return per_time, trace


@dataclass(frozen=True)
class NonInterferenceReport:
    skipped: str | None
    pairs_checked: int
    violations: tuple  # (concept shown, concept whose rep fired)

    @property
    def ok(self) -> bool:
        return not self.violations


def check_overlap_noninterference(net: LayeredNetwork, repmap: RepMap, h: ConceptHierarchy, r1) -> NonInterferenceReport:
    """Showing one concept never fires the rep of a different same-level concept on time."""
    r1 = as_fraction(r1)
    if not h.params.o < r1:
        return NonInterferenceReport(f"hypothesis o < r1 fails (o={h.params.o}, r1={r1})", 0, ())
    bad, pairs = [], 0
    for lvl in h.levels[1:]:
        for shown in lvl:
            trace = run(net, OneShot(input_vector(net.n, h.leaves(shown))), net.layers_max)
            for other in lvl:
                if other == shown:
                    continue
                pairs += 1
                if trace.fired(*repmap.rep(other), other.level):
                    bad.append((shown, other))
    return NonInterferenceReport(None, pairs, tuple(bad))


@dataclass(frozen=True)
class TimingReport:
    kind: str
    ok: bool
    details: dict


def check_timing(net: LayeredNetwork, repmap: RepMap, h: ConceptHierarchy, inputs, kind: str, r2=None, f=None) -> TimingReport:
    """Firing-time bounds under persistent input presented at time 0."""
    vec = input_vector(net.n, inputs)
    if kind == "tree_2lmax":
        bound = 2 * h.lmax
        trace = run(net, Persistent(vec), bound)
        supported = supp_bidirectional(h, inputs, r2, f).support
        late = {}
        for c in sorted(supported):
            first = trace.first_fire(*repmap.rep(c))
            if first is None or first > bound:
                late[str(c)] = first
        return TimingReport(kind, not late, {"bound": bound, "late": late, "checked": len(supported)})
    if kind == "general_upper":
        bound = default_horizon(h)
        trace = run(net, Persistent(vec), bound + 1, stop_on_repeat=True)
        ok = trace.stabilized_at is not None and trace.stabilized_at <= bound
        return TimingReport(kind, ok, {"bound": bound, "stabilized_at": trace.stabilized_at})
    if kind == "lower_bound_schedule":
        chain = lower_bound_chain(h)
        m = len(chain)
        trace = run(net, Persistent(vec), default_horizon(h), stop_on_repeat=True)
        observed = [trace.first_fire(*repmap.rep(c)) for c in chain]
        expected = [2 * (i + 1) for i in range(m)]
        return TimingReport(
            kind,
            observed == expected,
            {
                "m": m,
                "observed": observed,
                "expected": expected,
                "proof_schedule_last": 2 * m,
                "printed_bound": 2 * (h.k ** h.lmax - 2),
                "observed_last": observed[-1],
                "stabilized_at": trace.stabilized_at,
            },
        )
    raise ValueError(f"unknown timing kind {kind!r}")


# -- stochastic firing -------------------------------------------------------

@dataclass(frozen=True)
class StochasticReport:
    bounds: object  # SigmoidBounds
    trials: int
    must_fire_rate: float
    must_not_fire_rate: float
    target: float
    tolerance: float  # three binomial standard deviations at the target rate
    must_fire: tuple
    must_not_fire: tuple

    @property
    def must_fire_ok(self) -> bool:
        return self.must_fire_rate >= self.target - self.tolerance

    @property
    def must_not_fire_ok(self) -> bool:
        return self.must_not_fire_rate >= self.target - self.tolerance

    @property
    def ok(self) -> bool:
        return self.must_fire_ok and self.must_not_fire_ok

    def to_dict(self) -> dict:
        return {
            "bounds": self.bounds._asdict(),
            "trials": self.trials,
            "must_fire_rate": self.must_fire_rate,
            "must_not_fire_rate": self.must_not_fire_rate,
            "target": self.target,
            "tolerance": self.tolerance,
            "must_fire_ok": self.must_fire_ok,
            "must_not_fire_ok": self.must_not_fire_ok,
            "must_fire": [[c.level, c.index] for c in self.must_fire],
            "must_not_fire": [[c.level, c.index] for c in self.must_not_fire],
        }


def stochastic_network(h: ConceptHierarchy, lam: float, bias: float, seed: int) -> tuple[LayeredNetwork, RepMap]:
    """Unit child-edge weights with sigmoid firing around ``bias``."""
    base, repmap = build_exact(h, 1, 1)
    params = NetworkParams(h.params.n, h.lmax, base.params.tau, activation=Stochastic(lam, bias, seed))
    return LayeredNetwork(params, base.uweight), repmap


def _stochastic_trial(job):
    h, vec, lam, bias, seed, must, silent = job
    net, repmap = stochastic_network(h, lam, bias, seed)
    trace = run(net, OneShot(vec), h.lmax)
    fired = lambda c: trace.fired(*repmap.rep(c), c.level)  # noqa: E731
    return all(fired(c) for c in must), not any(fired(c) for c in silent)


def stochastic_recognition(h: ConceptHierarchy, inputs, lam: float, bias: float, delta: float,
                           trials: int, seed: int, workers: int = 1) -> StochasticReport:
    """Monte-Carlo rates of full must-fire and must-not-fire success under sigmoid firing."""
    bounds = sigmoid_bounds(lam, bias, delta, h.k, h.lmax)
    inputs = frozenset(Concept(*c) for c in inputs)
    must = tuple(sorted(c for c in frozenset().union(*supp_upward(h, inputs, bounds.r2)) if c.level > 0))
    allowed = frozenset().union(*supp_upward(h, inputs, bounds.r1))
    silent = tuple(c for c in h.concepts if c.level > 0 and c not in allowed)
    vec = input_vector(h.params.n, inputs)
    jobs = [(h, vec, lam, bias, derive_seed(seed, f"trial/{i}"), must, silent) for i in range(trials)]
    outcomes = pmap(_stochastic_trial, jobs, workers)
    target = 1 - delta
    return StochasticReport(
        bounds,
        trials,
        sum(o[0] for o in outcomes) / trials,
        sum(o[1] for o in outcomes) / trials,
        target,
        3 * math.sqrt(delta * (1 - delta) / trials),
        must,
        silent,
    )
