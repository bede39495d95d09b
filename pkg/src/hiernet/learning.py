"""Training: σ-bottom-up schedules, Oja learning with winner-take-all engagement, feedback pass, audits."""
from __future__ import annotations

import math
import random
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from .errors import WTAContractError
from .hierarchy import Concept, ConceptHierarchy
from .network import LayeredNetwork, NetworkParams, NetworkState, OneShot, step
from .rational import as_fraction, as_pair
from .recognition import RepMap, child_edges, input_vector, parent_edges


@dataclass(frozen=True)
class LearningConfig:
    r1: Fraction
    r2: Fraction
    sigma: int
    eta: float
    w_init: float
    tau_learn: float
    epsilon: Fraction
    wbar: float
    noise_p: Fraction | None = None
    delta_learn: float | None = None
    f: Fraction = Fraction(0)
    wta_mode: str = "revised"
    b: int = 2  # off-edge target exponent

    @classmethod
    def for_hierarchy(cls, h: ConceptHierarchy, r1, r2, sigma: int, *, noise_p=None, f=0,
                      wta_mode: str = "revised", eta: float | None = None) -> LearningConfig:
        r1, r2, f = as_fraction(r1), as_fraction(r2), as_fraction(f)
        k, lmax = h.k, h.lmax
        if not 0 < r1 < r2 <= 1:
            raise ValueError(f"need 0 < r1 < r2 <= 1, got {r1}, {r2}")
        if sigma < 1:
            raise ValueError(f"sigma must be >= 1, got {sigma}")
        if wta_mode not in ("basic", "revised"):
            raise ValueError(f"unknown WTA mode {wta_mode!r}")
        p = None if noise_p is None else as_fraction(noise_p)
        if p is not None:
            if not 0 < p <= 1:
                raise ValueError(f"noise_p must lie in (0, 1], got {p}")
            if wta_mode == "revised" and not h.params.o < p:
                raise ValueError(f"noisy revised WTA needs o < p, got o={h.params.o}, p={p}")
        wbar = 1 / math.sqrt(k if p is None else p * k + 1 - p)
        return cls(
            r1=r1,
            r2=r2,
            sigma=sigma,
            eta=1 / (4 * k) if eta is None else eta,
            w_init=1 / k ** (lmax + 1),
            tau_learn=learning_threshold(r1, r2, k, wbar),
            epsilon=(r2 - r1) / (r1 + r2),
            wbar=wbar,
            noise_p=p,
            delta_learn=None if p is None else float(r2 - r1) * wbar / 25,
            f=f,
            wta_mode=wta_mode,
        )

    def to_dict(self) -> dict:
        return {
            "r1": as_pair(self.r1), "r2": as_pair(self.r2), "sigma": self.sigma, "eta": self.eta,
            "w_init": self.w_init, "tau_learn": self.tau_learn, "epsilon": as_pair(self.epsilon),
            "wbar": self.wbar, "noise_p": None if self.noise_p is None else as_pair(self.noise_p),
            "delta_learn": self.delta_learn, "f": as_pair(self.f), "wta_mode": self.wta_mode, "b": self.b,
        }


def learning_threshold(r1, r2, k: int, wbar: float) -> float:
    return float(r1 + r2) * k * wbar / 2


def noisy_margins(r1, r2, k: int, p) -> tuple[float, float]:
    """Slack of the must-fire and must-not-fire inequalities for noisy learned weights."""
    r1, r2, p = float(as_fraction(r1)), float(as_fraction(r2)), float(as_fraction(p))
    wbar = 1 / math.sqrt(p * k + 1 - p)
    delta = (r2 - r1) * wbar / 25
    threshold = (r1 + r2) * k * wbar / 2
    return r2 * k * (wbar - delta) - threshold, threshold - r1 * k * (wbar + delta)


# -- schedules ---------------------------------------------------------------

@dataclass(frozen=True)
class TrainingSchedule:
    order: tuple  # Concepts in showing order
    sigma: int

    def __len__(self):
        return len(self.order)

    def __iter__(self):
        return iter(self.order)


def make_schedule(h: ConceptHierarchy, sigma: int, seed: int) -> TrainingSchedule:
    """Each concept shown sigma times, drawn at random among concepts whose children are all done."""
    if sigma < 1:
        raise ValueError(f"sigma must be >= 1, got {sigma}")
    rng = random.Random(seed)
    remaining = {c: sigma for c in h.concepts}
    waiting = {c: len(h.children[c]) for c in h.concepts}
    ready = [c for c in h.concepts if waiting[c] == 0]
    order = []
    while ready:
        i = rng.randrange(len(ready))
        c = ready[i]
        order.append(c)
        remaining[c] -= 1
        if remaining[c] == 0:
            ready[i] = ready[-1]
            ready.pop()
            for parent in h.parents[c]:
                waiting[parent] -= 1
                if waiting[parent] == 0:
                    ready.append(parent)
    return TrainingSchedule(tuple(order), sigma)


def is_sigma_bottom_up(schedule, h: ConceptHierarchy, sigma: int) -> bool:
    """Every concept shown at least sigma times, never before each child's sigma-th showing."""
    seen = Counter()
    for c in schedule:
        c = Concept(*c)
        if c not in h:
            return False
        if any(seen[child] < sigma for child in h.children[c]):
            return False
        seen[c] += 1
    return all(seen[c] >= sigma for c in h.concepts)


# -- Oja and winner-take-all -------------------------------------------------

def oja_step(weights, x, eta: float) -> np.ndarray:
    """w + eta * pot * (x - pot * w) with pot = w . x."""
    w = np.asarray(weights, dtype=float)
    x = np.asarray(x, dtype=float)
    pot = float(w @ x)
    return w + eta * pot * (x - pot * w)


def wta_select(potentials, weights, x, mode: str, o, k: int, w_init: float) -> tuple[int, int]:
    """Index of the engaged neuron and the number of candidates considered.

    The revised rule only admits neurons with at least floor(o k) + 1 firing
    neighbours whose edge weight is still >= w_init. Ties go to the lowest index.
    """
    pots = np.asarray(potentials, dtype=float)
    if mode == "basic":
        return int(np.argmax(pots)), pots.size
    if mode != "revised":
        raise ValueError(f"unknown WTA mode {mode!r}")
    need = math.floor(as_fraction(o) * k) + 1
    x = np.asarray(x, dtype=bool)
    qualifying = ((np.asarray(weights) >= w_init) & x[None, :]).sum(axis=1)
    candidates = np.flatnonzero(qualifying >= need)
    if candidates.size == 0:
        raise WTAContractError(f"no neuron has >= {need} qualifying firing neighbours")
    best = candidates[np.argmax(pots[candidates])]
    return int(best), int(candidates.size)


# -- engagement log ------------------------------------------------------------

class Engagement(NamedTuple):
    showing: int
    concept: Concept
    neuron: int
    potential: float
    candidates: int


@dataclass
class EngagementLog:
    entries: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)  # (showing, upward weight tensor)

    def append(self, entry: Engagement):
        self.entries.append(entry)

    def __len__(self):
        return len(self.entries)

    def assignments(self) -> dict:
        """First neuron engaged for each concept."""
        out = {}
        for e in self.entries:
            out.setdefault(e.concept, (e.concept.level, e.neuron))
        return out

    def violations(self) -> list[str]:
        """Breaches of bijectivity, fresh-first and repeat-same engagement."""
        bad = []
        owner: dict = {}
        mine: dict = {}
        for e in self.entries:
            key = (e.concept.level, e.neuron)
            if e.concept not in mine:
                if key in owner:
                    bad.append(f"showing {e.showing}: first showing of {e.concept} engaged neuron {key} of {owner[key]}")
                else:
                    owner[key] = e.concept
                mine[e.concept] = key
            elif mine[e.concept] != key:
                bad.append(f"showing {e.showing}: {e.concept} engaged {key}, expected {mine[e.concept]}")
        return bad

    def to_list(self) -> list:
        return [
            {"showing": e.showing, "concept": [e.concept.level, e.concept.index], "neuron": e.neuron,
             "potential": e.potential, "candidates": e.candidates}
            for e in self.entries
        ]


class TrainingResult(NamedTuple):
    net: LayeredNetwork
    repmap: RepMap
    log: EngagementLog


def init_network(h: ConceptHierarchy, config: LearningConfig, feedback: bool = False,
                 n: int | None = None) -> LayeredNetwork:
    """All upward (and downward) weights at w_init, threshold tau_learn."""
    n = h.params.n if n is None else n
    net = LayeredNetwork(NetworkParams(n, h.lmax, config.tau_learn, feedback=feedback))
    net.uweight[1:] = config.w_init
    if feedback:
        net.dweight[:-1] = config.w_init
    return net


def _wave(net: LayeredNetwork, presented: np.ndarray, level: int, tau: float):
    """Firing of layers 0..level-1 and potentials of layer ``level`` after an upward wave."""
    x = presented
    for l in range(1, level):
        x = net.uweight[l] @ x >= tau
    return x, net.uweight[level] @ x


def _engage(net, config, h, c, presented, showing, log):
    x, pots = _wave(net, presented, c.level, config.tau_learn)
    weights = net.uweight[c.level]
    u, n_cand = wta_select(pots, weights, x, config.wta_mode, h.params.o, h.k, config.w_init)
    weights[u] = oja_step(weights[u], x, config.eta)
    log.append(Engagement(showing, c, u, float(pots[u]), n_cand))


def _finish(net, h, log) -> TrainingResult:
    assigned = {c: (0, c.index) for c in h.levels[0]}
    taken = set(assigned.values())
    for c, v in log.assignments().items():
        if v not in taken:
            assigned[c] = v
            taken.add(v)
    return TrainingResult(net, RepMap(assigned), log)


def train_noise_free(net: LayeredNetwork, h: ConceptHierarchy, schedule, config: LearningConfig,
                     snapshot_every: int | None = None) -> TrainingResult:
    """Show leaves(c) for each scheduled concept and apply one Oja update to the engaged neuron.

    Level-0 showings train nothing. Engagement conflicts are recorded in the
    log (see ``EngagementLog.violations``) rather than raised.
    """
    net = net.copy()
    log = EngagementLog()
    for i, c in enumerate(schedule):
        if c.level > 0:
            _engage(net, config, h, c, input_vector(net.n, h.leaves(c)), i, log)
        _snapshot(net, log, i, snapshot_every)
    return _finish(net, h, log)


def _snapshot(net, log, showing, every):
    if every and (showing + 1) % every == 0:
        log.snapshots.append((showing, net.uweight.copy()))


def sample_presentation(h: ConceptHierarchy, c: Concept, p, rng: random.Random) -> set:
    """Leaves reached by keeping ceil(p k) random children at every internal node below c."""
    keep = math.ceil(as_fraction(p) * h.k)
    if c.level == 0:
        return {c}
    out = set()
    for child in rng.sample(h.children[c], keep):
        out |= sample_presentation(h, child, p, rng)
    return out


def train_noisy(net: LayeredNetwork, h: ConceptHierarchy, schedule, config: LearningConfig, seed: int,
                snapshot_every: int | None = None) -> TrainingResult:
    """As noise-free training, but each showing presents a freshly sampled subset of leaves."""
    if config.noise_p is None:
        raise ValueError("noisy training needs config.noise_p")
    rng = random.Random(seed)
    net = net.copy()
    log = EngagementLog()
    for i, c in enumerate(schedule):
        if c.level > 0:
            presented = sample_presentation(h, c, config.noise_p, rng)
            _engage(net, config, h, c, input_vector(net.n, presented), i, log)
        _snapshot(net, log, i, snapshot_every)
    return _finish(net, h, log)


class FeedbackResult(NamedTuple):
    net: LayeredNetwork
    repmap: RepMap
    log: EngagementLog
    pass2_violations: list
    upward_before: np.ndarray


def train_feedback(net: LayeredNetwork, h: ConceptHierarchy, schedule, config: LearningConfig,
                   seed: int = 0, shuffle: bool = False, snapshot_every: int | None = None) -> FeedbackResult:
    """Upward training, then a per-level pass setting downward weights from co-firing parents to f·w̄."""
    if net.dweight is None:
        raise ValueError("feedback training needs a network with downward weights")
    if config.noise_p is None:
        net, repmap, log = train_noise_free(net, h, schedule, config, snapshot_every)
    else:
        net, repmap, log = train_noisy(net, h, schedule, config, seed, snapshot_every)
    before = net.uweight.copy()
    target = float(config.f) * config.wbar
    touched = np.zeros_like(net.dweight, dtype=bool)
    violations = []
    order_rng = random.Random(seed)
    for level in range(1, h.lmax + 1):
        concepts = list(h.levels[level])
        if shuffle:
            order_rng.shuffle(concepts)
        for c in concepts:
            lower, upper = _show_with_feedback(net, h.leaves(c), level)
            violations.extend(_pass2_deviations(h, repmap, c, lower, upper))
            rows = np.flatnonzero(lower)
            cols = np.flatnonzero(upper)
            net.dweight[level - 1][np.ix_(rows, cols)] = target
            touched[level - 1][np.ix_(rows, cols)] = True
    net.dweight[~touched] = 0.0
    return FeedbackResult(net, repmap, log, violations, before)


def _show_with_feedback(net, leaves, level):
    """Firing of layer level-1 at time level-1 and of layer level at time level after a one-shot showing."""
    schedule = OneShot(input_vector(net.n, leaves))
    state = NetworkState.quiet(net)
    first = state.firing.copy()
    first[0] = schedule.at(0)
    states = [first]
    state = NetworkState(first, 0)
    for t in range(1, level + 1):
        state = step(net, state, schedule.at(t))
        states.append(state.firing)
    return states[level - 1][level - 1].copy(), states[level][level].copy()


def _pass2_deviations(h, repmap, c, lower, upper):
    bad = []
    if c.level - 1 > 0:
        expected = {repmap.forward[x][1] for x in h.children[c] if x in repmap.forward}
        got = set(np.flatnonzero(lower).tolist())
        if got != expected:
            bad.append(f"showing {c}: layer {c.level - 1} fired {sorted(got)}, expected children reps {sorted(expected)}")
    expected_top = {repmap.forward[c][1]} if c in repmap.forward else set()
    got_top = set(np.flatnonzero(upper).tolist())
    if got_top != expected_top:
        bad.append(f"showing {c}: layer {c.level} fired {sorted(got_top)}, expected {sorted(expected_top)}")
    return bad


# -- audits --------------------------------------------------------------------

@dataclass(frozen=True)
class ExpectedRanges:
    child: tuple
    off: tuple
    idle: tuple | None = None  # edges into never-engaged neurons
    down_child: tuple | None = None
    down_off: tuple | None = None
    rtol: float = 1e-12


def noise_free_ranges(h: ConceptHierarchy, config: LearningConfig) -> ExpectedRanges:
    sk = math.sqrt(h.k)
    eps = float(config.epsilon)
    return ExpectedRanges(
        child=(1 / ((1 + eps) * sk), 1 / sk),
        off=(0.0, 1 / h.k ** (h.lmax + config.b)),
        idle=(config.w_init, config.w_init),
    )


def noisy_ranges(h: ConceptHierarchy, config: LearningConfig) -> ExpectedRanges:
    spread = float(config.r2 - config.r1) / 25
    return ExpectedRanges(
        child=((1 - spread) * config.wbar, (1 + spread) * config.wbar),
        off=(0.0, 1 / h.k ** (2 * h.lmax)),
        idle=(config.w_init, config.w_init),
    )


def feedback_ranges(h: ConceptHierarchy, config: LearningConfig) -> ExpectedRanges:
    base = noise_free_ranges(h, config) if config.noise_p is None else noisy_ranges(h, config)
    target = float(config.f) * config.wbar
    return ExpectedRanges(base.child, base.off, base.idle, (target, target), (0.0, 0.0), base.rtol)


@dataclass(frozen=True)
class AuditReport:
    counts: dict  # class -> number of edges checked
    extremes: dict  # class -> (min, max)
    violations: tuple  # (class, layer, receiver, sender, value, lo, hi, distance)
    total_violations: int

    @property
    def ok(self) -> bool:
        return self.total_violations == 0

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "counts": self.counts,
            "extremes": {k: list(v) for k, v in self.extremes.items()},
            "total_violations": self.total_violations,
            "violations": [list(v) for v in self.violations],
        }


def weight_audit(net: LayeredNetwork, repmap: RepMap, h: ConceptHierarchy, ranges: ExpectedRanges,
                 max_listed: int = 50) -> AuditReport:
    """Classify every edge and check it against its interval."""
    n, L = net.n, net.layers_max
    reps = repmap.rep_mask(L, n)
    up_child = child_edges(h, repmap, n)
    counts, extremes, listed = {}, {}, []
    total = 0

    def check(name, layer, mask, values, bounds):
        nonlocal total
        if bounds is None or not mask.any():
            return
        lo, hi = bounds
        slack = ranges.rtol * max(abs(lo), abs(hi))
        vals = values[mask]
        counts[name] = counts.get(name, 0) + int(vals.size)
        old = extremes.get(name, (math.inf, -math.inf))
        extremes[name] = (min(old[0], float(vals.min())), max(old[1], float(vals.max())))
        dist = np.maximum(lo - slack - values, values - hi - slack)
        bad = mask & (dist > 0)
        total += int(bad.sum())
        for recv, send in zip(*np.nonzero(bad)):
            if len(listed) < max_listed:
                listed.append((name, layer, int(recv), int(send), float(values[recv, send]), lo, hi,
                               float(dist[recv, send] + slack)))

    for l in range(1, L + 1):
        w = net.uweight[l]
        engaged = np.broadcast_to(reps[l][:, None], (n, n))
        check("child", l, up_child[l], w, ranges.child)
        check("off", l, engaged & ~up_child[l], w, ranges.off)
        check("idle", l, ~engaged, w, ranges.idle)
    if net.dweight is not None:
        down_child = parent_edges(h, repmap, n)
        for l in range(L):
            w = net.dweight[l]
            check("down_child", l, down_child[l], w, ranges.down_child)
            check("down_off", l, ~down_child[l], w, ranges.down_off)
    return AuditReport(counts, extremes, tuple(listed), total)


# -- end-to-end helpers --------------------------------------------------------

def decomposition_params(h: ConceptHierarchy, config: LearningConfig):
    """Scaled-recognition parameters matched by noise-free learned weights."""
    from .recognition import RecognitionParams

    return RecognitionParams(config.r1, config.r2, config.f, w1=1 / (1 + config.epsilon), w2=1,
                             b=config.b, s=1 / math.sqrt(h.k))


def random_inputs(h: ConceptHierarchy, rng: random.Random) -> frozenset:
    """A random subset of C_0 with a random inclusion density."""
    density = rng.uniform(0.3, 1.0)
    return frozenset(c for c in h.levels[0] if rng.random() < density)


def probe_inputs(h: ConceptHierarchy, samples: int, seed: int) -> list[frozenset]:
    """leaves(c) for every concept above level 0, then ``samples`` random subsets of C_0."""
    rng = random.Random(seed)
    probes = [h.leaves(c) for lvl in h.levels[1:] for c in lvl]
    probes += [random_inputs(h, rng) for _ in range(samples)]
    return probes


def post_training_verdicts(result, h: ConceptHierarchy, config: LearningConfig, probes, feedback: bool = False):
    from .recognition import Feedback, FeedForward, check_recognition

    mode = Feedback(config.r1, config.r2, config.f) if feedback else FeedForward(config.r1, config.r2)
    return [check_recognition(result.net, result.repmap, h, b, mode) for b in probes]


@dataclass(frozen=True)
class SigmaAttempt:
    sigma: int
    ok: bool
    reason: str


def minimal_sigma(h: ConceptHierarchy, r1, r2, sigmas, seed: int, samples: int = 10, **options):
    """First sigma in ``sigmas`` whose training passes audit, engagement and recognition checks."""
    attempts = []
    for sigma in sigmas:
        config = LearningConfig.for_hierarchy(h, r1, r2, sigma, **options)
        schedule = make_schedule(h, sigma, seed)
        try:
            result = train_noise_free(init_network(h, config), h, schedule, config)
        except WTAContractError as err:
            attempts.append(SigmaAttempt(sigma, False, f"empty WTA candidate set: {err}"))
            continue
        audit = weight_audit(result.net, result.repmap, h, noise_free_ranges(h, config))
        engagement = result.log.violations()
        verdicts = post_training_verdicts(result, h, config, probe_inputs(h, samples, seed))
        failed = [name for name, good in (("audit", audit.ok), ("engagement", not engagement),
                                          ("recognition", all(v.ok for v in verdicts))) if not good]
        attempts.append(SigmaAttempt(sigma, not failed, ", ".join(failed) or "pass"))
        if not failed:
            return sigma, attempts
    return None, attempts
