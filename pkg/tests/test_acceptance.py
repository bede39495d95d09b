"""End-to-end acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line (also collected into the terminal
summary) with the measured runtime against its budget.
"""
import math
import random
import time
from contextlib import contextmanager
from fractions import Fraction

import numpy as np
import pytest

from hiernet.errors import InfeasibleParameters
from hiernet.hierarchy import HierarchyParams, gen_lower_bound, gen_overlap, gen_tree
from hiernet.learning import (
    LearningConfig,
    feedback_ranges,
    init_network,
    make_schedule,
    minimal_sigma,
    noise_free_ranges,
    noisy_margins,
    post_training_verdicts,
    probe_inputs,
    train_feedback,
    train_noise_free,
    train_noisy,
    weight_audit,
)
from hiernet.network import sigmoid_cutoffs
from hiernet.recognition import (
    Feedback,
    FeedForward,
    RecognitionParams,
    build_approx,
    build_exact,
    build_feedback,
    build_feedback_approx,
    build_scaled,
    check_recognition,
    check_timing,
    feasibility,
    observed_fb_sets,
    observed_ff_sets,
    parent_edges,
    stochastic_recognition,
)
from hiernet.support import (
    check_monotonicity,
    node_and_parent_violations,
    supp_bidirectional,
    supp_upward,
)

from conftest import ACCEPTANCE_LINES

R34 = Fraction(3, 4)
DISHES = {"acqua pazza", "carciofi al forno", "pesce spada", "cannoli", "ribollita", "bistecca Fiorentina"}


@contextmanager
def criterion(number, title, budget):
    start = time.perf_counter()
    status, note = "FAIL", ""
    try:
        yield
        elapsed = time.perf_counter() - start
        if elapsed >= budget:
            note = f" (over budget: {elapsed:.2f}s >= {budget}s)"
            raise AssertionError(f"criterion {number} took {elapsed:.2f}s, budget {budget}s")
        status = "PASS"
    except BaseException as err:
        note = note or f" ({type(err).__name__}: {str(err).splitlines()[0][:160]})"
        raise
    finally:
        elapsed = time.perf_counter() - start
        line = f"criterion {number}: {status} {title} [{elapsed:.2f}s / {budget}s]{note}"
        print(line)
        ACCEPTANCE_LINES.append(line)


def random_hierarchy(rng, k, lmax, kind):
    seed = rng.randrange(2**31)
    if kind == "tree":
        return gen_tree(HierarchyParams(k ** (lmax + 1), k, lmax), seed)
    o = Fraction(rng.randint(1, k), k)
    return gen_overlap(HierarchyParams(k ** (lmax + 1) + 8, k, lmax, o), seed)


def random_subset(rng, level0):
    density = rng.choice([0.3, 0.5, 0.7, 0.85, 0.95, 1.0])
    return frozenset(c for c in level0 if rng.random() < density)


def test_criterion_01_restaurant_feedforward(restaurant):
    with criterion(1, "restaurant feed-forward exact recognition", 1.0):
        h, B = restaurant
        net, repmap = build_exact(h, R34, R34)
        fired = observed_ff_sets(net, repmap, h, B)
        assert {h.name(c) for c in fired[1]} == DISHES
        assert {h.name(c) for c in fired[2]} == {"Sicilia"}


def test_criterion_02_restaurant_feedback(restaurant):
    with criterion(2, "restaurant feedback exact recognition", 1.0):
        h, B = restaurant
        net, repmap = build_feedback(h, R34, R34, 1)
        per_time, trace = observed_fb_sets(net, repmap, h, B)
        oracle = supp_bidirectional(h, B, R34, 1)
        assert per_time[-1] == oracle.support
        pasta = h.by_label("pasta e cavolfiore")
        assert pasta in oracle.at(1, 3) and pasta not in oracle.at(1, 2)
        assert trace.first_fire(*repmap.rep(pasta)) == oracle.first_time(pasta) == 3


def test_criterion_03_oracle_equivalence_sweep():
    with criterion(3, "feed-forward and feedback oracle equivalence sweep", 60.0):
        rng = random.Random(20240603)
        mismatches = []
        for i in range(100):
            k = rng.choice([2, 3, 4])
            lmax = rng.randint(1, 3)
            kind = "tree" if i % 2 == 0 else "overlap"
            h = random_hierarchy(rng, k, lmax, kind)
            r = Fraction(rng.randint(1, k), k)
            f = rng.choice([Fraction(1, 2), Fraction(1), Fraction(2)])
            ff_net, ff_rep = build_exact(h, r, r)
            fb_net, fb_rep = build_feedback(h, r, r, f)
            for _ in range(50):
                B = random_subset(rng, h.levels[0])
                want = supp_upward(h, B, r)
                got = observed_ff_sets(ff_net, ff_rep, h, B)
                if got[1:] != want[1:]:
                    mismatches.append(("ff", i, sorted(B)))
                per_time, _ = observed_fb_sets(fb_net, fb_rep, h, B)
                if per_time[-1] != supp_bidirectional(h, B, r, f).support:
                    mismatches.append(("fb", i, sorted(B)))
        assert mismatches == [], mismatches[:3]


def test_criterion_04_timing():
    with criterion(4, "firing-time and stabilization bounds, lower-bound schedule", 30.0):
        rng = random.Random(7)
        for _ in range(40):
            k = rng.choice([2, 3])
            lmax = rng.randint(1, 4 if k == 2 else 3)
            h = random_hierarchy(rng, k, lmax, "tree")
            r = Fraction(rng.randint(1, k), k)
            B = random_subset(rng, h.levels[0])
            net, repmap = build_feedback(h, r, r, 1)
            assert check_timing(net, repmap, h, B, "tree_2lmax", r2=r, f=1).ok
            trace = supp_bidirectional(h, B, r, 1)
            assert all(t <= 2 * lmax - lvl for lvl, t in enumerate(trace.stabilized_at))
            plain = supp_bidirectional(h, B, r, 0)
            assert all(t <= lvl for lvl, t in enumerate(plain.stabilized_at))

        h, B = gen_lower_bound(4, 3, R34)
        net, repmap = build_feedback(h, R34, R34, 1)
        report = check_timing(net, repmap, h, B, "lower_bound_schedule")
        assert report.details["observed"] == [2, 4, 6, 8]

        h, B = gen_lower_bound(4, 4, R34)
        net, repmap = build_feedback(h, R34, R34, 1)
        report = check_timing(net, repmap, h, B, "lower_bound_schedule")
        assert report.ok
        assert report.details["observed_last"] == 2 * 4 ** (4 - 2) == 32


def _sample_feasible(rng, k, kind):
    """Rejection-sample weight intervals meeting the builder's conditions."""
    while True:
        r1 = Fraction(rng.randint(40, 70), 100)
        r2 = Fraction(rng.randint(int(r1 * 100) + 15, 100), 100)
        b = rng.choice([2, 3]) if kind != "feedback" else 3
        s = Fraction(1) if kind != "scaled" else Fraction(1, 2)
        f = Fraction(1) if kind == "feedback" else Fraction(0)
        lo_w1 = (1 + r1 / r2) / 2
        w1 = lo_w1 + (1 - lo_w1) * Fraction(rng.randint(0, 100), 100)
        w2 = 1 + Fraction(rng.randint(0, 5), 100)
        p = RecognitionParams(r1, r2, f, w1=w1, w2=w2, b=b, s=s)
        res = feasibility(p, k, feedback=kind == "feedback")
        if all(v > 0 for v in res.values()):
            return p


def test_criterion_05_approximate_and_scaled():
    with criterion(5, "approximate/scaled recognition and infeasibility reports", 60.0):
        rng = random.Random(11)
        kinds = ["approx"] * 17 + ["scaled"] * 17 + ["feedback"] * 16
        failures = []
        for i, kind in enumerate(kinds):
            k = 4 if kind != "feedback" else 3
            h = random_hierarchy(rng, k, 2, "overlap" if i % 2 else "tree")
            p = _sample_feasible(rng, k, kind)
            seed = rng.randrange(2**31)
            if kind == "approx":
                net, repmap = build_approx(h, p, seed)
                mode = FeedForward(p.r1, p.r2)
            elif kind == "scaled":
                net, repmap = build_scaled(h, p, seed)
                mode = FeedForward(p.r1, p.r2)
            else:
                net, repmap = build_feedback_approx(h, p, seed)
                mode = Feedback(p.r1, p.r2, p.f)
            for _ in range(10):
                B = random_subset(rng, h.levels[0])
                verdict = check_recognition(net, repmap, h, B, mode)
                if not verdict.ok:
                    failures.append((kind, i, verdict.failures[:3]))
        assert failures == [], failures[:3]

        rejected = 0
        for i in range(10):
            k = 4
            h = random_hierarchy(rng, k, 2, "overlap")
            r1 = Fraction(rng.randint(40, 70), 100)
            w2 = 1 + Fraction(rng.randint(0, 5), 100)
            b = 2
            # land exactly 0.05 below the second condition
            r2 = r1 * (2 * w2 - 1) + Fraction(2, k**b) - Fraction(1, 20)
            p = RecognitionParams(r1, r2, w1=Fraction(1), w2=w2, b=b)
            assert feasibility(p, k)["r2 - r1(2w2-1) - 2/(k^b s)"] == Fraction(-1, 20)
            builder = build_approx if i % 2 else build_scaled
            with pytest.raises(InfeasibleParameters):
                builder(h, p, seed=i)
            rejected += 1
        assert rejected == 10


@pytest.mark.slow
def test_criterion_06_noise_free_learning():
    with criterion(6, "noise-free learning: audit, engagement, recognition over 100 runs", 300.0):
        rng = random.Random(5)
        r1, r2 = Fraction(3, 5), Fraction(9, 10)
        sigmas = [20, 30, 40, 60, 80, 120]
        problems = []
        for i in range(100):
            lmax = 2 if i % 4 < 3 else 3
            seed = rng.randrange(2**31)
            if i % 2 == 0:
                h = gen_tree(HierarchyParams(4 ** (lmax + 1), 4, lmax), seed)
            else:
                h = gen_overlap(HierarchyParams(4 ** (lmax + 1), 4, lmax, Fraction(1, 2)), seed)
            assert h.params.o < r1
            sigma, attempts = minimal_sigma(h, r1, r2, sigmas, seed=seed, samples=10)
            if sigma is None:
                problems.append((i, [a.reason for a in attempts]))
                continue
            config = LearningConfig.for_hierarchy(h, r1, r2, sigma)
            result = train_noise_free(init_network(h, config), h, make_schedule(h, sigma, seed), config)
            audit = weight_audit(result.net, result.repmap, h, noise_free_ranges(h, config))
            eps = float(config.epsilon)
            lo, hi = audit.extremes["child"]
            if not (audit.ok and lo >= 1 / ((1 + eps) * 2) and hi <= 0.5 * (1 + 1e-12)):
                problems.append((i, "audit", audit.extremes))
            if audit.extremes.get("off", (0, 0))[1] > 1 / 4 ** (lmax + 2):
                problems.append((i, "off-edge", audit.extremes["off"]))
            if result.log.violations():
                problems.append((i, "engagement", result.log.violations()[:2]))
            verdicts = post_training_verdicts(result, h, config, probe_inputs(h, 10, seed))
            if not all(v.ok for v in verdicts):
                problems.append((i, "recognition"))
        assert problems == [], problems[:3]


def test_criterion_07_feedback_learning(restaurant):
    with criterion(7, "feedback learning: downward audit, upward unchanged, recognition", 300.0):
        rng = random.Random(8)
        r1, r2 = Fraction(3, 5), Fraction(9, 10)
        cases = [restaurant[0]]
        for i in range(6):
            kind = "tree" if i % 2 else "overlap"
            seed = rng.randrange(2**31)
            if kind == "tree":
                cases.append(gen_tree(HierarchyParams(64, 4, 2), seed))
            else:
                cases.append(gen_overlap(HierarchyParams(64, 4, 2, Fraction(1, 2)), seed))
        for h in cases:
            sigma = 40
            config = LearningConfig.for_hierarchy(h, r1, r2, sigma, f=1)
            out = train_feedback(init_network(h, config, feedback=True), h, make_schedule(h, sigma, 3), config)
            assert out.pass2_violations == []
            assert np.array_equal(out.upward_before, out.net.uweight)
            mask = parent_edges(h, out.repmap, out.net.n)
            assert np.all(out.net.dweight[mask] == 1 / math.sqrt(h.k))
            assert np.all(out.net.dweight[~mask] == 0)
            assert weight_audit(out.net, out.repmap, h, feedback_ranges(h, config)).ok
            probes = probe_inputs(h, 10, 4)
            if h is restaurant[0]:
                probes.insert(0, restaurant[1])
            assert all(v.ok for v in post_training_verdicts(out, h, config, probes, feedback=True))


def test_criterion_08_noisy_margins(restaurant):
    with criterion(8, "noisy-learning margins and p=1 transcript identity", 60.0):
        for p in (Fraction(3, 4), Fraction(1)):
            for k in (2, 3, 4, 6, 8, 16):
                for r1, r2 in [(Fraction(1, 2), Fraction(3, 4)), (Fraction(3, 5), Fraction(9, 10)),
                               (Fraction(1, 3), Fraction(2, 3)), (Fraction(7, 10), Fraction(4, 5))]:
                    must, must_not = noisy_margins(r1, r2, k, p)
                    assert must > 0 and must_not > 0, (p, k, r1, r2)
        h = restaurant[0]
        for seed in range(3):
            schedule = make_schedule(h, 30, seed)
            plain = LearningConfig.for_hierarchy(h, Fraction(3, 5), Fraction(9, 10), 30)
            noisy = LearningConfig.for_hierarchy(h, Fraction(3, 5), Fraction(9, 10), 30, noise_p=1)
            a = train_noise_free(init_network(h, plain), h, schedule, plain)
            b = train_noisy(init_network(h, noisy), h, schedule, noisy, seed=seed)
            assert a.log.to_list() == b.log.to_list()
            assert np.array_equal(a.net.uweight, b.net.uweight)


def test_criterion_09_stochastic_firing(restaurant):
    with criterion(9, "stochastic firing at lambda=0.5, bias mid-range, delta=0.05, 2000 trials", 120.0):
        h, B = restaurant
        lam, delta, trials = 0.5, 0.05, 2000
        bias = h.k / 2  # middle of [lambda L, k - lambda L]
        report = stochastic_recognition(h, B, lam, bias, delta, trials, seed=2024)
        bounds = report.bounds
        cut = sigmoid_cutoffs(lam, bias, bounds.delta_prime, h.k, check=False)
        assert abs(bounds.r1 - (cut.b1 + bias) / h.k) <= 1e-12
        assert abs(bounds.r2 - (cut.b2 + bias) / h.k) <= 1e-12
        assert report.must_fire_ok, report.must_fire_rate
        assert report.must_not_fire_ok, report.must_not_fire_rate


def test_criterion_10_support_properties():
    with criterion(10, "support monotonicity, leaves support their concept, node-and-parent on trees", 60.0):
        rng = random.Random(10)
        bad = []
        for i in range(200):
            k = rng.choice([2, 3, 4])
            lmax = rng.randint(1, 3 if k < 4 else 2)
            h = random_hierarchy(rng, k, lmax, "tree" if i % 2 else "overlap")
            B = random_subset(rng, h.levels[0])
            ra, rb = sorted(Fraction(rng.randint(0, k), k) for _ in range(2))
            fa, fb = sorted(rng.choice([0, Fraction(1, 2), 1, 2]) for _ in range(2))
            report = check_monotonicity(h, B, (ra, rb), (fa, fb))
            if not report.ok:
                bad.append(("r/f", i, report))
            trace = supp_bidirectional(h, B, ra, fa)
            for t in range(1, trace.horizon + 1):
                for lvl in range(h.lmax + 1):
                    if not trace.at(lvl, t - 1) <= trace.at(lvl, t):
                        bad.append(("t", i, lvl, t))
            c = rng.choice([c for c in h.concepts if c.level > 0])
            if c not in frozenset().union(*supp_upward(h, h.leaves(c), 1)):
                bad.append(("leaves", i, c))
            tree = gen_tree(HierarchyParams(k ** (lmax + 1), k, lmax), rng.randrange(2**31))
            Bt = random_subset(rng, tree.levels[0])
            violations = node_and_parent_violations(tree, Bt, Fraction(rng.randint(1, k), k), rng.choice([Fraction(1, 2), 1]))
            if violations:
                bad.append(("node-and-parent", i, violations[:2]))
        assert bad == [], bad[:3]
