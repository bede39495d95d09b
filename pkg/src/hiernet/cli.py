"""Command-line experiment runner.

Exit codes: 0 all checks pass, 2 parameter or feasibility error, 3 check failure.
"""
from __future__ import annotations

import argparse
import json
import random
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import learning as lrn
from . import recognition as rec
from .errors import CapacityError, HierarchyError, InfeasibleParameters, WTAContractError
from .hierarchy import (
    Concept,
    ConceptHierarchy,
    HierarchyParams,
    gen_lower_bound,
    gen_overlap,
    gen_tree,
    lower_bound_chain,
    restaurant_fixture,
    stored_input,
    validate,
)
from .network import feasible_bias_range
from .rational import as_fraction, as_pair, as_text, derive_seed
from .support import node_and_parent_violations, supp_bidirectional, supp_upward, time_bound_report

EXIT_OK, EXIT_PARAMS, EXIT_CHECK = 0, 2, 3
MAX_COUNTEREXAMPLES = 20

# Defaults applied after merging command-line flags with --params-file.
DEFAULTS = {
    "seed": 0, "out": None, "horizon": None, "trials": 2000, "workers": 1, "quiet": False,
    "k": 4, "lmax": None, "n": None, "o": "0", "r": "3/4",
    "mode": None, "r1": None, "r2": None, "f": None, "w1": "1", "w2": "1", "b": 2, "s": "1", "input": None,
    "sigma": 60, "p": None, "wta": "revised", "samples": 20, "snapshot_every": None, "shuffle": False,
    "lam": 0.5, "bias": None, "delta": 0.05,
}


class UsageError(ValueError):
    pass


# -- argument handling ---------------------------------------------------------

def _common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="write the JSON artifact here instead of stdout")
    p.add_argument("--params-file", help="JSON object of option values; command-line flags win")
    p.add_argument("--horizon", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--quiet", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hiernet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a hierarchy JSON file")
    g.add_argument("kind", choices=["tree", "overlap", "lowerbound", "restaurant"])
    g.add_argument("--k", type=int)
    g.add_argument("--lmax", type=int)
    g.add_argument("--n", type=int, help="level-0 universe size (default: smallest that fits)")
    g.add_argument("--o", help="overlap bound as num/den")
    g.add_argument("--r", help="threshold fraction for the lower-bound input")
    _common(g)

    r = sub.add_parser("recognize", help="build a recognition network and check it against the oracle")
    r.add_argument("hierarchy")
    r.add_argument("--mode", choices=["exact-ff", "approx-ff", "scaled-ff", "exact-fb", "approx-fb"])
    for name in ("r1", "r2", "f", "w1", "w2", "s"):
        r.add_argument(f"--{name}")
    r.add_argument("--b", type=int)
    r.add_argument("--input", help="fixture | list:a,b,... | random:COUNT | leaves-of:CONCEPT")
    _common(r)

    lp = sub.add_parser("learn", help="train a network and verify the result")
    lp.add_argument("hierarchy")
    lp.add_argument("--mode", choices=["noise-free", "noisy", "feedback", "feedback-noisy"])
    for name in ("r1", "r2", "f", "p"):
        lp.add_argument(f"--{name}")
    lp.add_argument("--sigma", type=int)
    lp.add_argument("--wta", choices=["basic", "revised"])
    lp.add_argument("--samples", type=int, help="random probe inputs besides each concept's leaves")
    lp.add_argument("--snapshot-every", type=int)
    lp.add_argument("--shuffle", action="store_true", default=None, help="seeded concept order in the feedback pass")
    _common(lp)

    s = sub.add_parser("stochastic", help="Monte-Carlo recognition with sigmoid firing")
    s.add_argument("hierarchy")
    s.add_argument("--lam", type=float)
    s.add_argument("--bias", type=float, help="default: middle of the feasible range")
    s.add_argument("--delta", type=float)
    s.add_argument("--input")
    _common(s)

    v = sub.add_parser("verify-support", help="compute support traces and check their time bounds")
    v.add_argument("hierarchy")
    v.add_argument("--r")
    v.add_argument("--f")
    v.add_argument("--input")
    _common(v)
    return parser


def resolve_options(args: argparse.Namespace) -> dict:
    opts = {k: v for k, v in vars(args).items()}
    file_opts = {}
    if opts.get("params_file"):
        file_opts = json.loads(Path(opts["params_file"]).read_text())
        if not isinstance(file_opts, dict):
            raise UsageError("--params-file must hold a JSON object")
    for key, default in DEFAULTS.items():
        if opts.get(key) is None:
            opts[key] = file_opts.get(key.replace("_", "-"), file_opts.get(key, default))
    return opts


def load_hierarchy(path: str) -> ConceptHierarchy:
    return ConceptHierarchy.from_json(Path(path).read_text())


def parse_concept(h: ConceptHierarchy, token: str, level0: bool = False) -> Concept:
    token = token.strip()
    if token in h._by_label:
        return h.by_label(token)
    if "." in token:
        lvl, idx = token.split(".", 1)
        c = Concept(int(lvl), int(idx))
    elif token.isdigit() and level0:
        c = Concept(0, int(token))
    else:
        raise UsageError(f"unknown concept {token!r}")
    if c not in h and not (level0 and c.level == 0):
        raise UsageError(f"concept {c} not in hierarchy")
    return c


def resolve_inputs(h: ConceptHierarchy, spec: str | None, seed: int) -> list[frozenset]:
    """Input sets named by a spec string."""
    if spec is None:
        spec = "fixture" if "input" in h.metadata else "random:50"
    kind, _, arg = spec.partition(":")
    if kind == "fixture":
        if "input" not in h.metadata:
            raise UsageError("hierarchy file carries no fixture input")
        return [stored_input(h)]
    if kind == "list":
        items = [parse_concept(h, t, level0=True) for t in arg.split(",") if t.strip()]
        if any(c.level != 0 for c in items):
            raise UsageError("input lists take level-0 concepts only")
        return [frozenset(items)]
    if kind == "random":
        rng = random.Random(derive_seed(seed, "inputs"))
        return [lrn.random_inputs(h, rng) for _ in range(int(arg or 50))]
    if kind == "leaves-of":
        return [h.leaves(parse_concept(h, arg))]
    raise UsageError(f"unknown input spec {spec!r}")


def _ids(concepts) -> list:
    return [[c.level, c.index] for c in sorted(concepts)]


def _meta_fraction(h, key, fallback):
    return as_fraction(h.metadata[key]) if key in h.metadata else as_fraction(fallback)


# -- commands ------------------------------------------------------------------

def cmd_generate(opts: dict):
    kind, seed = opts["kind"], opts["seed"]
    k = opts["k"]
    lmax = opts["lmax"] if opts["lmax"] is not None else (3 if kind == "lowerbound" else 2)
    if kind == "restaurant":
        h, _ = restaurant_fixture()
    elif kind == "lowerbound":
        h, _ = gen_lower_bound(k, lmax, as_fraction(opts["r"]))
    else:
        o = as_fraction(opts["o"]) if kind == "overlap" else Fraction(0)
        n = opts["n"] if opts["n"] is not None else k ** (lmax + 1)
        params = HierarchyParams(n, k, lmax, o)
        h = gen_tree(params, seed) if kind == "tree" else gen_overlap(params, seed)
    report = validate(h)
    summary = {
        "kind": kind,
        "valid": report.ok,
        "tree": report.tree,
        "violations": list(report.violations),
        "level_sizes": [len(lvl) for lvl in h.levels],
        "achieved_overlap": h.achieved_overlap(),
    }
    if kind == "lowerbound":
        summary["chain_length"] = len(lower_bound_chain(h))
    return h.to_json(), summary, report.ok


def _recognition_params(h, opts, feedback):
    r_default = h.metadata.get("r", [3, 4])
    r1 = as_fraction(opts["r1"]) if opts["r1"] is not None else as_fraction(r_default)
    r2 = as_fraction(opts["r2"]) if opts["r2"] is not None else r1
    f = as_fraction(opts["f"]) if opts["f"] is not None else (_meta_fraction(h, "f", 1) if feedback else Fraction(0))
    return rec.RecognitionParams(r1, r2, f, as_fraction(opts["w1"]), as_fraction(opts["w2"]), opts["b"],
                                 as_fraction(opts["s"]))


def cmd_recognize(opts: dict):
    h = load_hierarchy(opts["hierarchy"])
    mode = opts["mode"] or ("exact-fb" if "f" in h.metadata else "exact-ff")
    feedback = mode.endswith("fb")
    params = _recognition_params(h, opts, feedback)
    seed = opts["seed"]
    weight_seed = derive_seed(seed, "weights")
    if mode == "exact-ff":
        net, repmap = rec.build_exact(h, params.r1, params.r2)
    elif mode == "approx-ff":
        net, repmap = rec.build_approx(h, params, weight_seed)
    elif mode == "scaled-ff":
        net, repmap = rec.build_scaled(h, params, weight_seed)
    elif mode == "exact-fb":
        net, repmap = rec.build_feedback(h, params.r1, params.r2, params.f)
    else:
        net, repmap = rec.build_feedback_approx(h, params, weight_seed)
    if feedback:
        check = rec.Feedback(params.r1, params.r2, params.f, opts["horizon"])
    else:
        check = rec.FeedForward(params.r1, params.r2)
    inputs = resolve_inputs(h, opts["input"], seed)
    verdicts = [rec.check_recognition(net, repmap, h, b, check) for b in inputs]
    checks = {
        "recognition": all(v.ok for v in verdicts),
        "non_rep_silent": all(v.non_rep_silent for v in verdicts),
    }
    result = {
        "mode": mode,
        "tau": params.tau(h.k),
        "verdicts": [{"input": _ids(b), **v.to_dict()} for b, v in zip(inputs, verdicts)],
    }
    if feedback and h.metadata.get("kind") == "lowerbound":
        timing = rec.check_timing(net, repmap, h, inputs[0], "lower_bound_schedule")
        checks["lower_bound_schedule"] = timing.ok
        result["ignition_times"] = timing.details
    counter = [
        {"input": _ids(b), "failures": _ids(v.failures)} for b, v in zip(inputs, verdicts) if not v.ok
    ][:MAX_COUNTEREXAMPLES]
    echo = {"mode": mode, **params.to_dict(), "input": opts["input"], "horizon": opts["horizon"]}
    return echo, {"weights": weight_seed}, checks, result, counter


def cmd_learn(opts: dict):
    h = load_hierarchy(opts["hierarchy"])
    mode = opts["mode"] or "noise-free"
    feedback = mode.startswith("feedback")
    noisy = mode.endswith("noisy")
    r1 = as_fraction(opts["r1"] or "3/5")
    r2 = as_fraction(opts["r2"] or "9/10")
    f = as_fraction(opts["f"]) if opts["f"] is not None else (Fraction(1) if feedback else Fraction(0))
    p = None
    if noisy:
        if opts["p"] is None:
            raise UsageError(f"--p is required in {mode} mode")
        p = as_fraction(opts["p"])
    config = lrn.LearningConfig.for_hierarchy(h, r1, r2, opts["sigma"], noise_p=p, f=f, wta_mode=opts["wta"])
    seed = opts["seed"]
    seeds = {
        "schedule": derive_seed(seed, "schedule"),
        "presentation": derive_seed(seed, "presentation"),
        "probes": derive_seed(seed, "probes"),
    }
    schedule = lrn.make_schedule(h, config.sigma, seeds["schedule"])
    echo = {"mode": mode, **config.to_dict(), "samples": opts["samples"], "snapshot_every": opts["snapshot_every"],
            "shuffle": bool(opts["shuffle"])}
    transcript = {"schedule": _ids_ordered(schedule)}
    checks = {}
    net = lrn.init_network(h, config, feedback=feedback)
    try:
        if feedback:
            out = lrn.train_feedback(net, h, schedule, config, seeds["presentation"], bool(opts["shuffle"]),
                                     opts["snapshot_every"])
            checks["pass2_firing"] = not out.pass2_violations
            checks["upward_unchanged"] = bool(np.array_equal(out.upward_before, out.net.uweight))
            transcript["pass2_violations"] = out.pass2_violations
            result = lrn.TrainingResult(out.net, out.repmap, out.log)
            ranges = lrn.feedback_ranges(h, config)
        elif noisy:
            result = lrn.train_noisy(net, h, schedule, config, seeds["presentation"], opts["snapshot_every"])
            ranges = lrn.noisy_ranges(h, config)
        else:
            result = lrn.train_noise_free(net, h, schedule, config, opts["snapshot_every"])
            ranges = lrn.noise_free_ranges(h, config)
    except WTAContractError as err:
        transcript["error"] = f"winner-take-all contract violated: {err}"
        checks["training_completed"] = False
        return echo, seeds, checks, transcript, [transcript["error"]]
    violations = result.log.violations()
    audit = lrn.weight_audit(result.net, result.repmap, h, ranges)
    probes = lrn.probe_inputs(h, opts["samples"], seeds["probes"])
    verdicts = lrn.post_training_verdicts(result, h, config, probes, feedback=feedback)
    checks.update({
        "training_completed": True,
        "engagement": not violations,
        "weight_audit": audit.ok,
        "recognition": all(v.ok for v in verdicts),
    })
    transcript.update({
        "engagements": result.log.to_list(),
        "engagement_violations": violations,
        "repmap": result.repmap.to_dict(),
        "weight_audit": audit.to_dict(),
        "verdicts": [{"input": _ids(b), "ok": v.ok, "failures": _ids(v.failures)} for b, v in zip(probes, verdicts)],
    })
    if result.log.snapshots:
        transcript["snapshots"] = [{"showing": i, "uweight": w[1:].tolist()} for i, w in result.log.snapshots]
    counter = violations[:MAX_COUNTEREXAMPLES] + [
        {"input": _ids(b), "failures": _ids(v.failures)} for b, v in zip(probes, verdicts) if not v.ok
    ][:MAX_COUNTEREXAMPLES]
    counter += [list(v) for v in audit.violations[:MAX_COUNTEREXAMPLES]]
    return echo, seeds, checks, transcript, counter


def _ids_ordered(schedule) -> list:
    return [[c.level, c.index] for c in schedule]


def cmd_stochastic(opts: dict):
    h = load_hierarchy(opts["hierarchy"])
    lam, delta = float(opts["lam"]), float(opts["delta"])
    bias = opts["bias"]
    if bias is None:
        lo, hi = feasible_bias_range(lam, delta, h.k, h.lmax)
        bias = (lo + hi) / 2
    inputs = resolve_inputs(h, opts["input"], opts["seed"])
    if len(inputs) != 1:
        raise UsageError("stochastic runs take a single input set")
    seed = derive_seed(opts["seed"], "stochastic")
    report = rec.stochastic_recognition(h, inputs[0], lam, float(bias), delta, opts["trials"], seed, opts["workers"])
    echo = {"lam": lam, "bias": float(bias), "delta": delta, "trials": opts["trials"], "input": opts["input"]}
    checks = {"must_fire": report.must_fire_ok, "must_not_fire": report.must_not_fire_ok}
    return echo, {"trials": seed}, checks, report.to_dict(), []


def cmd_verify_support(opts: dict):
    h = load_hierarchy(opts["hierarchy"])
    r = as_fraction(opts["r"]) if opts["r"] is not None else _meta_fraction(h, "r", "3/4")
    f = as_fraction(opts["f"]) if opts["f"] is not None else _meta_fraction(h, "f", 0)
    inputs = resolve_inputs(h, opts["input"], opts["seed"])
    traces, checks, counter = [], {"time_bounds": True, "f0_agreement": True}, []
    if h.is_tree:
        checks["node_and_parent"] = True
    for b in inputs:
        trace = supp_bidirectional(h, b, r, f)
        bounds = time_bound_report(h, trace)
        upward = supp_upward(h, b, r)
        plain = supp_bidirectional(h, b, r, 0)
        agree = all(plain.final(lvl) == upward[lvl] for lvl in range(h.lmax + 1))
        checks["time_bounds"] &= bounds.ok
        checks["f0_agreement"] &= agree
        if not bounds.ok:
            counter.append({"input": _ids(b), "stabilized_at": list(bounds.stabilized_at)})
        if h.is_tree:
            bad = node_and_parent_violations(h, b, r, f)
            checks["node_and_parent"] &= not bad
            counter += [{"input": _ids(b), "t": t, "concept": [c.level, c.index]} for t, c in bad]
        traces.append({**trace.to_dict(), "upward": [_ids(s) for s in upward],
                       "bounds": [bnd for bnd in bounds.bounds]})
    echo = {"r": as_text(r), "f": as_text(f), "input": opts["input"]}
    return echo, {"inputs": derive_seed(opts["seed"], "inputs")}, checks, {"traces": traces}, counter[:MAX_COUNTEREXAMPLES]


COMMANDS = {
    "recognize": cmd_recognize,
    "learn": cmd_learn,
    "stochastic": cmd_stochastic,
    "verify-support": cmd_verify_support,
}


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _say(opts, message: str):
    if not opts.get("quiet"):
        print(message, file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = resolve_options(args)
        started = time.perf_counter()
        if args.command == "generate":
            text, summary, ok = cmd_generate(opts)
            _emit(text, opts["out"])
            _say(opts, json.dumps(summary, sort_keys=True))
            return EXIT_OK if ok else EXIT_CHECK
        echo, seeds, checks, result, counter = COMMANDS[args.command](opts)
    except (InfeasibleParameters, CapacityError, HierarchyError, UsageError, ValueError, KeyError) as err:
        detail = {"error": str(err)}
        residuals = getattr(err, "residuals", None)
        if residuals:
            detail["residuals"] = {k: float(v) for k, v in residuals.items()}
        print(json.dumps(detail, sort_keys=True), file=sys.stderr)
        return EXIT_PARAMS
    passed = all(checks.values())
    report = {
        "command": args.command,
        "params": {**echo, "hierarchy": opts.get("hierarchy")},
        "seeds": {"seed": opts["seed"], **seeds},
        "checks": checks,
        "passed": passed,
        "counterexamples": counter,
        "result": result,
        "timings": {"seconds": round(time.perf_counter() - started, 6)},
    }
    _emit(json.dumps(report, sort_keys=True, indent=1, default=_jsonable), opts["out"])
    for name, good in sorted(checks.items()):
        _say(opts, f"{'PASS' if good else 'FAIL'} {name}")
    return EXIT_OK if passed else EXIT_CHECK


def _jsonable(value):
    if isinstance(value, Fraction):
        return as_pair(value)
    if isinstance(value, (np.integer, np.floating, np.bool_)):
        return value.item()
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f"cannot serialise {type(value).__name__}")


if __name__ == "__main__":
    sys.exit(main())
