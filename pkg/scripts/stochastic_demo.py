"""Monte-Carlo recognition rates with sigmoid firing across temperatures."""
import argparse

from hiernet.errors import InfeasibleParameters
from hiernet.hierarchy import restaurant_fixture
from hiernet.network import feasible_bias_range
from hiernet.recognition import stochastic_recognition


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lams", type=float, nargs="+", default=[0.1, 0.2, 0.25, 0.5])
    ap.add_argument("--delta", type=float, default=0.05)
    ap.add_argument("--trials", type=int, default=2000)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    h, B = restaurant_fixture()
    for lam in args.lams:
        lo, hi = feasible_bias_range(lam, args.delta, h.k, h.lmax)
        bias = (lo + hi) / 2
        try:
            rep = stochastic_recognition(h, B, lam, bias, args.delta, args.trials, args.seed, args.workers)
        except InfeasibleParameters as err:
            print(f"lambda={lam}: infeasible, {err}")
            continue
        b = rep.bounds
        print(f"lambda={lam}: bias={bias:.4f} r1={b.r1:.4f} r2={b.r2:.4f} "
              f"must-fire {rep.must_fire_rate:.4f} must-not-fire {rep.must_not_fire_rate:.4f} "
              f"(target {rep.target} - {rep.tolerance:.4f})")


if __name__ == "__main__":
    main()
