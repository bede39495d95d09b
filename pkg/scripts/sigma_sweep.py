"""Smallest showing count sigma at which noise-free learning passes every check."""
import argparse
from fractions import Fraction

from hiernet.hierarchy import HierarchyParams, gen_overlap, gen_tree, restaurant_fixture
from hiernet.learning import minimal_sigma


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--sigmas", type=int, nargs="+", default=[10, 20, 30, 40, 60, 80])
    ap.add_argument("--r1", default="3/5")
    ap.add_argument("--r2", default="9/10")
    args = ap.parse_args()
    r1, r2 = Fraction(args.r1), Fraction(args.r2)

    cases = [("restaurant", 0, restaurant_fixture()[0])]
    for seed in range(args.seeds):
        for lmax in (2, 3):
            cases.append((f"tree lmax={lmax}", seed, gen_tree(HierarchyParams(4 ** (lmax + 1), 4, lmax), seed)))
            params = HierarchyParams(4 ** (lmax + 1), 4, lmax, Fraction(1, 2))
            cases.append((f"overlap lmax={lmax}", seed, gen_overlap(params, seed)))

    for name, seed, h in cases:
        sigma, attempts = minimal_sigma(h, r1, r2, args.sigmas, seed=seed)
        trail = "; ".join(f"{a.sigma}: {a.reason.split(':')[0]}" for a in attempts)
        print(f"{name:18} seed={seed}  sigma*={sigma}  [{trail}]")


if __name__ == "__main__":
    main()
