"""Ignition times along the chain instance under persistent input with feedback."""
import argparse
from fractions import Fraction

from hiernet.hierarchy import gen_lower_bound
from hiernet.recognition import build_feedback, check_timing


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--k", type=int, default=4)
    ap.add_argument("--lmax", type=int, nargs="+", default=[3, 4])
    ap.add_argument("--r", default="3/4")
    args = ap.parse_args()
    r = Fraction(args.r)
    for lmax in args.lmax:
        h, B = gen_lower_bound(args.k, lmax, r)
        net, repmap = build_feedback(h, r, r, 1)
        d = check_timing(net, repmap, h, B, "lower_bound_schedule").details
        print(f"k={args.k} lmax={lmax}: chain length {d['m']}, |B|={len(B)}, n={h.params.n}")
        print(f"  ignitions {d['observed']}")
        print(f"  last at t+{d['observed_last']} (2*k^(lmax-2) = {d['proof_schedule_last']},"
              f" printed bound 2(k^lmax - 2) = {d['printed_bound']})")


if __name__ == "__main__":
    main()
