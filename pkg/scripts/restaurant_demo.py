"""Recognise the restaurant order with feed-forward and feedback networks."""
from fractions import Fraction

from hiernet.hierarchy import restaurant_fixture
from hiernet.recognition import build_exact, build_feedback, observed_fb_sets, observed_ff_sets
from hiernet.support import supp_bidirectional

R = Fraction(3, 4)


def main():
    h, B = restaurant_fixture()
    print(f"order: {len(B)} ingredients")

    net, repmap = build_exact(h, R, R)
    for level, fired in enumerate(observed_ff_sets(net, repmap, h, B)[1:], start=1):
        print(f"feed-forward, layer {level} at t+{level}: {sorted(h.name(c) for c in fired)}")

    net, repmap = build_feedback(h, R, R, 1)
    per_time, trace = observed_fb_sets(net, repmap, h, B)
    seen = set()
    for t, fired in enumerate(per_time):
        new = sorted(h.name(c) for c in fired - seen if c.level > 0)
        if new:
            print(f"feedback, t={t}: starts firing {new}")
        seen |= fired
    oracle = supp_bidirectional(h, B, R, 1)
    print(f"settled at t={trace.stabilized_at}; matches support oracle: {per_time[-1] == oracle.support}")


if __name__ == "__main__":
    main()
