import random
from fractions import Fraction

import pytest
from hypothesis import HealthCheck, settings, strategies as st

from hiernet.hierarchy import HierarchyParams, gen_overlap, gen_tree, restaurant_fixture

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def small_tree(k, lmax, seed, slack=0):
    return gen_tree(HierarchyParams(k ** (lmax + 1) + slack, k, lmax), seed)


def small_overlap(k, lmax, o, seed):
    return gen_overlap(HierarchyParams(k ** (lmax + 1) + 8, k, lmax, o), seed)


@st.composite
def hierarchies(draw, max_k=3, max_lmax=3, trees_only=False):
    k = draw(st.integers(2, max_k))
    lmax = draw(st.integers(1, max_lmax if k < 4 else 2))
    seed = draw(st.integers(0, 2**16))
    if trees_only or draw(st.booleans()):
        return small_tree(k, lmax, seed, slack=draw(st.integers(0, 5)))
    o = Fraction(draw(st.integers(0, k)), k)
    return small_overlap(k, lmax, o, seed)


@st.composite
def hierarchy_and_input(draw, **kw):
    h = draw(hierarchies(**kw))
    level0 = list(h.levels[0])
    rng = random.Random(draw(st.integers(0, 2**16)))
    density = draw(st.sampled_from([0.3, 0.6, 0.85, 1.0]))
    return h, frozenset(c for c in level0 if rng.random() < density)


fractions_01 = st.builds(Fraction, st.integers(0, 12), st.integers(1, 12)).filter(lambda x: x <= 1)


@pytest.fixture(scope="session")
def restaurant():
    return restaurant_fixture()


# One line per acceptance criterion, printed after the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
