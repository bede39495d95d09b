"""Concept hierarchies: data model, validation, generators and the restaurant fixture."""
from __future__ import annotations

import json
import math
import random
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import NamedTuple

from .errors import CapacityError, HierarchyError, InfeasibleParameters
from .rational import as_fraction, as_pair


class Concept(NamedTuple):
    level: int
    index: int

    def __str__(self):
        return f"{self.level}.{self.index}"


@dataclass(frozen=True)
class HierarchyParams:
    n: int  # size of the level-0 universe D_0
    k: int  # branching factor and number of top-level concepts
    lmax: int
    o: Fraction = Fraction(0)  # overlap bound

    def __post_init__(self):
        object.__setattr__(self, "o", as_fraction(self.o))
        if self.n < 1 or self.k < 1 or self.lmax < 1:
            raise ValueError(f"need n, k, lmax >= 1, got {self.n}, {self.k}, {self.lmax}")
        if not 0 <= self.o <= 1:
            raise ValueError(f"overlap bound o must lie in [0, 1], got {self.o}")

    @property
    def shared_cap(self) -> int:
        """Largest integer count of shared children allowed per concept."""
        return math.floor(self.o * self.k)


class DerivedSets(NamedTuple):
    children: frozenset
    parents: frozenset
    descendants: frozenset
    leaves: frozenset


@dataclass(frozen=True, eq=False)
class ConceptHierarchy:
    params: HierarchyParams
    levels: tuple  # levels[l] = sorted tuple of Concepts at level l
    children: Mapping  # Concept -> sorted tuple of Concepts
    labels: Mapping = field(default_factory=dict)
    metadata: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if len(self.levels) != self.params.lmax + 1:
            raise HierarchyError(f"expected {self.params.lmax + 1} levels, got {len(self.levels)}")
        known = set()
        for lvl, concepts in enumerate(self.levels):
            for c in concepts:
                if c.level != lvl:
                    raise HierarchyError(f"concept {c} listed at level {lvl}")
                if c in known:
                    raise HierarchyError(f"duplicate concept {c}")
                known.add(c)
        for c in self.levels[0]:
            if not 0 <= c.index < self.params.n:
                raise HierarchyError(f"level-0 concept {c} outside D_0 = [0, {self.params.n})")
            if self.children.get(c):
                raise HierarchyError(f"level-0 concept {c} has children")
        for c, kids in self.children.items():
            if c not in known:
                raise HierarchyError(f"children listed for unknown concept {c}")
            for child in kids:
                if child not in known:
                    raise HierarchyError(f"{c} references dangling child {child}")
                if child.level != c.level - 1:
                    raise HierarchyError(f"{c} has child {child} at the wrong level")

    @classmethod
    def build(cls, params, children: Mapping, level0: Iterable, labels=None, metadata=None):
        """Assemble from a parent->children map plus the level-0 concepts."""
        per_level: list[set] = [set() for _ in range(params.lmax + 1)]
        per_level[0].update(Concept(*c) for c in level0)
        kids = {}
        for c, cs in children.items():
            c = Concept(*c)
            per_level[c.level].add(c)
            kids[c] = tuple(sorted(Concept(*x) for x in cs))
        for c in per_level[0]:
            kids.setdefault(c, ())
        levels = tuple(tuple(sorted(s)) for s in per_level)
        return cls(params, levels, kids, dict(labels or {}), dict(metadata or {}))

    # -- lookup -----------------------------------------------------------
    @property
    def k(self) -> int:
        return self.params.k

    @property
    def lmax(self) -> int:
        return self.params.lmax

    @cached_property
    def concepts(self) -> tuple:
        return tuple(c for lvl in self.levels for c in lvl)

    @cached_property
    def _known(self) -> frozenset:
        return frozenset(self.concepts)

    def __contains__(self, c) -> bool:
        return c in self._known

    def _check(self, c) -> Concept:
        c = Concept(*c)
        if c not in self._known:
            raise KeyError(f"unknown concept {c}")
        return c

    @cached_property
    def parents(self) -> dict:
        out = {c: [] for c in self.concepts}
        for c in self.concepts:
            for child in self.children[c]:
                out[child].append(c)
        return {c: tuple(sorted(ps)) for c, ps in out.items()}

    @cached_property
    def _by_label(self) -> dict:
        return {label: c for c, label in self.labels.items()}

    def by_label(self, label: str) -> Concept:
        try:
            return self._by_label[label]
        except KeyError:
            raise KeyError(f"no concept labelled {label!r}") from None

    def name(self, c) -> str:
        return self.labels.get(c, str(Concept(*c)))

    def descendants(self, c) -> frozenset:
        c = self._check(c)
        return self._descendants[c]

    @cached_property
    def _descendants(self) -> dict:
        out = {}
        for lvl in self.levels:
            for c in lvl:
                acc = {c}
                for child in self.children[c]:
                    acc |= out[child]
                out[c] = frozenset(acc)
        return out

    def leaves(self, c) -> frozenset:
        return frozenset(d for d in self.descendants(c) if d.level == 0)

    def derived_sets(self, c) -> DerivedSets:
        c = self._check(c)
        return DerivedSets(
            frozenset(self.children[c]),
            frozenset(self.parents[c]),
            self.descendants(c),
            self.leaves(c),
        )

    # -- overlap ----------------------------------------------------------
    @cached_property
    def shared_counts(self) -> dict:
        """For each concept at level >= 1, how many of its children other same-level concepts also use."""
        out = {}
        for lvl in self.levels[1:]:
            uses: dict = {}
            for c in lvl:
                for child in self.children[c]:
                    uses[child] = uses.get(child, 0) + 1
            for c in lvl:
                out[c] = sum(1 for child in self.children[c] if uses[child] > 1)
        return out

    def achieved_overlap(self) -> list[int]:
        """Max shared-children count per level 1..lmax."""
        return [max((self.shared_counts[c] for c in lvl), default=0) for lvl in self.levels[1:]]

    @property
    def is_tree(self) -> bool:
        return all(v == 0 for v in self.shared_counts.values())

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        p = self.params
        concepts = []
        for c in self.concepts:
            rec = {"level": c.level, "index": c.index}
            if c in self.labels:
                rec["label"] = self.labels[c]
            rec["children"] = [[x.level, x.index] for x in self.children[c]]
            concepts.append(rec)
        out = {"params": {"n": p.n, "k": p.k, "lmax": p.lmax, "o": as_pair(p.o)}, "concepts": concepts}
        if self.metadata:
            out["metadata"] = self.metadata
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, data: Mapping) -> ConceptHierarchy:
        pp = data["params"]
        params = HierarchyParams(pp["n"], pp["k"], pp["lmax"], as_fraction(pp["o"]))
        children, level0, labels = {}, [], {}
        for rec in data["concepts"]:
            c = Concept(rec["level"], rec["index"])
            if c.level == 0:
                level0.append(c)
                if rec.get("children"):
                    raise HierarchyError(f"level-0 concept {c} has children")
            else:
                children[c] = [tuple(x) for x in rec["children"]]
            if "label" in rec:
                labels[c] = rec["label"]
        return cls.build(params, children, level0, labels, data.get("metadata"))

    @classmethod
    def from_json(cls, text: str) -> ConceptHierarchy:
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple
    tree: bool

    @property
    def ok(self) -> bool:
        return not self.violations


def validate(h: ConceptHierarchy) -> ValidationReport:
    """Check top-level count, exact branching, limited overlap, and |C_0| <= n."""
    p = h.params
    bad = []
    if len(h.levels[p.lmax]) != p.k:
        bad.append(f"top level has {len(h.levels[p.lmax])} concepts, expected k={p.k}")
    for lvl in h.levels[1:]:
        for c in lvl:
            if len(h.children[c]) != p.k:
                bad.append(f"{h.name(c)} has {len(h.children[c])} children, expected k={p.k}")
    for c, shared in h.shared_counts.items():
        if shared > p.o * p.k:
            bad.append(f"{h.name(c)} shares {shared} children with siblings, bound o*k={p.o * p.k}")
    if len(h.levels[0]) > p.n:
        bad.append(f"|C_0| = {len(h.levels[0])} exceeds n={p.n}")
    return ValidationReport(tuple(bad), h.is_tree)


# -- generators -------------------------------------------------------------

def gen_tree(params: HierarchyParams, seed: int) -> ConceptHierarchy:
    """Random tree: fixed shape, seeded child assignment and level-0 ids."""
    k, lmax = params.k, params.lmax
    n_leaves = k ** (lmax + 1)
    if params.n < n_leaves:
        raise CapacityError(f"a tree with k={k}, lmax={lmax} needs n >= {n_leaves}, got n={params.n}")
    rng = random.Random(seed)
    children = {}
    for lvl in range(lmax, 0, -1):
        n_parents = k ** (lmax - lvl + 1)
        if lvl == 1:
            slots = rng.sample(range(params.n), n_parents * k)
        else:
            slots = list(range(n_parents * k))
            rng.shuffle(slots)
        for i in range(n_parents):
            children[Concept(lvl, i)] = [Concept(lvl - 1, s) for s in slots[i * k:(i + 1) * k]]
    level0 = [c for kids in children.values() for c in kids if c.level == 0]
    return ConceptHierarchy.build(params, children, level0, metadata={"kind": "tree", "seed": seed})


def gen_overlap(params: HierarchyParams, seed: int) -> ConceptHierarchy:
    """Random hierarchy where each concept may reuse children unique to its predecessor at the same level."""
    k, lmax, cap = params.k, params.lmax, params.shared_cap
    rng = random.Random(seed)
    children = {}
    width = k
    for lvl in range(lmax, 0, -1):
        next_id = 0
        prev_unique: list[int] = []
        prev_taken = 0
        for i in range(width):
            if i == 0:
                taken = 0
            else:
                taken = rng.randint(0, max(0, min(cap - prev_taken, k - 1, len(prev_unique))))
            shared = rng.sample(prev_unique, taken)
            fresh = list(range(next_id, next_id + k - taken))
            next_id += k - taken
            children[Concept(lvl, i)] = shared + fresh
            prev_unique, prev_taken = fresh, taken
        width = next_id
    if width > params.n:
        raise CapacityError(f"overlap hierarchy needs {width} level-0 concepts, n={params.n}")
    ids = rng.sample(range(params.n), width)
    for c, kids in children.items():
        lower = c.level - 1
        children[c] = [Concept(0, ids[s]) if lower == 0 else Concept(lower, s) for s in kids]
    level0 = [Concept(0, i) for i in ids]
    h = ConceptHierarchy.build(params, children, level0, metadata={"kind": "overlap", "seed": seed})
    h.metadata["achieved_overlap"] = h.achieved_overlap()
    return h


def gen_lower_bound(k: int, lmax: int, r) -> tuple[ConceptHierarchy, frozenset]:
    """Chain instance: leftmost children of level-3 concepts share single children in sequence.

    Returns the hierarchy and the input set; the chain c_1..c_m is also kept in
    ``metadata["chain"]``.
    """
    r = as_fraction(r)
    if lmax < 3:
        raise InfeasibleParameters(f"chain instance needs lmax >= 3, got {lmax}")
    if k < 2:
        raise InfeasibleParameters(f"chain instance needs k >= 2, got {k}")
    if not 0 < r <= 1:
        raise InfeasibleParameters(f"r must lie in (0, 1], got {r}")
    need = math.ceil(r * k)
    if need > k:
        raise InfeasibleParameters(f"ceil(r*k) = {need} exceeds k = {k}", {"k - ceil(rk)": k - need})

    children = {}
    for lvl in range(lmax, 2, -1):
        for i in range(k ** (lmax - lvl + 1)):
            children[Concept(lvl, i)] = [Concept(lvl - 1, i * k + j) for j in range(k)]
    m = k ** (lmax - 2)
    chain = [Concept(2, j * k) for j in range(m)]
    chain_pos = {c: i for i, c in enumerate(chain)}

    next_id = 0
    for i in range(k * m):
        c = Concept(2, i)
        kids = []
        pos = chain_pos.get(c)
        if pos is not None and pos > 0:
            kids.append(children[chain[pos - 1]][k - 1])
        while len(kids) < k:
            kids.append(Concept(1, next_id))
            next_id += 1
        children[c] = kids
    for i in range(next_id):
        children[Concept(1, i)] = [Concept(0, i * k + j) for j in range(k)]

    inputs = set()
    for pos, c in enumerate(chain):
        kids = children[c]
        first_shared = pos > 0
        last_shared = pos < m - 1
        for j in range(need):
            if (j == 0 and first_shared) or (j == k - 1 and last_shared):
                continue
            inputs.update(children[kids[j]])
        if last_shared:
            inputs.update(children[kids[k - 1]][: need - 1])

    params = HierarchyParams(n=next_id * k, k=k, lmax=lmax, o=Fraction(2, k))
    meta = {
        "kind": "lowerbound",
        "r": as_pair(r),
        "chain": [[c.level, c.index] for c in chain],
        "input": sorted([c.level, c.index] for c in inputs),
    }
    level0 = [Concept(0, i) for i in range(next_id * k)]
    h = ConceptHierarchy.build(params, children, level0, metadata=meta)
    return h, frozenset(inputs)


def lower_bound_chain(h: ConceptHierarchy) -> list[Concept]:
    return [Concept(*c) for c in h.metadata["chain"]]


def stored_input(h: ConceptHierarchy) -> frozenset:
    """Input set kept in a fixture's metadata."""
    return frozenset(Concept(*c) for c in h.metadata["input"])


_MENU = {
    "Emilia-Romagna": {
        "pasta Bolognese": ["tagliatelle", "ground beef", "tomatoes", "parmesan cheese"],
        "cotoletta di vitello alla Bolognese": ["veal cutlets", "breadcrumbs", "prosciutto", "parmesan cheese"],
        "insalata di radicchio": ["radicchio", "goat cheese", "speck", "balsamic vinegar"],
        "zuppa Inglese": ["ladyfingers", "custard", "Alchermes liqueur", "cocoa powder"],
    },
    "Campania": {
        "pizza Margherita": ["pizza dough", "tomatoes", "mozzarella", "basil"],
        "spaghetti alla puttanesca": ["spaghetti", "olives", "tomatoes", "anchovies"],
        "acqua pazza": ["cod", "fennel", "tomatoes", "chili peppers"],
        "struffoli": ["dough balls", "honey", "almonds", "colored sprinkles"],
    },
    "Sicilia": {
        "carciofi al forno": ["artichokes", "lemon", "pancetta", "breadcrumbs"],
        "pasta e cavolfiore": ["penne", "cauliflower", "raisins", "pecorino cheese"],
        "pesce spada": ["swordfish", "capers", "butter", "olive oil"],
        "cannoli": ["cannoli shells", "ricotta", "sugar", "pistachios"],
    },
    "Toscana": {
        "ribollita": ["cannellini beans", "carrot", "onion", "olive oil"],
        "risotto al Chianti": ["arborio rice", "chianti", "onion", "celery"],
        "bistecca Fiorentina": ["steak", "spinach", "rosemary", "olive oil"],
        "pesche con amaretti": ["peaches", "amaretti biscuits", "marsala", "lemon"],
    },
}

_ORDER = [
    "artichokes", "basil", "breadcrumbs", "butter", "cannellini beans", "capers", "carrot",
    "cauliflower", "chili peppers", "cod", "lemon", "olive oil", "onion", "parmesan cheese",
    "pecorino cheese", "pistachios", "ricotta", "spinach", "steak", "sugar", "tomatoes",
]


def restaurant_fixture() -> tuple[ConceptHierarchy, frozenset]:
    """Four regional meals of four dishes of four ingredients (k=4, lmax=2, o=1/2) and the 21-ingredient order."""
    ingredients: dict[str, Concept] = {}
    labels, children = {}, {}
    for m, (meal, dishes) in enumerate(_MENU.items()):
        meal_id = Concept(2, m)
        labels[meal_id] = meal
        children[meal_id] = []
        for dish, items in dishes.items():
            dish_id = Concept(1, 4 * m + len(children[meal_id]))
            labels[dish_id] = dish
            children[meal_id].append(dish_id)
            kids = []
            for item in items:
                if item not in ingredients:
                    ingredients[item] = Concept(0, len(ingredients))
                    labels[ingredients[item]] = item
                kids.append(ingredients[item])
            children[dish_id] = kids
    inputs = frozenset(ingredients[name] for name in _ORDER)
    params = HierarchyParams(n=len(ingredients), k=4, lmax=2, o=Fraction(1, 2))
    meta = {
        "kind": "restaurant",
        "r": [3, 4],
        "f": [1, 1],
        "input": sorted([c.level, c.index] for c in inputs),
    }
    h = ConceptHierarchy.build(params, children, ingredients.values(), labels, meta)
    return h, inputs
