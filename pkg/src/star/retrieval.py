"""Task-tree retrieval from the FOON section of a knowledge store.

Three outcomes: an exact tree for the requested goal, a tree for another dish
of the same class (a starting point for repair), or nothing.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Mapping

from .kg import FunctionalUnit, KnowledgeStore, ObjectNode, TaskTree

MAX_DEPTH = 64
NODE_BUDGET = 500_000


class RetrievalError(RuntimeError):
    pass


class RetrievalCycleError(RetrievalError):
    def __init__(self, obj: str):
        self.object = obj
        super().__init__(f"cyclic dependency through object {obj!r}")


class RetrievalDepthError(RetrievalError):
    pass


# ---------------------------------------------------------------------------
# Dish taxonomy


@dataclass(frozen=True)
class DishClass:
    class_id: int
    label: str


OTHER = DishClass(-1, "other")


class DishTaxonomy:
    """Keyword taxonomy of exactly 30 dish classes plus the implicit ``other``."""

    N_CLASSES = 30

    def __init__(self, classes: Iterable[tuple[str, Iterable[str]]]):
        self.classes: list[DishClass] = []
        self._keywords: list[tuple[str, DishClass]] = []
        for cid, (label, keywords) in enumerate(classes):
            label = label.strip().lower()
            dc = DishClass(cid, label)
            self.classes.append(dc)
            for kw in keywords:
                kw = " ".join(kw.strip().lower().split())
                if kw:
                    self._keywords.append((kw, dc))
        labels = [c.label for c in self.classes]
        if len(labels) != self.N_CLASSES:
            raise ValueError(f"taxonomy must define exactly {self.N_CLASSES} classes, got {len(labels)}")
        if len(set(labels)) != len(labels) or "other" in labels:
            raise ValueError("taxonomy labels must be unique and must not include 'other'")

    @classmethod
    def parse(cls, text: str) -> DishTaxonomy:
        entries = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            label, colon, kws = line.partition(":")
            if not colon or not label.strip():
                raise ValueError(f"taxonomy line {lineno}: expected 'label: keyword, ...'")
            entries.append((label, [k for k in kws.split(",")]))
        return cls(entries)

    @classmethod
    def default(cls) -> DishTaxonomy:
        text = resources.files("star.data").joinpath("taxonomy.txt").read_text(encoding="utf-8")
        return cls.parse(text)

    def classify(self, goal_name: str) -> DishClass:
        name = " ".join(goal_name.strip().lower().split())
        if not name:
            raise ValueError("empty goal name")
        best: tuple[int, int, DishClass] | None = None
        for kw, dc in self._keywords:
            if re.search(r"(?<![a-z0-9])" + re.escape(kw) + r"(?![a-z0-9])", name):
                key = (-len(kw), dc.class_id, dc)
                if best is None or key[:2] < best[:2]:
                    best = key
        return best[2] if best else OTHER


def classify_dish(goal_name: str, taxonomy: DishTaxonomy) -> DishClass:
    return taxonomy.classify(goal_name)


# ---------------------------------------------------------------------------
# Kitchen state


class KitchenState:
    """Objects observed in the environment, keyed by name."""

    def __init__(self, available: Iterable[ObjectNode] = ()):
        self.objects: dict[str, ObjectNode] = {}
        for o in available:
            if o.name in self.objects:
                raise ValueError(f"duplicate kitchen object {o.name!r}")
            self.objects[o.name] = o

    @property
    def available(self) -> frozenset[ObjectNode]:
        return frozenset(self.objects.values())

    def satisfies(self, required: ObjectNode) -> bool:
        have = self.objects.get(required.name)
        return have is not None and have.satisfies(required)

    def __iter__(self):
        return iter(sorted(self.objects.values(), key=lambda o: o.name))

    def __len__(self) -> int:
        return len(self.objects)

    @classmethod
    def from_world(cls, cfg) -> KitchenState:
        return cls(list(cfg.objects) + list(cfg.collateral))


def parse_goal(text: str) -> ObjectNode:
    """``name`` or ``name | state,state``."""
    node = ObjectNode.from_text(text)
    if not node.name:
        raise ValueError("empty goal name")
    return node


# ---------------------------------------------------------------------------
# Exact search


def _apply(world: Mapping[str, ObjectNode], unit: FunctionalUnit) -> dict[str, ObjectNode] | None:
    for req in unit.inputs:
        have = world.get(req.name)
        if have is None or not have.satisfies(req):
            return None
    nxt = dict(world)
    for c in unit.consumed_inputs():
        nxt.pop(c.name, None)
    for o in unit.outputs:
        nxt[o.name] = o
    return nxt


def _find_order(chosen: list[FunctionalUnit], initial: dict[str, ObjectNode], done_check) -> list[FunctionalUnit] | None:
    """An execution order using every chosen unit after which ``done_check``
    holds. Units chosen later in the backward pass sit deeper in the
    dependency chain, so they are tried first."""
    prefer = list(reversed(chosen))
    failed: set = set()

    def rec(done: frozenset, world: dict[str, ObjectNode], seq: list[FunctionalUnit]):
        if len(done) == len(prefer):
            return list(seq) if done_check(world) else None
        key = (done, frozenset(world.values()))
        if key in failed:
            return None
        for u in prefer:
            if u.unit_id in done:
                continue
            nxt = _apply(world, u)
            if nxt is None:
                continue
            seq.append(u)
            got = rec(done | {u.unit_id}, nxt, seq)
            if got is not None:
                return got
            seq.pop()
        failed.add(key)
        return None

    return rec(frozenset(), initial, [])


def backward_search(
    units: Mapping[str, FunctionalUnit],
    output_index: Mapping[str, Iterable[str]],
    kitchen: KitchenState,
    requirements: Iterable[ObjectNode],
    done_check,
    seed: Iterable[FunctionalUnit] = (),
    *,
    max_depth: int = MAX_DEPTH,
    node_budget: int = NODE_BUDGET,
) -> list[FunctionalUnit] | None:
    """Backward chaining over ``units`` from ``requirements``.

    Each open requirement is resolved by the kitchen if it already holds,
    else by a producing unit (fewest inputs missing from the kitchen first,
    then lowest unit_id). Choices are backtracked when the collected units
    admit no execution order ending in ``done_check``, so a unit sequence is
    found whenever one exists. ``seed`` units are included from the start.
    Raises RetrievalCycleError when the only producers found lie on cycles.
    """
    initial = dict(kitchen.objects)

    def missing(u: FunctionalUnit) -> int:
        return sum(1 for i in u.inputs if not kitchen.satisfies(i))

    producer_cache: dict[ObjectNode, list[FunctionalUnit]] = {}

    def producers(req: ObjectNode) -> list[FunctionalUnit]:
        if req not in producer_cache:
            cands = [
                units[uid]
                for uid in output_index.get(req.name, ())
                if any(o.satisfies(req) for o in units[uid].outputs)
            ]
            producer_cache[req] = sorted(cands, key=lambda u: (missing(u), u.unit_id))
        return producer_cache[req]

    cyclic: list[str] = []
    visited: set = set()
    order_cache: dict[frozenset, list[FunctionalUnit] | None] = {}
    nodes = 0

    def dfs(chosen: list[FunctionalUnit], pending: tuple) -> list[FunctionalUnit] | None:
        nonlocal nodes
        nodes += 1
        if nodes > node_budget:
            raise RetrievalError(f"search budget of {node_budget} nodes exceeded")
        if not pending:
            key = frozenset(u.unit_id for u in chosen)
            if key not in order_cache:
                order_cache[key] = _find_order(chosen, initial, done_check)
            return order_cache[key]
        chosen_ids = frozenset(u.unit_id for u in chosen)
        state_key = (chosen_ids, pending)
        if state_key in visited:
            return None
        visited.add(state_key)
        (req, anc), rest = pending[0], pending[1:]
        if len(anc) > max_depth:
            raise RetrievalDepthError(f"dependency chain deeper than {max_depth} at {req.name!r}")
        if kitchen.satisfies(req):
            got = dfs(chosen, rest)
            if got is not None:
                return got
        for u in producers(req):
            if u.unit_id in anc:
                cyclic.append(req.name)
                continue
            if u.unit_id in chosen_ids:
                got = dfs(chosen, rest)
            else:
                new = tuple((i, anc | {u.unit_id}) for i in u.inputs)
                got = dfs(chosen + [u], new + rest)
            if got is not None:
                return got
        return None

    seed = list(seed)
    anc0 = frozenset(u.unit_id for u in seed)
    order = dfs(seed, tuple((r, anc0) for r in requirements))
    if order is None and cyclic:
        raise RetrievalCycleError(cyclic[0])
    return order


def search_exact(
    store: KnowledgeStore,
    goal: ObjectNode,
    kitchen: KitchenState,
    *,
    section: str = "foon",
    max_depth: int = MAX_DEPTH,
    node_budget: int = NODE_BUDGET,
) -> TaskTree | None:
    """Task tree producing ``goal`` from ``kitchen``, units in dependency
    order; an empty tree when the kitchen already holds the goal."""
    if kitchen.satisfies(goal):
        return TaskTree([], goal)
    sec = store.section(section)

    def reached(world: dict[str, ObjectNode]) -> bool:
        have = world.get(goal.name)
        return have is not None and have.satisfies(goal)

    order = backward_search(
        sec.units, sec.output_index, kitchen, [goal], reached,
        max_depth=max_depth, node_budget=node_budget,
    )
    return None if order is None else TaskTree(order, goal)


# ---------------------------------------------------------------------------
# Three-case retrieval


class RetrievalCase(enum.Enum):
    NO_MATCH = "NoMatch"
    CATEGORY_MATCH = "CategoryMatch"
    EXACT_MATCH = "ExactMatch"

    @property
    def number(self) -> int:
        return {"NoMatch": 1, "CategoryMatch": 2, "ExactMatch": 3}[self.value]


@dataclass
class RetrievalOutcome:
    case: RetrievalCase
    tree: TaskTree | None = None
    partial_source: str | None = None
    dish_class: DishClass | None = None


def retrieve(
    store: KnowledgeStore,
    request_goal: str | ObjectNode,
    kitchen: KitchenState,
    taxonomy: DishTaxonomy,
) -> RetrievalOutcome:
    goal = parse_goal(request_goal) if isinstance(request_goal, str) else request_goal
    tree = search_exact(store, goal, kitchen)
    dish = taxonomy.classify(goal.name)
    if tree is not None:
        return RetrievalOutcome(RetrievalCase.EXACT_MATCH, tree, dish_class=dish)
    if dish != OTHER:
        for candidate in store.build_category_index(taxonomy).get(dish.label, []):
            if candidate == goal.name:
                continue
            approx = search_exact(store, ObjectNode(candidate), kitchen)
            if approx is not None and approx.units:
                return RetrievalOutcome(RetrievalCase.CATEGORY_MATCH, approx, candidate, dish)
    return RetrievalOutcome(RetrievalCase.NO_MATCH, dish_class=dish)
