"""Reference implementations used as test oracles.

These are deliberately naive (exhaustive search, plain dynamic programming)
and share no code with the package beyond its data types.
"""

from __future__ import annotations

import itertools
import random
from collections import deque

from star.kg import FunctionalUnit, MotionNode, ObjectNode
from star.planner.ground import GroundAction, GroundedPlanningTask
from star.planner.model import Literal

SEED = 2026


# ---------------------------------------------------------------------------
# execution semantics over plain dicts


def holds(world: dict, req: ObjectNode) -> bool:
    have = world.get(req.name)
    if have is None:
        return False
    return set(req.states) <= set(have.states) and set(req.contains) <= set(have.contains)


def step(world: dict, unit: FunctionalUnit) -> dict | None:
    if not all(holds(world, r) for r in unit.inputs):
        return None
    out_names = {o.name for o in unit.outputs}
    nxt = {k: v for k, v in world.items() if k not in {i.name for i in unit.inputs} - out_names}
    for o in unit.outputs:
        nxt[o.name] = o
    return nxt


def simulate(units, kitchen) -> dict | None:
    world = {o.name: o for o in kitchen}
    for u in units:
        world = step(world, u)
        if world is None:
            return None
    return world


def exhaustive_solvable(units, kitchen, goal: ObjectNode) -> bool:
    """Is there any sequence of distinct units reaching the goal?"""
    start = {o.name: o for o in kitchen}
    seen = set()
    stack = [(frozenset(), start)]
    while stack:
        used, world = stack.pop()
        if holds(world, goal):
            return True
        key = (used, frozenset(world.items()))
        if key in seen:
            continue
        seen.add(key)
        for i, u in enumerate(units):
            if i in used:
                continue
            nxt = step(world, u)
            if nxt is not None:
                stack.append((used | {i}, nxt))
    return False


# ---------------------------------------------------------------------------
# random FOON stores

NAMES = [f"obj{i}" for i in range(8)]
STATES = ["hot", "cut", "wet"]


def random_node(rng: random.Random, name: str, max_states: int = 1) -> ObjectNode:
    states = rng.sample(STATES, rng.randint(0, max_states))
    return ObjectNode(name, tuple(states))


def random_store_case(rng: random.Random):
    n_units = rng.randint(1, 12)
    units = []
    for _ in range(n_units):
        ins = rng.sample(NAMES, rng.randint(1, 3))
        outs = rng.sample(NAMES, rng.randint(1, 2))
        u = FunctionalUnit(
            [random_node(rng, n) for n in ins],
            MotionNode(rng.choice(["mix", "cut", "pour", "heat"])),
            [random_node(rng, n, 2) for n in outs],
        )
        units.append(u)
    kitchen = [random_node(rng, n, 2) for n in rng.sample(NAMES, rng.randint(1, 5))]
    goal = random_node(rng, rng.choice(NAMES))
    return units, kitchen, goal


# ---------------------------------------------------------------------------
# STRIPS


def bfs_length(task: GroundedPlanningTask) -> int | None:
    start = task.init
    if task.goal <= start:
        return 0
    dist = {start: 0}
    q = deque([start])
    while q:
        s = q.popleft()
        for a in task.actions:
            if a.pre <= s:
                t = (s - a.delete) | a.add
                if t not in dist:
                    dist[t] = dist[s] + 1
                    if task.goal <= t:
                        return dist[t]
                    q.append(t)
    return None


def run_plan(task: GroundedPlanningTask, steps) -> bool:
    by_name = {a.name: a for a in task.actions}
    s = task.init
    for name in steps:
        a = by_name.get(name)
        if a is None or not a.pre <= s:
            return False
        s = (s - a.delete) | a.add
    return task.goal <= s


def relaxed_optimum(task: GroundedPlanningTask) -> int | None:
    """Smallest action set whose delete-free execution reaches the goal."""
    acts = task.actions
    for k in range(len(acts) + 1):
        for combo in itertools.combinations(range(len(acts)), k):
            reached = set(task.init)
            pending = set(combo)
            progress = True
            while progress:
                progress = False
                for i in list(pending):
                    if acts[i].pre <= reached:
                        reached |= acts[i].add
                        pending.discard(i)
                        progress = True
            if not pending and task.goal <= reached:
                return k
    return None


def random_task(rng: random.Random, n_facts=(3, 12), n_actions=(2, 20), delete_free=False) -> GroundedPlanningTask:
    nf = rng.randint(*n_facts)
    facts = [Literal("p", (f"f{i}",)) for i in range(nf)]
    actions = []
    for j in range(rng.randint(*n_actions)):
        pre = frozenset(rng.sample(range(nf), rng.randint(0, min(2, nf))))
        add = frozenset(rng.sample(range(nf), rng.randint(1, min(2, nf))))
        dele = frozenset() if delete_free else frozenset(rng.sample(range(nf), rng.randint(0, min(2, nf)))) - add
        actions.append(GroundAction(f"(a{j})", pre, add, dele))
    init = frozenset(rng.sample(range(nf), rng.randint(0, min(3, nf))))
    goal = frozenset(rng.sample(range(nf), rng.randint(1, min(3, nf))))
    return GroundedPlanningTask(facts, actions, init, goal)


def solvable_tasks(rng: random.Random, count: int, delete_free=False, **kw):
    out = []
    while len(out) < count:
        t = random_task(rng, delete_free=delete_free, **kw)
        n = bfs_length(t)
        if n is not None and n >= 1:
            out.append((t, n))
    return out


# ---------------------------------------------------------------------------
# sequences


def lcs_length(a, b) -> int:
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) - 1, -1, -1):
        for j in range(len(b) - 1, -1, -1):
            if a[i] == b[j]:
                table[i][j] = 1 + table[i + 1][j + 1]
            else:
                table[i][j] = max(table[i + 1][j], table[i][j + 1])
    return table[0][0]
