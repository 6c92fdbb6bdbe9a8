"""Forward search over grounded tasks: greedy best-first on the FF
relaxed-plan heuristic, breadth-first as fallback and reference."""

from __future__ import annotations

import heapq
import itertools
import math
from collections import deque

from .ground import GroundedPlanningTask
from .model import Plan

DEFAULT_NODE_BUDGET = 1_000_000


class UnsolvableError(RuntimeError):
    pass


class NodeBudgetExceeded(RuntimeError):
    pass


class RelaxedPlanner:
    """Builds delete-relaxed planning graphs for one task and extracts FF
    relaxed plans from them."""

    def __init__(self, task: GroundedPlanningTask):
        self.task = task
        self.achievers: dict[int, list[int]] = {}
        for ai, a in enumerate(task.actions):
            for f in a.add:
                self.achievers.setdefault(f, []).append(ai)

    def relaxed_plan(self, state: frozenset[int]) -> list[int] | None:
        """Indexes of the actions in an FF relaxed plan from ``state``, or
        None if the goal is unreachable even without delete effects."""
        actions = self.task.actions
        goal = self.task.goal
        fact_level = {f: 0 for f in state}
        act_level: dict[int, int] = {}
        reached = set(state)
        pending = list(range(len(actions)))
        level = 0
        while not goal <= reached:
            new: list[int] = []
            rest: list[int] = []
            for ai in pending:
                if actions[ai].pre <= reached:
                    act_level[ai] = level
                    for f in actions[ai].add:
                        if f not in reached and f not in fact_level:
                            fact_level[f] = level + 1
                            new.append(f)
                else:
                    rest.append(ai)
            if not new:
                return None
            reached.update(new)
            pending = rest
            level += 1

        goals_at: dict[int, set[int]] = {}
        for g in goal:
            goals_at.setdefault(fact_level[g], set()).add(g)
        true_at: dict[int, set[int]] = {}
        chosen: list[int] = []
        chosen_set: set[int] = set()
        for lvl in range(max(goals_at, default=0), 0, -1):
            # achievers: lowest difficulty, then most open goals covered, then index
            open_goals = {x for l2, gs in goals_at.items() if l2 <= lvl for x in gs}
            open_goals -= true_at.get(lvl, set())
            for g in sorted(goals_at.get(lvl, ())):
                if g in true_at.get(lvl, ()):
                    continue
                best = min(
                    (ai for ai in self.achievers.get(g, ()) if act_level.get(ai) == lvl - 1),
                    key=lambda ai: (
                        sum(fact_level[p] for p in actions[ai].pre),
                        -len(actions[ai].add & open_goals),
                        ai,
                    ),
                )
                if best not in chosen_set:
                    chosen.append(best)
                    chosen_set.add(best)
                for p in actions[best].pre:
                    pl = fact_level[p]
                    if pl > 0 and p not in true_at.get(lvl - 1, ()):
                        goals_at.setdefault(pl, set()).add(p)
                # only goals at this level may reuse the achiever; marking
                # earlier levels would let an action support its own preconditions
                true_at.setdefault(lvl, set()).update(actions[best].add)
        return self._drop_redundant(state, chosen)

    def _reaches_goal(self, state: frozenset[int], acts: list[int]) -> bool:
        actions = self.task.actions
        reached = set(state)
        pending = list(acts)
        progress = True
        while pending and progress:
            progress = False
            for ai in list(pending):
                if actions[ai].pre <= reached:
                    reached |= actions[ai].add
                    pending.remove(ai)
                    progress = True
        return not pending and self.task.goal <= reached

    def _drop_redundant(self, state: frozenset[int], chosen: list[int]) -> list[int]:
        """Remove actions (latest selected first) whose removal still leaves a
        relaxed plan."""
        plan = list(chosen)
        for ai in reversed(chosen):
            trial = [x for x in plan if x != ai]
            if self._reaches_goal(state, trial):
                plan = trial
        return plan

    def h_ff(self, state: frozenset[int]) -> float:
        rp = self.relaxed_plan(state)
        return math.inf if rp is None else len(rp)


def h_ff(task: GroundedPlanningTask, state: frozenset[int] | None = None) -> float:
    return RelaxedPlanner(task).h_ff(task.init if state is None else state)


def _extract(parents: dict, state: frozenset[int]) -> list[str]:
    steps: list[str] = []
    while parents[state] is not None:
        prev, name = parents[state]
        steps.append(name)
        state = prev
    return steps[::-1]


def breadth_first(task: GroundedPlanningTask, node_budget: int = DEFAULT_NODE_BUDGET) -> Plan | None:
    """Shortest plan by breadth-first search; None when unsolvable."""
    if task.goal <= task.init:
        return Plan([])
    parents: dict = {task.init: None}
    queue = deque([task.init])
    expanded = 0
    while queue:
        state = queue.popleft()
        expanded += 1
        if expanded > node_budget:
            raise NodeBudgetExceeded(f"more than {node_budget} expansions")
        for a in task.actions:
            if a.pre <= state:
                nxt = a.apply(state)
                if nxt not in parents:
                    parents[nxt] = (state, a.name)
                    if task.goal <= nxt:
                        return Plan(_extract(parents, nxt))
                    queue.append(nxt)
    return None


def solve(task: GroundedPlanningTask, node_budget: int = DEFAULT_NODE_BUDGET) -> Plan:
    """Greedy best-first search on h_FF with ties broken by insertion order.

    States whose relaxed plan does not exist are dead ends and are dropped.
    Raises UnsolvableError when the reachable space is exhausted.
    """
    if task.goal <= task.init:
        return Plan([])
    rp = RelaxedPlanner(task)
    h0 = rp.h_ff(task.init)
    if h0 == math.inf:
        plan = breadth_first(task, node_budget)
        if plan is None:
            raise UnsolvableError("goal unreachable from the initial state")
        return _checked(plan, task)
    counter = itertools.count()
    parents: dict = {task.init: None}
    open_list = [(h0, next(counter), task.init)]
    expanded = 0
    while open_list:
        _, _, state = heapq.heappop(open_list)
        expanded += 1
        if expanded > node_budget:
            raise NodeBudgetExceeded(f"more than {node_budget} expansions")
        for a in task.actions:
            if not a.pre <= state:
                continue
            nxt = a.apply(state)
            if nxt in parents:
                continue
            parents[nxt] = (state, a.name)
            if task.goal <= nxt:
                return _checked(Plan(_extract(parents, nxt)), task)
            h = rp.h_ff(nxt)
            if h != math.inf:
                heapq.heappush(open_list, (h, next(counter), nxt))
    raise UnsolvableError("search space exhausted without reaching the goal")


def validate_plan(plan: Plan, task: GroundedPlanningTask) -> tuple[bool, int | None]:
    """Simulate ``plan`` from init. Returns (ok, index of first failing step);
    the index equals len(plan) when every step applies but the goal is unmet."""
    state = task.init
    for i, step in enumerate(plan.steps):
        a = task.action_index.get(step)
        if a is None or not a.pre <= state:
            return False, i
        state = a.apply(state)
    if not task.goal <= state:
        return False, len(plan.steps)
    return True, None


def final_state(plan: Plan, task: GroundedPlanningTask) -> frozenset[int]:
    state = task.init
    for step in plan.steps:
        state = task.action_index[step].apply(state)
    return state


def _checked(plan: Plan, task: GroundedPlanningTask) -> Plan:
    ok, bad = validate_plan(plan, task)
    if not ok:
        raise AssertionError(f"planner produced an invalid plan (step {bad})")
    return plan
