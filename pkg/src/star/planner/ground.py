"""Typed grounding of STRIPS schemas into an indexed planning task."""

from __future__ import annotations

from dataclasses import dataclass

from .model import Literal, StripsDomain, StripsProblem

DEFAULT_MAX_GROUNDED = 1_000_000


class GroundingError(ValueError):
    pass


class GroundingLimitError(GroundingError):
    pass


@dataclass(frozen=True)
class GroundAction:
    name: str
    pre: frozenset[int]
    add: frozenset[int]
    delete: frozenset[int]

    def applicable(self, state: frozenset[int]) -> bool:
        return self.pre <= state

    def apply(self, state: frozenset[int]) -> frozenset[int]:
        return (state - self.delete) | self.add


@dataclass
class GroundedPlanningTask:
    facts: list[Literal]
    actions: list[GroundAction]
    init: frozenset[int]
    goal: frozenset[int]

    def __post_init__(self) -> None:
        self.fact_index = {f: i for i, f in enumerate(self.facts)}
        self.action_index = {a.name: a for a in self.actions}

    def describe(self, state) -> list[str]:
        return sorted(str(self.facts[i]) for i in state)


def type_closure(domain: StripsDomain) -> dict[str, set[str]]:
    """Map each type to itself and all its ancestors."""
    parent = {t: p for t, p in domain.types}
    out: dict[str, set[str]] = {}
    for t in set(parent) | set(parent.values()) | {"object"}:
        seen = {t}
        cur = t
        while cur in parent and parent[cur] not in seen:
            cur = parent[cur]
            seen.add(cur)
        seen.add("object")
        out[t] = seen
    return out


def objects_by_type(domain: StripsDomain, problem: StripsProblem) -> dict[str, list[str]]:
    closure = type_closure(domain)
    typed: dict[str, str] = {}
    for name, typ in list(domain.constants) + list(problem.objects):
        if name in typed and typed[name] != typ:
            raise GroundingError(f"object {name!r} declared with two types")
        typed[name] = typ
    by_type: dict[str, list[str]] = {}
    for name, typ in typed.items():
        for t in closure.get(typ, {typ, "object"}):
            by_type.setdefault(t, []).append(name)
    for names in by_type.values():
        names.sort()
    return by_type


def ground(
    domain: StripsDomain,
    problem: StripsProblem,
    max_actions: int = DEFAULT_MAX_GROUNDED,
) -> GroundedPlanningTask:
    """Instantiate every schema over typed objects.

    Partial bindings are cut as soon as a fully bound precondition can be
    neither in the initial state nor produced by any add effect. After
    instantiation, actions with a precondition outside init and every
    remaining add list are pruned until nothing changes.
    """
    by_type = objects_by_type(domain, problem)
    init = set(problem.init)
    closure = type_closure(domain)
    obj_types: dict[str, set[str]] = {}
    for name, typ in list(domain.constants) + list(problem.objects):
        obj_types[name] = closure.get(typ, {typ, "object"})

    # add-effect patterns: (pred, per-position constant or required type)
    patterns: dict[str, list[tuple]] = {}
    for schema in domain.actions:
        ptype = dict(schema.parameters)
        for lit in schema.add:
            pos = tuple(("var", ptype[a]) if a.startswith("?") else ("const", a) for a in lit.args)
            patterns.setdefault(lit.predicate, []).append(pos)

    addable_cache: dict[Literal, bool] = {}

    def possible(fact: Literal) -> bool:
        if fact in init:
            return True
        hit = addable_cache.get(fact)
        if hit is None:
            hit = False
            for pos in patterns.get(fact.predicate, ()):
                if all(
                    (kind == "const" and val == arg) or (kind == "var" and val in obj_types.get(arg, ()))
                    for (kind, val), arg in zip(pos, fact.args)
                ):
                    hit = True
                    break
            addable_cache[fact] = hit
        return hit

    raw: list[tuple[str, list[Literal], list[Literal], list[Literal]]] = []
    for schema in domain.actions:
        params = schema.parameters
        in_pre = {a for lit in schema.precondition for a in lit.args}
        order = sorted(range(len(params)), key=lambda i: (params[i][0] not in in_pre, i))
        # preconditions become checkable once all their variables are bound
        check_at: dict[int, list[Literal]] = {}
        for lit in schema.precondition:
            vars_in = [order.index(i) for i, (v, _) in enumerate(params) if v in lit.args]
            check_at.setdefault(max(vars_in) if vars_in else -1, []).append(lit)

        def subst(lit: Literal, binding: dict[str, str]) -> Literal:
            return Literal(lit.predicate, tuple(binding.get(a, a) for a in lit.args))

        binding: dict[str, str] = {}
        if any(not possible(subst(l, binding)) for l in check_at.get(-1, ())):
            continue

        def rec(depth: int) -> None:
            if depth == len(order):
                args = [binding[v] for v, _ in params]
                name = "(" + " ".join([schema.name] + args) + ")"
                raw.append((
                    name,
                    [subst(l, binding) for l in schema.precondition],
                    [subst(l, binding) for l in schema.add],
                    [subst(l, binding) for l in schema.delete],
                ))
                if len(raw) > max_actions:
                    raise GroundingLimitError(f"more than {max_actions} grounded actions")
                return
            var, typ = params[order[depth]]
            for obj in by_type.get(typ, ()):
                binding[var] = obj
                if all(possible(subst(l, binding)) for l in check_at.get(depth, ())):
                    rec(depth + 1)
            binding.pop(var, None)

        rec(0)

    # fixpoint pruning against init and surviving add lists
    alive = list(raw)
    while True:
        producible = set(init)
        for _, _, add, _ in alive:
            producible.update(add)
        kept = [r for r in alive if all(p in producible for p in r[1])]
        if len(kept) == len(alive):
            break
        alive = kept

    universe = set(init) | set(problem.goal)
    for _, pre, add, dele in alive:
        universe.update(pre)
        universe.update(add)
        universe.update(dele)
    facts = sorted(universe, key=lambda f: (f.predicate, f.args))
    index = {f: i for i, f in enumerate(facts)}
    actions = [
        GroundAction(name, frozenset(index[f] for f in pre), frozenset(index[f] for f in add),
                     frozenset(index[f] for f in dele))
        for name, pre, add, dele in alive
    ]
    return GroundedPlanningTask(
        facts, actions, frozenset(index[f] for f in init), frozenset(index[f] for f in problem.goal)
    )
