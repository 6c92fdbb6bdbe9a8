"""Template PDDL emission for functional units and per-unit compilation of
task trees."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from ..kg import FunctionalUnit, ObjectNode, TaskTree
from ..retrieval import KitchenState
from .ground import GroundedPlanningTask, ground
from .model import ActionSchema, Literal, Plan, StripsDomain, StripsProblem, write_domain, write_problem
from .parser import PddlError, parse_pddl
from .search import UnsolvableError, final_state, solve, validate_plan

RESERVED = frozenset({
    "exists", "is-state", "has-ingredient", "at-hand",
    "and", "not", "or", "define", "domain", "problem", "either", "forall", "when", "imply",
})

PREDICATES = [
    ("exists", [("?o", "obj")]),
    ("is-state", [("?o", "obj"), ("?s", "label")]),
    ("has-ingredient", [("?o", "obj"), ("?i", "label")]),
    ("at-hand", [("?o", "obj")]),
]


class EmissionError(ValueError):
    pass


class CompileError(RuntimeError):
    def __init__(self, unit_id: str, reason: str):
        self.unit_id = unit_id
        super().__init__(f"unit {unit_id}: {reason}")


def symbol(text: str) -> str:
    """PDDL-safe identifier for an object/state name."""
    s = re.sub(r"\s+", "_", text.strip().lower())
    s = re.sub(r"[^a-z0-9_\-]", "_", s)
    if not s or not s[0].isalpha():
        s = "o_" + s
    return s


class ActionNamer:
    """Gives each distinct (verb, schema) pair a stable action name; a verb
    reused with a different schema gets a numeric suffix in emission order."""

    def __init__(self) -> None:
        self._by_sig: dict[tuple, str] = {}
        self._per_verb: dict[str, int] = {}

    def name(self, verb: str, signature: tuple) -> str:
        key = (verb, signature)
        if key not in self._by_sig:
            n = self._per_verb.get(verb, 0) + 1
            self._per_verb[verb] = n
            self._by_sig[key] = verb if n == 1 else f"{verb}_{n}"
        return self._by_sig[key]


def state_symbol(label: str) -> str:
    return symbol(label)


def ingredient_symbol(label: str) -> str:
    return "ing-" + symbol(label)


def _object_facts(sym: str, node: ObjectNode) -> list[Literal]:
    facts = [Literal("exists", (sym,))]
    facts += [Literal("is-state", (sym, state_symbol(s))) for s in node.states]
    facts += [Literal("has-ingredient", (sym, ingredient_symbol(c))) for c in node.contains]
    return facts


def _labels(node: ObjectNode) -> set[str]:
    return {state_symbol(s) for s in node.states} | {ingredient_symbol(c) for c in node.contains}


@dataclass
class Emission:
    domain: StripsDomain
    problem: StripsProblem
    names: dict[str, str] = field(default_factory=dict)
    labels: dict[str, str] = field(default_factory=dict)

    @property
    def domain_text(self) -> str:
        return write_domain(self.domain)

    @property
    def problem_text(self) -> str:
        return write_problem(self.problem)


def build_emission(unit: FunctionalUnit, kitchen: KitchenState, namer: ActionNamer | None = None) -> Emission:
    unit = unit.canonicalize()
    verb = symbol(unit.motion.verb)
    if verb in RESERVED:
        raise EmissionError(f"motion verb {unit.motion.verb!r} collides with a reserved name")
    names: dict[str, str] = {}
    labels: dict[str, str] = {}
    for o in list(unit.inputs) + list(unit.outputs) + list(kitchen):
        names.setdefault(symbol(o.name), o.name)
        labels.update({state_symbol(x): x for x in o.states})
        labels.update({ingredient_symbol(x): x for x in o.contains})
    clash = sorted(set(names) & set(labels))
    if clash:
        raise EmissionError(f"object name {names[clash[0]]!r} collides with a state label")
    var = {o.name: "?" + symbol(o.name) for o in list(unit.inputs) + list(unit.outputs)}
    params = sorted({(v, "obj") for v in var.values()})

    pre: list[Literal] = []
    for o in unit.inputs:
        pre += _object_facts(var[o.name], o)
    add: list[Literal] = []
    for o in unit.outputs:
        add += _object_facts(var[o.name], o)
    delete: list[Literal] = []
    outputs = {o.name: o for o in unit.outputs}
    for o in unit.inputs:
        facts = _object_facts(var[o.name], o)
        if o.name in outputs:
            keep = set(_object_facts(var[o.name], outputs[o.name]))
            delete += [f for f in facts if f not in keep]
        else:
            delete += facts
    delete = list(dict.fromkeys(delete))
    schema = ActionSchema(verb, params, pre, add, delete)
    if namer is not None:
        schema.name = namer.name(verb, schema.signature())

    unit_labels = sorted(set().union(*(_labels(o) for o in unit.inputs + unit.outputs)))
    domain = StripsDomain(
        name=f"fu-{unit.unit_id}",
        types=[("obj", "object"), ("label", "object")],
        constants=[(l, "label") for l in unit_labels],
        predicates=[(n, list(p)) for n, p in PREDICATES],
        actions=[schema],
    )
    kitchen_syms = sorted(symbol(o.name) for o in kitchen)
    unit_syms = sorted({symbol(o.name) for o in unit.inputs + unit.outputs} - set(kitchen_syms))
    extra_labels = sorted(set().union(set(), *(_labels(o) for o in kitchen)) - set(unit_labels))
    init: list[Literal] = []
    for o in sorted(kitchen, key=lambda o: symbol(o.name)):
        init += _object_facts(symbol(o.name), o)
    goal: list[Literal] = []
    for o in unit.outputs:
        goal += _object_facts(symbol(o.name), o)
    problem = StripsProblem(
        name=f"fu-{unit.unit_id}-problem",
        domain_name=domain.name,
        objects=[(s, "obj") for s in sorted(set(kitchen_syms) | set(unit_syms))] + [(l, "label") for l in extra_labels],
        init=init,
        goal=goal,
    )
    return Emission(domain, problem, names, labels)


def emit_domain_problem(
    unit: FunctionalUnit, kitchen: KitchenState, namer: ActionNamer | None = None
) -> tuple[str, str]:
    """Domain and problem text for one unit (inputs become preconditions,
    outputs add effects, consumed inputs delete effects)."""
    em = build_emission(unit, kitchen, namer)
    return em.domain_text, em.problem_text


def kitchen_from_facts(facts: list[Literal], names: dict[str, str], labels: dict[str, str]) -> KitchenState:
    states: dict[str, list[str]] = {}
    contains: dict[str, list[str]] = {}
    existing: list[str] = []
    for f in facts:
        if f.predicate == "exists":
            existing.append(f.args[0])
        elif f.predicate == "is-state":
            states.setdefault(f.args[0], []).append(labels.get(f.args[1], f.args[1]))
        elif f.predicate == "has-ingredient":
            contains.setdefault(f.args[0], []).append(labels.get(f.args[1], f.args[1]))
    return KitchenState(
        ObjectNode(names.get(s, s), tuple(states.get(s, ())), tuple(contains.get(s, ())))
        for s in sorted(existing)
    )


def _namesakes_first(task: GroundedPlanningTask, domain: StripsDomain) -> GroundedPlanningTask:
    """Reorder actions so bindings of ``?x`` to object ``x`` come first;
    search breaks ties by action order, so plans prefer them."""
    params = {a.name: [v[1:] for v, _ in a.parameters] for a in domain.actions}

    def misses(act) -> int:
        verb, *args = act.name[1:-1].split()
        return sum(a != p for a, p in zip(args, params.get(verb, [])))

    ordered = sorted(task.actions, key=misses)
    return GroundedPlanningTask(task.facts, ordered, task.init, task.goal)


@dataclass
class CompiledUnit:
    unit: FunctionalUnit
    domain_text: str
    problem_text: str
    plan: Plan


def compile_tree(tree: TaskTree, kitchen: KitchenState, node_budget: int = 1_000_000) -> list[CompiledUnit]:
    """Emit and solve one PDDL problem per unit, threading each plan's final
    state into the next unit's initial state."""
    namer = ActionNamer()
    out: list[CompiledUnit] = []
    current = kitchen
    for unit in tree.units:
        # objects the unit never mentions cannot change; keep them out of
        # the problem so grounding stays small, then carry them over
        named = {o.name for o in unit.inputs + unit.outputs}
        local = KitchenState(o for o in current if o.name in named)
        rest = [o for o in current if o.name not in named]
        try:
            em = build_emission(unit, local, namer)
            domain_text, problem_text = em.domain_text, em.problem_text
            domain = parse_pddl(domain_text)
            problem = parse_pddl(problem_text, domain)
            task = _namesakes_first(ground(domain, problem), domain)
            plan = solve(task, node_budget)
        except (UnsolvableError, EmissionError, PddlError) as exc:
            raise CompileError(unit.unit_id, str(exc)) from exc
        ok, bad = validate_plan(plan, task)
        if not ok:
            raise CompileError(unit.unit_id, f"plan fails validation at step {bad}")
        out.append(CompiledUnit(unit, domain_text, problem_text, plan))
        end = final_state(plan, task)
        after = kitchen_from_facts([task.facts[i] for i in sorted(end)], em.names, em.labels)
        current = KitchenState(list(after) + rest)
    return out
