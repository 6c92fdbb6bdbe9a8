"""STRIPS domain/problem structures and their canonical PDDL text form."""

from __future__ import annotations

from dataclasses import dataclass, field

SUPPORTED_REQUIREMENTS = (":strips", ":typing")


@dataclass(frozen=True)
class Literal:
    predicate: str
    args: tuple[str, ...] = ()

    def __str__(self) -> str:
        return "(" + " ".join((self.predicate,) + self.args) + ")"


TypedList = list[tuple[str, str]]


@dataclass
class ActionSchema:
    name: str
    parameters: TypedList = field(default_factory=list)
    precondition: list[Literal] = field(default_factory=list)
    add: list[Literal] = field(default_factory=list)
    delete: list[Literal] = field(default_factory=list)

    def signature(self) -> tuple:
        return (tuple(self.parameters), tuple(self.precondition), tuple(self.add), tuple(self.delete))


@dataclass
class StripsDomain:
    name: str
    requirements: list[str] = field(default_factory=lambda: list(SUPPORTED_REQUIREMENTS))
    types: TypedList = field(default_factory=list)
    constants: TypedList = field(default_factory=list)
    predicates: list[tuple[str, TypedList]] = field(default_factory=list)
    actions: list[ActionSchema] = field(default_factory=list)

    def predicate_arity(self) -> dict[str, int]:
        return {name: len(params) for name, params in self.predicates}

    def action(self, name: str) -> ActionSchema:
        for a in self.actions:
            if a.name == name:
                return a
        raise KeyError(name)


@dataclass
class StripsProblem:
    name: str
    domain_name: str
    objects: TypedList = field(default_factory=list)
    init: list[Literal] = field(default_factory=list)
    goal: list[Literal] = field(default_factory=list)


@dataclass
class Plan:
    steps: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    def to_text(self) -> str:
        return "".join(s + "\n" for s in self.steps)


def format_typed(items: TypedList) -> str:
    """``a b - t c - u``; a trailing group typed ``object`` is written bare.

    Earlier ``object`` groups keep their ``- object`` suffix, otherwise a
    reader would fold them into the next typed group.
    """
    out: list[str] = []
    i = 0
    while i < len(items):
        typ = items[i][1]
        j = i
        while j < len(items) and items[j][1] == typ:
            out.append(items[j][0])
            j += 1
        if typ != "object" or j < len(items):
            out += ["-", typ]
        i = j
    return " ".join(out)


def _conj(lits: list[str]) -> str:
    return "(and" + "".join(" " + s for s in lits) + ")"


def write_domain(d: StripsDomain) -> str:
    lines = [f"(define (domain {d.name})", f"  (:requirements {' '.join(d.requirements)})"]
    if d.types:
        lines.append(f"  (:types {format_typed(d.types)})")
    if d.constants:
        lines.append(f"  (:constants {format_typed(d.constants)})")
    if d.predicates:
        lines.append("  (:predicates")
        for name, params in d.predicates:
            body = format_typed(params)
            lines.append(f"    ({name}{' ' + body if body else ''})")
        lines[-1] += ")"
    for a in d.actions:
        lines.append(f"  (:action {a.name}")
        lines.append(f"    :parameters ({format_typed(a.parameters)})")
        lines.append(f"    :precondition {_conj([str(p) for p in a.precondition])}")
        effects = [str(x) for x in a.add] + [f"(not {x})" for x in a.delete]
        lines.append(f"    :effect {_conj(effects)})")
    lines.append(")")
    return "\n".join(lines) + "\n"


def write_problem(p: StripsProblem) -> str:
    lines = [f"(define (problem {p.name})", f"  (:domain {p.domain_name})"]
    if p.objects:
        lines.append(f"  (:objects {format_typed(p.objects)})")
    lines.append("  (:init")
    for lit in p.init:
        lines.append(f"    {lit}")
    lines[-1] += ")"
    lines.append(f"  (:goal {_conj([str(g) for g in p.goal])})")
    lines.append(")")
    return "\n".join(lines) + "\n"
