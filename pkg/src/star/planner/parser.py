"""S-expression reader for the ``:strips :typing`` PDDL subset."""

from __future__ import annotations

from dataclasses import dataclass

from .model import SUPPORTED_REQUIREMENTS, ActionSchema, Literal, StripsDomain, StripsProblem, TypedList


class PddlError(ValueError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.line = line
        self.col = col
        where = f"{line}:{col}: " if line else ""
        super().__init__(where + message)


class PddlSyntaxError(PddlError):
    pass


class UnsupportedRequirementError(PddlError):
    def __init__(self, flag: str, line: int = 0, col: int = 0):
        self.flag = flag
        super().__init__(f"unsupported requirement {flag}", line, col)


class UnknownPredicateError(PddlError):
    def __init__(self, name: str, line: int = 0, col: int = 0):
        self.predicate = name
        super().__init__(f"unknown predicate {name!r}", line, col)


@dataclass
class Atom:
    text: str
    line: int
    col: int


class SList(list):
    line = 0
    col = 0


def read_sexpr(text: str) -> SList:
    """Read exactly one top-level s-expression; atoms are lowercased."""
    stack: list[SList] = []
    result: SList | None = None
    i, line, col = 0, 1, 1
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == ";":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch == "\n":
            i, line, col = i + 1, line + 1, 1
            continue
        if ch.isspace():
            i, col = i + 1, col + 1
            continue
        if ch == "(":
            if result is not None and not stack:
                raise PddlSyntaxError("text after the top-level expression", line, col)
            node = SList()
            node.line, node.col = line, col
            if stack:
                stack[-1].append(node)
            stack.append(node)
            i, col = i + 1, col + 1
            continue
        if ch == ")":
            if not stack:
                raise PddlSyntaxError("unbalanced ')'", line, col)
            done = stack.pop()
            if not stack:
                result = done
            i, col = i + 1, col + 1
            continue
        start, start_col = i, col
        while i < n and not text[i].isspace() and text[i] not in "();":
            i, col = i + 1, col + 1
        atom = Atom(text[start:i].lower(), line, start_col)
        if not stack:
            raise PddlSyntaxError(f"atom {atom.text!r} outside parentheses", line, start_col)
        stack[-1].append(atom)
    if stack:
        raise PddlSyntaxError("unbalanced '(' (unclosed expression)", stack[-1].line, stack[-1].col)
    if result is None:
        raise PddlSyntaxError("empty input", 1, 1)
    return result


def _atom(x, what: str) -> str:
    if not isinstance(x, Atom):
        raise PddlSyntaxError(f"expected {what}", getattr(x, "line", 0), getattr(x, "col", 0))
    return x.text


def _typed_list(items) -> TypedList:
    out: TypedList = []
    pending: list[str] = []
    it = iter(items)
    for x in it:
        name = _atom(x, "name")
        if name == "-":
            typ = next(it, None)
            if typ is None:
                raise PddlSyntaxError("type name expected after '-'", x.line, x.col)
            typ = _atom(typ, "type name")
            out += [(p, typ) for p in pending]
            pending = []
        else:
            pending.append(name)
    out += [(p, "object") for p in pending]
    return out


def _literal(x, arity: dict[str, int] | None) -> Literal:
    if not isinstance(x, SList) or not x:
        raise PddlSyntaxError("expected a literal", getattr(x, "line", 0), getattr(x, "col", 0))
    pred = _atom(x[0], "predicate name")
    if pred in ("and", "not", "or", "forall", "exists", "imply", "when") and (arity is None or pred not in arity):
        raise PddlSyntaxError(f"unexpected {pred!r} (only conjunctions of positive literals are supported)", x.line, x.col)
    args = tuple(_atom(a, "argument") for a in x[1:])
    if arity is not None:
        if pred not in arity:
            raise UnknownPredicateError(pred, x[0].line, x[0].col)
        if arity[pred] != len(args):
            raise PddlSyntaxError(f"predicate {pred!r} expects {arity[pred]} arguments, got {len(args)}", x.line, x.col)
    return Literal(pred, args)


def _conjunction(x, arity) -> list[Literal]:
    if isinstance(x, SList) and x and isinstance(x[0], Atom) and x[0].text == "and":
        return [_literal(y, arity) for y in x[1:]]
    if isinstance(x, SList) and not x:
        return []
    return [_literal(x, arity)]


def _effects(x, arity) -> tuple[list[Literal], list[Literal]]:
    items = x[1:] if isinstance(x, SList) and x and isinstance(x[0], Atom) and x[0].text == "and" else [x]
    add, delete = [], []
    for y in items:
        if isinstance(y, SList) and y and isinstance(y[0], Atom) and y[0].text == "not":
            if len(y) != 2:
                raise PddlSyntaxError("'not' takes one literal", y.line, y.col)
            delete.append(_literal(y[1], arity))
        else:
            add.append(_literal(y, arity))
    return add, delete


def _parse_domain(root: SList) -> StripsDomain:
    header = root[1]
    dom = StripsDomain(name=_atom(header[1], "domain name"), requirements=[])
    arity: dict[str, int] = {}
    for sec in root[2:]:
        if not isinstance(sec, SList) or not sec:
            raise PddlSyntaxError("expected a domain section", getattr(sec, "line", 0), getattr(sec, "col", 0))
        key = _atom(sec[0], "section keyword")
        if key == ":requirements":
            for flag in sec[1:]:
                f = _atom(flag, "requirement flag")
                if f not in SUPPORTED_REQUIREMENTS:
                    raise UnsupportedRequirementError(f, flag.line, flag.col)
                dom.requirements.append(f)
        elif key == ":types":
            dom.types = _typed_list(sec[1:])
        elif key == ":constants":
            dom.constants = _typed_list(sec[1:])
        elif key == ":predicates":
            for p in sec[1:]:
                if not isinstance(p, SList) or not p:
                    raise PddlSyntaxError("expected a predicate declaration", getattr(p, "line", 0), getattr(p, "col", 0))
                name = _atom(p[0], "predicate name")
                params = _typed_list(p[1:])
                dom.predicates.append((name, params))
                arity[name] = len(params)
        elif key == ":action":
            dom.actions.append(_parse_action(sec, arity))
        else:
            raise PddlSyntaxError(f"unsupported domain section {key}", sec.line, sec.col)
    names = [a.name for a in dom.actions]
    if len(set(names)) != len(names):
        raise PddlSyntaxError("duplicate action names", root.line, root.col)
    return dom


def _parse_action(sec: SList, arity) -> ActionSchema:
    act = ActionSchema(name=_atom(sec[1], "action name"))
    i = 2
    while i < len(sec):
        key = _atom(sec[i], "action keyword")
        if i + 1 >= len(sec):
            raise PddlSyntaxError(f"{key} needs a value", sec[i].line, sec[i].col)
        val = sec[i + 1]
        if key == ":parameters":
            act.parameters = _typed_list(val)
        elif key == ":precondition":
            act.precondition = _conjunction(val, arity)
        elif key == ":effect":
            act.add, act.delete = _effects(val, arity)
        else:
            raise PddlSyntaxError(f"unsupported action keyword {key}", sec[i].line, sec[i].col)
        i += 2
    variables = {v for v, _ in act.parameters}
    for lit in act.precondition + act.add + act.delete:
        for a in lit.args:
            if a.startswith("?") and a not in variables:
                raise PddlSyntaxError(f"undeclared variable {a} in action {act.name}", sec.line, sec.col)
    return act


def _parse_problem(root: SList, domain: StripsDomain | None) -> StripsProblem:
    prob = StripsProblem(name=_atom(root[1][1], "problem name"), domain_name="")
    arity = domain.predicate_arity() if domain is not None else None
    for sec in root[2:]:
        if not isinstance(sec, SList) or not sec:
            raise PddlSyntaxError("expected a problem section", getattr(sec, "line", 0), getattr(sec, "col", 0))
        key = _atom(sec[0], "section keyword")
        if key == ":domain":
            prob.domain_name = _atom(sec[1], "domain name")
        elif key == ":objects":
            prob.objects = _typed_list(sec[1:])
        elif key == ":init":
            prob.init = [_literal(x, arity) for x in sec[1:]]
        elif key == ":goal":
            prob.goal = _conjunction(sec[1], arity) if len(sec) > 1 else []
        elif key == ":requirements":
            for flag in sec[1:]:
                if _atom(flag, "flag") not in SUPPORTED_REQUIREMENTS:
                    raise UnsupportedRequirementError(flag.text, flag.line, flag.col)
        else:
            raise PddlSyntaxError(f"unsupported problem section {key}", sec.line, sec.col)
    if domain is not None and prob.domain_name and prob.domain_name != domain.name:
        raise PddlError(f"problem targets domain {prob.domain_name!r}, not {domain.name!r}")
    return prob


def parse_pddl(text: str, domain: StripsDomain | None = None) -> StripsDomain | StripsProblem:
    """Parse a domain or problem. Problems are checked against ``domain`` when given."""
    root = read_sexpr(text)
    if len(root) < 2 or not isinstance(root[0], Atom) or root[0].text != "define":
        raise PddlSyntaxError("expected (define ...)", root.line, root.col)
    header = root[1]
    if not isinstance(header, SList) or len(header) != 2:
        raise PddlSyntaxError("expected (domain <name>) or (problem <name>)", root.line, root.col)
    kind = _atom(header[0], "domain or problem")
    if kind == "domain":
        return _parse_domain(root)
    if kind == "problem":
        return _parse_problem(root, domain)
    raise PddlSyntaxError(f"expected domain or problem, got {kind!r}", header.line, header.col)
