"""FOON-style knowledge graph: object/motion nodes, functional units, the
line-oriented FOON-text format and the two-section knowledge store.

FOON-text grammar::

    # comment
    [FOON]                      section header (optional; defaults to FOON)
    T overpour | batter         FailNet trigger for the next unit (optional)
    U                           starts a unit
    I <name> | <state>,<state> | <ingredient>;<ingredient>
    M <verb> | key=value;key=value
    O <name> | <state>,<state> | <ingredient>;<ingredient>
                                blank line ends the unit
"""

from __future__ import annotations

import hashlib
import re
import threading
from dataclasses import dataclass, field
from typing import Iterable, Iterator

SECTIONS = ("foon", "failnet")
FAILURE_TYPES = (
    "overpour",
    "slip",
    "incorrect_mix",
    "misplaced_pour",
    "collateral",
    "unsafe_action",
    "other",
)

_FORBIDDEN_NAME_CHARS = re.compile(r"[|,;\t\r\n\x00-\x1f]")
_FORBIDDEN_LABEL_CHARS = re.compile(r"[|,;=\t\r\n\x00-\x1f]")


class FoonSyntaxError(ValueError):
    """Malformed FOON-text. ``line`` is 1-based; 0 means no specific line."""

    def __init__(self, message: str, line: int = 0, token: str = ""):
        self.line = line
        self.token = token
        where = f"line {line}: " if line else ""
        tok = f" (at {token!r})" if token else ""
        super().__init__(f"{where}{message}{tok}")


class InvalidUnitError(ValueError):
    pass


def _norm(text: str) -> str:
    return " ".join(text.strip().lower().split())


@dataclass(frozen=True)
class ObjectNode:
    """An object with its state labels and contained ingredients.

    Labels are lowercased and sorted on construction, so two nodes that list
    the same states in a different order compare equal. Duplicates are kept
    so that validation can report them.
    """

    name: str
    states: tuple[str, ...] = ()
    contains: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "name", _norm(self.name))
        object.__setattr__(self, "states", tuple(sorted(_norm(s) for s in self.states)))
        object.__setattr__(self, "contains", tuple(sorted(_norm(c) for c in self.contains)))

    def satisfies(self, required: ObjectNode) -> bool:
        """True if this (observed) object meets ``required``'s name, states and contents."""
        return (
            self.name == required.name
            and set(required.states) <= set(self.states)
            and set(required.contains) <= set(self.contains)
        )

    def to_text(self) -> str:
        parts = [self.name]
        if self.states or self.contains:
            parts.append(",".join(self.states))
        if self.contains:
            parts.append(";".join(self.contains))
        return " | ".join(parts)

    @classmethod
    def from_text(cls, text: str) -> ObjectNode:
        """Parse ``name | state,state | ingredient;ingredient``."""
        fields = [f.strip() for f in text.split("|")]
        if len(fields) > 3:
            raise FoonSyntaxError("too many '|' fields in object", token=text)
        name = fields[0]
        states = _split(fields[1], ",") if len(fields) > 1 else []
        contains = _split(fields[2], ";") if len(fields) > 2 else []
        return cls(name, tuple(states), tuple(contains))

    def __str__(self) -> str:
        return self.to_text()


def _split(field_text: str, sep: str) -> list[str]:
    return [p.strip() for p in field_text.split(sep) if p.strip()]


@dataclass(frozen=True)
class MotionNode:
    verb: str
    parameters: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "verb", _norm(self.verb))
        params = self.parameters
        if isinstance(params, dict):
            params = tuple(params.items())
        object.__setattr__(
            self, "parameters", tuple(sorted((_norm(k), v.strip()) for k, v in params))
        )

    @property
    def params(self) -> dict[str, str]:
        return dict(self.parameters)

    def to_text(self) -> str:
        if not self.parameters:
            return self.verb
        return self.verb + " | " + ";".join(f"{k}={v}" for k, v in self.parameters)


class FunctionalUnit:
    """One action: input objects transformed by a motion into output objects.

    Equality and hashing go through ``unit_id``, which is derived from the
    order-insensitive canonical form, so reordered inputs compare equal.
    """

    __slots__ = ("inputs", "motion", "outputs", "_canonical", "_uid")

    def __init__(
        self,
        inputs: Iterable[ObjectNode],
        motion: MotionNode | str,
        outputs: Iterable[ObjectNode],
    ):
        self.inputs = tuple(inputs)
        self.motion = MotionNode(motion) if isinstance(motion, str) else motion
        self.outputs = tuple(outputs)
        lines = ["U"]
        lines += ["I " + o.to_text() for o in sorted(self.inputs, key=_obj_key)]
        lines.append("M " + self.motion.to_text())
        lines += ["O " + o.to_text() for o in sorted(self.outputs, key=_obj_key)]
        self._canonical = "\n".join(lines) + "\n"
        self._uid = hashlib.sha256(self._canonical.encode("utf-8")).hexdigest()[:16]

    @property
    def unit_id(self) -> str:
        return self._uid

    @property
    def canonical_text(self) -> str:
        return self._canonical

    def canonicalize(self) -> FunctionalUnit:
        return FunctionalUnit(
            sorted(self.inputs, key=_obj_key), self.motion, sorted(self.outputs, key=_obj_key)
        )

    def consumed_inputs(self) -> list[ObjectNode]:
        """Inputs that disappear: no output object shares their name."""
        out_names = {o.name for o in self.outputs}
        return [i for i in self.inputs if i.name not in out_names]

    def to_text(self) -> str:
        lines = ["U"]
        lines += ["I " + o.to_text() for o in self.inputs]
        lines.append("M " + self.motion.to_text())
        lines += ["O " + o.to_text() for o in self.outputs]
        return "\n".join(lines) + "\n"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FunctionalUnit):
            return NotImplemented
        return self._canonical == other._canonical

    def __hash__(self) -> int:
        return hash(self._uid)

    def __repr__(self) -> str:
        ins = ", ".join(o.to_text() for o in self.inputs)
        outs = ", ".join(o.to_text() for o in self.outputs)
        return f"FunctionalUnit<{self._uid} {self.motion.verb}: [{ins}] -> [{outs}]>"


def _obj_key(o: ObjectNode) -> tuple:
    return (o.name, o.states, o.contains)


@dataclass
class TaskTree:
    units: list[FunctionalUnit]
    goal: ObjectNode

    def __len__(self) -> int:
        return len(self.units)

    @property
    def unit_ids(self) -> list[str]:
        return [u.unit_id for u in self.units]


def unit_equals(a: FunctionalUnit, b: FunctionalUnit) -> bool:
    return a.canonical_text == b.canonical_text


def validate_unit(u: FunctionalUnit) -> list[str]:
    """Return a list of ``"<field>: <rule>"`` violations, empty when valid."""
    problems: list[str] = []
    if not u.inputs:
        problems.append("inputs: non-empty required")
    if not u.outputs:
        problems.append("outputs: non-empty required")
    if not u.motion.verb:
        problems.append("motion: verb non-empty required")
    elif _FORBIDDEN_LABEL_CHARS.search(u.motion.verb):
        problems.append(f"motion: verb {u.motion.verb!r} contains a reserved character")
    for role, objs in (("inputs", u.inputs), ("outputs", u.outputs)):
        names = [o.name for o in objs]
        for dup in sorted({n for n in names if names.count(n) > 1}):
            problems.append(f"{role}: duplicate object name {dup!r}")
        for o in objs:
            if not o.name:
                problems.append(f"{role}: object name non-empty required")
            elif _FORBIDDEN_NAME_CHARS.search(o.name):
                problems.append(f"{role}: object name {o.name!r} contains a reserved character")
            dup_states = sorted({s for s in o.states if o.states.count(s) > 1})
            if dup_states:
                problems.append(
                    f"{role}.states: duplicate state labels {dup_states} on {o.name!r}"
                )
            for label in o.states + o.contains:
                if not label or _FORBIDDEN_LABEL_CHARS.search(label):
                    problems.append(f"{role}.states: invalid label {label!r} on {o.name!r}")
    return problems


# ---------------------------------------------------------------------------
# FOON-text parsing and serialization


@dataclass
class ParsedBlock:
    unit: FunctionalUnit
    section: str = "foon"
    triggers: list[tuple[str, frozenset[str]]] = field(default_factory=list)
    line: int = 0


def parse_trigger(text: str) -> tuple[str, frozenset[str]]:
    fields = [f.strip() for f in text.split("|")]
    ftype = _norm(fields[0]).replace(" ", "_").replace("-", "_")
    objs = frozenset(_norm(n) for n in fields[1].split(",") if n.strip()) if len(fields) > 1 else frozenset()
    return ftype, objs


def format_trigger(trigger: tuple[str, frozenset[str]]) -> str:
    ftype, objs = trigger
    return f"T {ftype} | {','.join(sorted(objs))}"


def parse_blocks(text: str, default_section: str = "foon") -> list[ParsedBlock]:
    """Parse FOON-text into unit blocks, keeping section and trigger lines."""
    if not text or not text.strip():
        raise FoonSyntaxError("empty input")
    blocks: list[ParsedBlock] = []
    section = default_section
    pending_triggers: list[tuple[str, frozenset[str]]] = []
    cur: dict | None = None

    def close(lineno: int) -> None:
        nonlocal cur, pending_triggers
        if cur is None:
            return
        if cur["motion"] is None:
            raise FoonSyntaxError("unit has no motion line", cur["start"], "U")
        unit = FunctionalUnit(cur["inputs"], cur["motion"], cur["outputs"])
        blocks.append(ParsedBlock(unit, section, cur["triggers"], cur["start"]))
        cur = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            close(lineno)
            continue
        if line.startswith("[") and line.endswith("]"):
            close(lineno)
            name = line[1:-1].strip().lower()
            if name not in SECTIONS:
                raise FoonSyntaxError("unknown section", lineno, line)
            section = name
            continue
        tag, _, rest = line.partition(" ")
        rest = rest.strip()
        if tag == "U":
            close(lineno)
            if rest:
                raise FoonSyntaxError("unexpected text after U", lineno, rest)
            cur = {"inputs": [], "motion": None, "outputs": [], "start": lineno,
                   "triggers": pending_triggers}
            pending_triggers = []
        elif tag == "T":
            if cur is not None:
                raise FoonSyntaxError("trigger line inside a unit", lineno, line)
            if not rest:
                raise FoonSyntaxError("trigger needs a failure type", lineno, line)
            pending_triggers.append(parse_trigger(rest))
        elif tag in ("I", "O", "M"):
            if cur is None:
                raise FoonSyntaxError(f"{tag} line outside a unit", lineno, tag)
            if not rest:
                raise FoonSyntaxError(f"{tag} line needs content", lineno, tag)
            if tag == "M":
                if cur["motion"] is not None:
                    raise FoonSyntaxError("second motion line in unit", lineno, line)
                cur["motion"] = _parse_motion(rest, lineno)
            else:
                try:
                    node = ObjectNode.from_text(rest)
                except FoonSyntaxError as exc:
                    raise FoonSyntaxError("malformed object", lineno, rest) from exc
                if not node.name:
                    raise FoonSyntaxError("object name missing", lineno, rest)
                cur["inputs" if tag == "I" else "outputs"].append(node)
        else:
            raise FoonSyntaxError("unknown line tag", lineno, tag)
    close(0)
    if pending_triggers:
        raise FoonSyntaxError("trigger line not followed by a unit", 0, "T")
    return blocks


def _parse_motion(rest: str, lineno: int) -> MotionNode:
    verb, _, params = rest.partition("|")
    verb = verb.strip()
    if not verb:
        raise FoonSyntaxError("motion verb missing", lineno, rest)
    pairs = []
    for item in _split(params, ";"):
        key, eq, value = item.partition("=")
        if not eq or not key.strip():
            raise FoonSyntaxError("motion parameter must be key=value", lineno, item)
        pairs.append((key, value))
    return MotionNode(verb, tuple(pairs))


def parse_subgraph(text: str) -> list[FunctionalUnit]:
    """Parse FOON-text into units in file order."""
    return [b.unit for b in parse_blocks(text)]


def serialize_subgraph(units: Iterable[FunctionalUnit]) -> str:
    return "\n".join(u.to_text() for u in units)


# ---------------------------------------------------------------------------
# Knowledge store


@dataclass
class MergeReport:
    added: int = 0
    skipped_duplicates: int = 0


class _Section:
    def __init__(self) -> None:
        self.units: dict[str, FunctionalUnit] = {}
        self.output_index: dict[str, set[str]] = {}
        self.triggers: dict[str, set[tuple[str, frozenset[str]]]] = {}

    def add(self, unit: FunctionalUnit) -> bool:
        if unit.unit_id in self.units:
            return False
        self.units[unit.unit_id] = unit
        for o in unit.outputs:
            self.output_index.setdefault(o.name, set()).add(unit.unit_id)
        return True


class KnowledgeStore:
    """FOON and FailNet units kept in separate sections, each with an
    output-name index. Reads are lock-free; ``merge`` takes an exclusive lock.
    """

    def __init__(self) -> None:
        self._foon = _Section()
        self._failnet = _Section()
        self._lock = threading.RLock()
        self.category_index: dict[str, list[str]] = {}

    def section(self, name: str) -> _Section:
        if name == "foon":
            return self._foon
        if name == "failnet":
            return self._failnet
        raise ValueError(f"unknown section {name!r}; expected one of {SECTIONS}")

    @property
    def foon_units(self) -> dict[str, FunctionalUnit]:
        return self._foon.units

    @property
    def failnet_units(self) -> dict[str, FunctionalUnit]:
        return self._failnet.units

    @property
    def output_index(self) -> dict[str, set[str]]:
        return self._foon.output_index

    @property
    def failnet_output_index(self) -> dict[str, set[str]]:
        return self._failnet.output_index

    @property
    def failnet_triggers(self) -> dict[str, set[tuple[str, frozenset[str]]]]:
        return self._failnet.triggers

    def producers(self, name: str, section: str = "foon") -> list[FunctionalUnit]:
        sec = self.section(section)
        return [sec.units[uid] for uid in sorted(sec.output_index.get(name, ()))]

    def terminal_goals(self) -> list[str]:
        """Output names of FOON units that no FOON unit consumes as an input."""
        consumed = {i.name for u in self._foon.units.values() for i in u.inputs}
        return sorted(n for n in self._foon.output_index if n not in consumed)

    def build_category_index(self, taxonomy) -> dict[str, list[str]]:
        index: dict[str, list[str]] = {}
        for goal in self.terminal_goals():
            index.setdefault(taxonomy.classify(goal).label, []).append(goal)
        self.category_index = index
        return index

    def merge(
        self,
        units: Iterable[FunctionalUnit],
        section: str = "foon",
        triggers: dict[str, Iterable[tuple[str, frozenset[str]]]] | None = None,
    ) -> MergeReport:
        """Add units not already present (by canonical form) to ``section``.

        ``triggers`` maps unit_id to FailNet trigger tuples; new triggers are
        attached even when the unit itself is a duplicate.
        """
        units = list(units)
        for u in units:
            problems = validate_unit(u)
            if problems:
                raise InvalidUnitError(f"unit {u.unit_id}: " + "; ".join(problems))
        with self._lock:
            sec = self.section(section)
            report = MergeReport()
            for u in units:
                if sec.add(u):
                    report.added += 1
                else:
                    report.skipped_duplicates += 1
            for uid, trigs in (triggers or {}).items():
                if uid in sec.units:
                    sec.triggers.setdefault(uid, set()).update(trigs)
            return report

    def copy(self) -> KnowledgeStore:
        other = KnowledgeStore()
        with self._lock:
            for name in SECTIONS:
                src, dst = self.section(name), other.section(name)
                for u in src.units.values():
                    dst.add(u)
                dst.triggers = {k: set(v) for k, v in src.triggers.items()}
        other.category_index = {k: list(v) for k, v in self.category_index.items()}
        return other

    def __iter__(self) -> Iterator[FunctionalUnit]:
        return iter(list(self._foon.units.values()) + list(self._failnet.units.values()))

    def __len__(self) -> int:
        return len(self._foon.units) + len(self._failnet.units)


def merge(store: KnowledgeStore, units: Iterable[FunctionalUnit], section: str = "foon") -> MergeReport:
    return store.merge(units, section)


def merge_blocks(store: KnowledgeStore, blocks: Iterable[ParsedBlock], section: str | None = None) -> MergeReport:
    """Merge parsed blocks, honouring their sections unless ``section`` overrides."""
    total = MergeReport()
    by_section: dict[str, list[ParsedBlock]] = {}
    for b in blocks:
        by_section.setdefault(section or b.section, []).append(b)
    for name, group in by_section.items():
        trig = {b.unit.unit_id: b.triggers for b in group if b.triggers}
        rep = store.merge([b.unit for b in group], name, trig)
        total.added += rep.added
        total.skipped_duplicates += rep.skipped_duplicates
    return total


def dump_store(store: KnowledgeStore) -> str:
    """Serialize the store: a ``[FOON]`` section then a ``[FAILNET]`` section,
    units sorted by unit_id, LF newlines."""
    out = ["[FOON]", ""]
    for uid in sorted(store.foon_units):
        out.append(store.foon_units[uid].canonicalize().to_text())
    out += ["[FAILNET]", ""]
    for uid in sorted(store.failnet_units):
        for trig in sorted(store.failnet_triggers.get(uid, ()), key=lambda t: (t[0], sorted(t[1]))):
            out.append(format_trigger(trig))
        out.append(store.failnet_units[uid].canonicalize().to_text())
    return "\n".join(out)


def loads_store(text: str) -> KnowledgeStore:
    store = KnowledgeStore()
    if text.strip() and any(
        ln.split("#", 1)[0].strip() and not ln.strip().startswith("[") for ln in text.splitlines()
    ):
        merge_blocks(store, parse_blocks(text))
    else:
        # headers only (or nothing): the legal empty store; still reject junk headers
        for ln in text.splitlines():
            s = ln.split("#", 1)[0].strip()
            if s and s[1:-1].strip().lower() not in SECTIONS:
                raise FoonSyntaxError("unknown section", 0, s)
    return store


def load_store(path) -> KnowledgeStore:
    with open(path, encoding="utf-8") as fh:
        return loads_store(fh.read())


def save_store(store: KnowledgeStore, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dump_store(store))
