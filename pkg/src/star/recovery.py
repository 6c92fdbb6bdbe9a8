"""Failure recovery: re-execute or replan, FailNet lookup, model-generated
recovery subtrees, splicing into the active plan and committing back."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Mapping, Sequence

from .fm import (
    DEFAULT_RETRY_LIMIT,
    GRAMMAR,
    NoBlockFoundError,
    RetriesExhaustedError,
    TreeSyntaxError,
    VerificationReport,
    load_corpus,
    parse_corpus,
    parse_recovery_response,
    verify_tree,
)
from .kg import (
    FAILURE_TYPES,
    FunctionalUnit,
    KnowledgeStore,
    MergeReport,
    ObjectNode,
    TaskTree,
    loads_store,
    serialize_subgraph,
)
from .monitor import FailureReport
from .providers import CompletionProvider, PromptText
from .retrieval import KitchenState, RetrievalError, _apply, backward_search

REEXECUTE_CAP = 2


class SpliceError(RuntimeError):
    def __init__(self, unit_index: int, unit_id: str, reason: str):
        self.unit_index = unit_index
        self.unit_id = unit_id
        super().__init__(f"spliced tree breaks at unit {unit_index} ({unit_id}): {reason}")


class DecisionKind(enum.Enum):
    REEXECUTE = "ReExecute"
    REPLAN = "Replan"


@dataclass(frozen=True)
class RecoveryDecision:
    kind: DecisionKind
    rationale: str


@dataclass
class RecoveryTree:
    units: list[FunctionalUnit]
    trigger: tuple[str, frozenset[str]]
    provenance: str = "failnet"

    def __post_init__(self) -> None:
        if not self.units:
            raise ValueError("a recovery tree needs at least one unit")
        if self.trigger[0] not in FAILURE_TYPES:
            raise ValueError(f"unknown failure type {self.trigger[0]!r}")
        if self.provenance not in ("failnet", "generated"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        self.trigger = (self.trigger[0], frozenset(self.trigger[1]))

    @property
    def unit_ids(self) -> list[str]:
        return [u.unit_id for u in self.units]


def _objects(world) -> Mapping[str, ObjectNode]:
    if isinstance(world, KitchenState):
        return world.objects
    objs = world.objects
    if isinstance(objs, Mapping):
        return objs
    return {o.name: o for o in objs}


def _kitchen(world) -> KitchenState:
    return KitchenState(_objects(world).values())


def inputs_hold(unit: FunctionalUnit, world) -> bool:
    objs = _objects(world)
    for req in unit.inputs:
        have = objs.get(req.name)
        if have is None or not have.satisfies(req):
            return False
    return True


def decide_strategy(report: FailureReport, world, failed_unit: FunctionalUnit) -> RecoveryDecision:
    if not report.failed:
        raise ValueError("decide_strategy needs a failed report")
    if inputs_hold(failed_unit, world):
        return RecoveryDecision(DecisionKind.REEXECUTE, "inputs of the failed unit still hold; repeat it")
    missing = [
        r.name for r in failed_unit.inputs
        if not (_objects(world).get(r.name) and _objects(world)[r.name].satisfies(r))
    ]
    return RecoveryDecision(DecisionKind.REPLAN, "inputs no longer hold: " + ", ".join(missing))


def trigger_matches(trigger: tuple[str, frozenset[str]], report: FailureReport) -> bool:
    ftype, objs = trigger
    if ftype != report.failure_type:
        return False
    return not objs or not report.affected_objects or bool(objs & report.affected_objects)


def search_failnet(store: KnowledgeStore, report: FailureReport, world) -> RecoveryTree | None:
    """Stored recovery whose trigger matches the report and whose subtree
    can run from ``world``. Roots are tried in unit_id order."""
    sec = store.section("failnet")
    kitchen = _kitchen(world)
    for uid in sorted(sec.triggers):
        matching = sorted((t for t in sec.triggers[uid] if trigger_matches(t, report)),
                          key=lambda t: (t[0], sorted(t[1])))
        if not matching:
            continue
        root = sec.units[uid]

        def done(w, root=root):
            return all(o.name in w and w[o.name].satisfies(o) for o in root.outputs)

        try:
            order = backward_search(sec.units, sec.output_index, kitchen, root.inputs, done, seed=[root])
        except RetrievalError:
            order = None
        if order:
            return RecoveryTree(order, matching[0], "failnet")
    return None


def build_recovery_prompt(
    report: FailureReport,
    world,
    corpus: Sequence[tuple[str, str]] = (),
    failed_unit: FunctionalUnit | None = None,
    capabilities: Iterable[str] | None = None,
) -> PromptText:
    objs = "\n".join(f"- {o.to_text()}" for o in sorted(_objects(world).values(), key=lambda o: o.name))
    parts = [
        f"Failure type: {report.failure_type}",
        f"Explanation: {report.explanation or '(none)'}",
        f"Affected objects: {', '.join(sorted(report.affected_objects)) or '(none)'}",
    ]
    if failed_unit is not None:
        parts.append(f"Action that failed:\n```foon\n{failed_unit.to_text()}\n```")
    parts.append(f"World objects now:\n{objs or '- (nothing observed)'}")
    if capabilities is not None:
        parts.append("The robot can only perform these motions: " + ", ".join(sorted(capabilities)))
    parts.append("Write the recovery units that repair the failure using only the world objects.")
    shots = tuple((f"Failure: {req}", f"```foon\n{body}```") for req, body in corpus)
    return PromptText(
        system=f"You are a robot cooking recovery planner.\n{GRAMMAR}",
        user="\n\n".join(parts),
        few_shot_examples=shots,
    )


def verify_recovery(units: list[FunctionalUnit], world, capabilities=None) -> VerificationReport:
    goal = units[-1].outputs[0] if units and units[-1].outputs else ObjectNode("unknown")
    return verify_tree(TaskTree(units, goal), _kitchen(world), goal, capabilities)


def generate_recovery(
    provider: CompletionProvider,
    report: FailureReport,
    world,
    corpus: Sequence[tuple[str, str]] = (),
    *,
    capabilities: Iterable[str] | None = None,
    failed_unit: FunctionalUnit | None = None,
    retry_limit: int = DEFAULT_RETRY_LIMIT,
) -> RecoveryTree:
    base = build_recovery_prompt(report, world, corpus, failed_unit, capabilities)
    prompt = base
    last_report: VerificationReport | None = None
    last_error = ""
    for attempt in range(1, retry_limit + 1):
        text = provider.complete(prompt)
        try:
            units = [u for u, _ in parse_recovery_response(text)]
        except (NoBlockFoundError, TreeSyntaxError) as exc:
            last_error, last_report = str(exc), None
        else:
            check = verify_recovery(units, world, capabilities)
            if check.valid:
                return RecoveryTree(units, (report.failure_type, report.affected_objects), "generated")
            last_report, last_error = check, ""
        detail = last_error or last_report.describe()
        prompt = base.with_feedback(
            f"Attempt {attempt} was rejected: {detail}\nAnswer with corrected recovery units."
        )
    raise RetriesExhaustedError(retry_limit, last_report, last_error)


def _first_break(units: Sequence[FunctionalUnit], world) -> tuple[int, str] | None:
    cur = dict(_objects(world))
    for i, u in enumerate(units):
        nxt = _apply(cur, u)
        if nxt is None:
            miss = [r.name for r in u.inputs if not (cur.get(r.name) and cur[r.name].satisfies(r))]
            return i, "missing " + ", ".join(miss)
        cur = nxt
    return None


def splice(active: TaskTree, recovery: RecoveryTree | None, failed_index: int, world) -> TaskTree:
    """Insert the recovery units before the failed unit.

    ``world`` is the state at the failure point. When the recovery already
    leaves the failed unit's outputs in place the failed unit is dropped;
    otherwise it is kept and repeated. A result that does not verify raises
    SpliceError naming the first unit that cannot run.
    """
    if not 0 <= failed_index < len(active.units):
        raise IndexError(f"failed_index {failed_index} outside 0..{len(active.units) - 1}")
    if recovery is None:
        return TaskTree(list(active.units), active.goal)
    prefix = list(active.units[:failed_index])
    rec = list(recovery.units)
    kept = rec + list(active.units[failed_index:])
    kitchen = _kitchen(world)
    if verify_tree(TaskTree(kept, active.goal), kitchen).valid:
        return TaskTree(prefix + kept, active.goal)
    dropped = rec + list(active.units[failed_index + 1:])
    failed = active.units[failed_index]
    after = _first_break(rec, world)
    if after is None:
        cur = dict(_objects(world))
        for u in rec:
            cur = _apply(cur, u)
        if all(cur.get(o.name) is not None and cur[o.name].satisfies(o) for o in failed.outputs) \
                and verify_tree(TaskTree(dropped, active.goal), kitchen).valid:
            return TaskTree(prefix + dropped, active.goal)
    brk = _first_break(kept, world)
    if brk is None:
        raise SpliceError(len(prefix) + len(kept) - 1, kept[-1].unit_id, "goal not reached")
    idx, why = brk
    raise SpliceError(len(prefix) + idx, kept[idx].unit_id, why)


def commit_recovery(store: KnowledgeStore, recovery: RecoveryTree, succeeded: bool) -> MergeReport:
    """Add a successful generated recovery to FailNet, trigger on its root."""
    if not succeeded or recovery.provenance != "generated":
        return MergeReport()
    root = recovery.units[-1]
    return store.merge(recovery.units, "failnet", {root.unit_id: [recovery.trigger]})


def describe_recovery(recovery: RecoveryTree) -> str:
    return serialize_subgraph(recovery.units)


def _data_text(name: str) -> str:
    return resources.files("star.data").joinpath(name).read_text(encoding="utf-8")


def load_recovery_corpus(path=None) -> list[tuple[str, str]]:
    return load_corpus(path) if path else parse_corpus(_data_text("recovery_examples.foon"))


def load_failnet_seed() -> KnowledgeStore:
    return loads_store(_data_text("failnet_seed.foon"))


def parse_capabilities(text: str) -> frozenset[str]:
    caps = set()
    for line in text.splitlines():
        line = line.split("#", 1)[0]
        caps.update(" ".join(v.lower().split()) for v in line.split(",") if v.strip())
    return frozenset(caps)


def load_capabilities(path=None) -> frozenset[str]:
    if path is None:
        return parse_capabilities(_data_text("capabilities.txt"))
    with open(path, encoding="utf-8") as fh:
        return parse_capabilities(fh.read())
