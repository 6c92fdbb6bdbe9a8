"""Symbolic executor for task trees with failure injection, synthetic frames
and an episode loop wiring monitoring and recovery together."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .fm import RetriesExhaustedError
from .kg import FAILURE_TYPES, FunctionalUnit, KnowledgeStore, ObjectNode, TaskTree, parse_blocks
from .monitor import DetectionError, FailureReport, Frame, SamplingPolicy, decode_png, detect
from .providers import CompletionProvider, ProviderError
from .recovery import (
    REEXECUTE_CAP,
    DecisionKind,
    RecoveryTree,
    SpliceError,
    commit_recovery,
    decide_strategy,
    generate_recovery,
    search_failnet,
    splice,
)


class PreconditionError(RuntimeError):
    def __init__(self, unit_id: str, missing: list[str]):
        self.unit_id = unit_id
        self.missing = missing
        super().__init__(f"unit {unit_id} cannot run: " + "; ".join(missing))


class UnsafeActionError(RuntimeError):
    def __init__(self, verb: str, unmet: frozenset[str]):
        self.verb = verb
        self.unmet = unmet
        super().__init__(f"unsafe action {verb!r}: hazard preconditions unmet: {', '.join(sorted(unmet))}")


# ---------------------------------------------------------------------------
# World state


@dataclass
class WorldState:
    objects: dict[str, ObjectNode]
    hazards: frozenset[str] = frozenset()
    collateral_registry: frozenset[str] = frozenset()
    unsafe: Mapping[str, frozenset[str]] = field(default_factory=dict)

    @classmethod
    def from_config(cls, cfg) -> WorldState:
        objs: dict[str, ObjectNode] = {}
        for o in list(cfg.objects) + list(cfg.collateral):
            if o.name in objs:
                raise ValueError(f"duplicate world object {o.name!r}")
            objs[o.name] = o
        return cls(objs, frozenset(cfg.hazards), frozenset(objs), dict(cfg.unsafe))

    def satisfies(self, req: ObjectNode) -> bool:
        have = self.objects.get(req.name)
        return have is not None and have.satisfies(req)

    def snapshot(self) -> list[str]:
        return [self.objects[k].to_text() for k in sorted(self.objects)]


@dataclass(frozen=True)
class FailureInjection:
    """A failure forced at tree position ``at_unit``.

    ``target`` and ``states`` override the default effect of the failure
    type; ``apply_nominal`` decides whether the unit's normal effect still
    happens first.
    """

    at_unit: int
    failure_type: str
    target: str | None = None
    states: tuple[str, ...] | None = None
    apply_nominal: bool | None = None

    def __post_init__(self) -> None:
        if self.failure_type not in FAILURE_TYPES:
            raise ValueError(f"unknown failure type {self.failure_type!r}")
        if self.at_unit < 0:
            raise ValueError("at_unit must be non-negative")

    @classmethod
    def from_dict(cls, d: Mapping) -> FailureInjection:
        states = d.get("states")
        return cls(int(d["at_unit"]), d["failure_type"], d.get("target"),
                   tuple(states) if states is not None else None, d.get("apply_nominal"))


# failure type -> (nominal effect applied, default target role, default states)
_DEFAULT_EFFECTS = {
    "overpour": (True, "output", ("watery",)),
    "slip": (False, None, None),
    "incorrect_mix": (True, "output", ("unevenly-mixed",)),
    "misplaced_pour": (True, "output", ("misplaced",)),
    "collateral": (True, "collateral", ("knocked-over",)),
    "unsafe_action": (False, None, None),
    "other": (False, None, None),
}


@dataclass(frozen=True)
class ExecutionConfig:
    unit_duration: float = 60.0
    frame_interval: float = 5.0
    frame_height: int = 32
    frame_width: int = 48
    band_rows: int = 8


# ---------------------------------------------------------------------------
# Synthetic frames

NOMINAL_COLOR = (0, 200, 0)
STATUS_COLORS = {
    "overpour": (0, 0, 255),
    "slip": (255, 255, 0),
    "incorrect_mix": (255, 128, 0),
    "misplaced_pour": (255, 0, 255),
    "collateral": (255, 0, 0),
    "unsafe_action": (255, 255, 255),
    "other": (0, 255, 255),
}


def _body_color(unit_id: str, k: int) -> tuple[int, int, int]:
    # every channel stays in 64..127, away from the status palette
    h = hashlib.sha256(unit_id.encode()).digest()
    return tuple(64 + h[i] % 56 + k % 8 for i in range(3))


def render_frames(unit: FunctionalUnit, failure_type: str | None, cfg: ExecutionConfig) -> list[Frame]:
    """Solid-color frames: a status band on top, a per-unit body below.

    The band switches from the nominal color to the failure's color at half
    the unit duration.
    """
    frames = []
    n = int(cfg.unit_duration // cfg.frame_interval)
    onset = cfg.unit_duration / 2
    for k in range(n + 1):
        t = k * cfg.frame_interval
        px = np.empty((cfg.frame_height, cfg.frame_width, 3), dtype=np.uint8)
        px[:] = _body_color(unit.unit_id, k)
        band = STATUS_COLORS[failure_type] if failure_type and t >= onset else NOMINAL_COLOR
        px[:cfg.band_rows] = band
        frames.append(Frame(px, t))
    return frames


# ---------------------------------------------------------------------------
# Execution


def unmet_inputs(world: WorldState, unit: FunctionalUnit) -> list[str]:
    out = []
    for req in unit.inputs:
        have = world.objects.get(req.name)
        if have is None:
            out.append(f"{req.name} absent")
        elif not have.satisfies(req):
            out.append(f"{req.name} needs {req.to_text()} but is {have.to_text()}")
    return out


def _hazard_updates(unit: FunctionalUnit, hazards: frozenset[str]) -> frozenset[str]:
    params = unit.motion.params
    sets = {f.strip() for f in params.get("sets", "").split(",") if f.strip()}
    clears = {f.strip() for f in params.get("clears", "").split(",") if f.strip()}
    return frozenset((set(hazards) | sets) - clears)


def execute_unit(
    world: WorldState,
    unit: FunctionalUnit,
    injection: FailureInjection | None = None,
    cfg: ExecutionConfig = ExecutionConfig(),
) -> tuple[WorldState, list[Frame]]:
    """Apply one unit to a copy of ``world`` and render its frames."""
    required = world.unsafe.get(unit.motion.verb)
    if required is not None and not required <= world.hazards:
        raise UnsafeActionError(unit.motion.verb, required - world.hazards)
    missing = unmet_inputs(world, unit)
    if missing:
        raise PreconditionError(unit.unit_id, missing)

    objs = dict(world.objects)
    hazards = world.hazards
    nominal, role, states = (True, None, None)
    if injection is not None:
        nominal, role, states = _DEFAULT_EFFECTS[injection.failure_type]
        if injection.apply_nominal is not None:
            nominal = injection.apply_nominal
        if injection.states is not None:
            states = injection.states
    if nominal:
        for c in unit.consumed_inputs():
            objs.pop(c.name, None)
        for o in unit.outputs:
            objs[o.name] = o
        hazards = _hazard_updates(unit, hazards)
    if injection is not None and states is not None:
        target = injection.target
        if target is None and role == "output":
            target = unit.outputs[0].name
        elif target is None and role == "collateral":
            used = {o.name for o in unit.inputs + unit.outputs}
            spare = sorted(n for n in world.collateral_registry if n not in used and n in objs)
            target = spare[0] if spare else None
        if target is not None:
            old = objs.get(target, ObjectNode(target))
            objs[target] = ObjectNode(target, tuple(states), old.contains)
    new = replace(world, objects=objs, hazards=hazards)
    frames = render_frames(unit, injection.failure_type if injection else None, cfg)
    return new, frames


# ---------------------------------------------------------------------------
# Synthetic vision


_EXPLANATIONS = {
    "overpour": "too much liquid was poured (overpour), leaving the {o} too watery",
    "slip": "the {o} slipped from the gripper",
    "incorrect_mix": "incorrect mix: the {o} is unevenly mixed",
    "misplaced_pour": "misplaced pour: the contents missed the {o}",
    "collateral": "collateral event: the robot knocked over the {o}",
    "unsafe_action": "unsafe action: hazard preconditions for this motion are unmet",
    "other": "the action did not reach its intended result",
}


class SyntheticVisionProvider(CompletionProvider):
    """Reads the status colors painted by :func:`render_frames`.

    Works the same on one grid image or on separate frames: the failure type
    is the status color with the most pixels, and affected objects come from
    the unit in the prompt.
    """

    def __init__(self, collateral: Iterable[str] = ()):
        super().__init__()
        self.collateral = sorted(collateral)

    def _complete(self, prompt, max_tokens, images):
        if not images:
            raise ProviderError("no images in detection query")
        counts = dict.fromkeys(FAILURE_TYPES, 0)
        for png in images:
            px = decode_png(png).reshape(-1, 3)
            for ftype, color in STATUS_COLORS.items():
                counts[ftype] += int(np.all(px == np.array(color, dtype=np.uint8), axis=1).sum())
        ftype = max(FAILURE_TYPES, key=lambda t: (counts[t], -FAILURE_TYPES.index(t)))
        if counts[ftype] == 0:
            return "FAILED: no\nTYPE: none\nEXPLANATION: the action completed as intended\nOBJECTS: none"
        unit = self._unit(prompt.user)
        objs = self._objects(ftype, unit)
        expl = _EXPLANATIONS[ftype].format(o=" and ".join(objs) or "object")
        return f"FAILED: yes\nTYPE: {ftype}\nEXPLANATION: {expl}\nOBJECTS: {', '.join(objs)}"

    @staticmethod
    def _unit(user: str) -> FunctionalUnit | None:
        text = user.split("\n", 1)[1] if "\n" in user else user
        try:
            return parse_blocks(text)[0].unit
        except Exception:
            return None

    def _objects(self, ftype: str, unit: FunctionalUnit | None) -> list[str]:
        if ftype == "collateral":
            used = {o.name for o in unit.inputs + unit.outputs} if unit else set()
            return [n for n in self.collateral if n not in used][:1]
        if unit is None:
            return []
        if ftype in ("overpour", "incorrect_mix", "misplaced_pour"):
            return [unit.outputs[0].name]
        if ftype == "slip":
            consumed = unit.consumed_inputs()
            return [(consumed or list(unit.inputs))[0].name]
        return sorted(o.name for o in unit.inputs)


# ---------------------------------------------------------------------------
# Episodes


@dataclass
class UnitRecord:
    unit_id: str
    origin: str
    pre_state: list[str]
    post_state: list[str]
    frames: int
    detection: dict | None = None
    decision: str | None = None
    recovery: dict | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class EpisodeLog:
    goal: str
    records: list[UnitRecord] = field(default_factory=list)
    executed_ids: list[str] = field(default_factory=list)
    status: str = "failure"
    cause: str = ""
    recoveries: list[dict] = field(default_factory=list)
    detector_calls: int = 0
    generator_calls: int = 0

    @property
    def reports(self) -> list[dict]:
        return [r.detection for r in self.records if r.detection is not None]

    def first_report(self) -> dict | None:
        for r in self.records:
            if r.detection is not None and r.detection.get("failed"):
                return r.detection
        return None

    def to_dict(self) -> dict:
        return {
            "goal": self.goal,
            "status": self.status,
            "cause": self.cause,
            "executed_ids": list(self.executed_ids),
            "recoveries": self.recoveries,
            "detector_calls": self.detector_calls,
            "generator_calls": self.generator_calls,
            "records": [r.to_dict() for r in self.records],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())


@dataclass
class EpisodeConfig:
    detector: CompletionProvider | None = None
    generator: CompletionProvider | None = None
    store: KnowledgeStore | None = None
    recovery_corpus: Sequence[tuple[str, str]] = ()
    capabilities: Iterable[str] | None = None
    mode: str = "grid"
    policy: SamplingPolicy = SamplingPolicy()
    execution: ExecutionConfig = ExecutionConfig()
    reexecute_cap: int = REEXECUTE_CAP
    growth_cap: int = 3
    retry_limit: int = 3
    commit: bool = True


@dataclass
class _Step:
    unit: FunctionalUnit
    origin: str
    tree_index: int | None = None
    achieved: bool = False


def run_episode(
    world: WorldState,
    tree: TaskTree,
    injections: Iterable[FailureInjection] = (),
    config: EpisodeConfig = EpisodeConfig(),
) -> EpisodeLog:
    """Execute ``tree`` unit by unit, detecting and recovering from failures.

    Bounded by ``growth_cap`` on the spliced tree length and
    ``reexecute_cap`` repeats per position, so it always halts.
    """
    log = EpisodeLog(tree.goal.to_text())
    base = len(tree.units)
    pending = {}
    for inj in injections:
        if inj.at_unit >= base:
            raise ValueError(f"injection at unit {inj.at_unit} outside a {base}-unit tree")
        pending[inj.at_unit] = inj
    steps = [_Step(u, "tree", i) for i, u in enumerate(tree.units)]
    cap = config.growth_cap * max(base, 1)
    budget = cap * (1 + config.reexecute_cap)
    repeats: dict[int, int] = {}
    applied: list[RecoveryTree] = []
    det_start = config.detector.call_count if config.detector else 0
    gen_start = config.generator.call_count if config.generator else 0
    executions = 0
    i = 0
    cur = world
    try:
        while i < len(steps):
            step = steps[i]
            if step.achieved:
                # dropped after a recovery that reproduced its outputs
                if step.origin == "tree":
                    log.executed_ids.append(step.unit.unit_id)
                i += 1
                continue
            executions += 1
            if executions > budget:
                log.cause = f"execution budget of {budget} units exhausted"
                return log
            inj = pending.pop(step.tree_index, None) if step.tree_index is not None else None
            rec = UnitRecord(step.unit.unit_id, step.origin, cur.snapshot(), [], 0)
            log.records.append(rec)
            report: FailureReport | None
            try:
                nxt, frames = execute_unit(cur, step.unit, inj, config.execution)
            except UnsafeActionError as exc:
                nxt, frames = cur, []
                report = FailureReport(True, "unsafe_action", str(exc),
                                       frozenset(o.name for o in step.unit.inputs), step.unit.unit_id)
            except PreconditionError as exc:
                rec.error = str(exc)
                rec.post_state = rec.pre_state
                log.cause = str(exc)
                return log
            else:
                report = None
                if config.detector is not None:
                    try:
                        report = detect(config.detector, frames, step.unit, config.execution.unit_duration,
                                        config.policy, config.mode)
                    except DetectionError as exc:
                        rec.error = str(exc)
                        log.cause = str(exc)
                        return log
            rec.frames = len(frames)
            rec.post_state = nxt.snapshot()
            rec.detection = report.to_dict() if report else {"failed": False}
            cur = nxt
            if report is None:
                if step.origin == "tree":
                    log.executed_ids.append(step.unit.unit_id)
                i += 1
                continue

            decision = decide_strategy(report, cur, step.unit)
            if decision.kind is DecisionKind.REEXECUTE and repeats.get(i, 0) < config.reexecute_cap:
                repeats[i] = repeats.get(i, 0) + 1
                rec.decision = decision.kind.value
                continue
            rec.decision = DecisionKind.REPLAN.value
            recovery = None
            if config.store is not None:
                recovery = search_failnet(config.store, report, cur)
            if recovery is None and config.generator is not None:
                try:
                    recovery = generate_recovery(
                        config.generator, report, cur, config.recovery_corpus,
                        capabilities=config.capabilities, failed_unit=step.unit,
                        retry_limit=config.retry_limit,
                    )
                except (RetriesExhaustedError, ProviderError) as exc:
                    rec.recovery = {"error": str(exc)}
                    log.cause = f"recovery generation failed: {exc}"
                    return log
            if recovery is None:
                log.cause = f"no recovery for {report.failure_type}"
                return log
            active = TaskTree([s.unit for s in steps], tree.goal)
            try:
                spliced = splice(active, recovery, i, cur)
            except SpliceError as exc:
                rec.recovery = {"provenance": recovery.provenance, "error": str(exc)}
                log.cause = str(exc)
                return log
            if len(spliced.units) > cap:
                log.cause = f"spliced tree exceeds {cap} units"
                return log
            dropped = len(spliced.units) == len(steps) + len(recovery.units) - 1
            new_steps = steps[:i] + [_Step(u, recovery.provenance) for u in recovery.units]
            failed = steps[i]
            if dropped:
                new_steps.append(_Step(failed.unit, failed.origin, failed.tree_index, achieved=True))
            else:
                new_steps.append(failed)
            new_steps += steps[i + 1:]
            steps = new_steps
            applied.append(recovery)
            info = {"provenance": recovery.provenance, "unit_ids": recovery.unit_ids,
                    "trigger": [recovery.trigger[0], sorted(recovery.trigger[1])]}
            rec.recovery = info
            log.recoveries.append(info)
        goal = tree.goal
        if cur.satisfies(goal):
            log.status = "success"
        else:
            log.cause = f"goal {goal.to_text()} not reached"
        if log.status == "success" and config.commit and config.store is not None:
            for r in applied:
                commit_recovery(config.store, r, True)
        return log
    finally:
        if config.detector is not None:
            log.detector_calls = config.detector.call_count - det_start
        if config.generator is not None:
            log.generator_calls = config.generator.call_count - gen_start


def progress_score(executed, gold: TaskTree) -> float:
    """Longest common subsequence of executed and gold unit ids over len(gold)."""
    if not gold.units:
        raise ValueError("gold tree is empty")
    if isinstance(executed, EpisodeLog):
        a = executed.executed_ids
    elif isinstance(executed, TaskTree):
        a = executed.unit_ids
    else:
        a = list(executed)
    b = gold.unit_ids
    prev = [0] * (len(b) + 1)
    for x in a:
        row = [0]
        for j, y in enumerate(b):
            row.append(prev[j] + 1 if x == y else max(prev[j + 1], row[j]))
        prev = row
    return prev[-1] / len(b)
