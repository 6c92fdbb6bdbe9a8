"""Foundation-model bridge for task-tree generation and repair.

Prompts are built deterministically; model output is parsed back through the
FOON-text parser and verified by set propagation before anything is trusted.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Sequence

from .kg import FoonSyntaxError, FunctionalUnit, ObjectNode, TaskTree, parse_blocks, serialize_subgraph, validate_unit
from .providers import CompletionProvider, PromptText
from .retrieval import KitchenState, RetrievalCase, RetrievalOutcome, parse_goal

DEFAULT_EXAMPLE_COUNT = 5
DEFAULT_RETRY_LIMIT = 3

GRAMMAR = """Task trees are written in FOON-text, one functional unit per block:
U
I <object> | <state>,<state> | <ingredient>;<ingredient>
M <verb> | <key>=<value>;<key>=<value>
O <object> | <state>,<state> | <ingredient>;<ingredient>
Each block starts with U, lists its input objects (I), exactly one motion (M)
and its output objects (O), and ends with a blank line. State and ingredient
fields are optional. Units are listed in execution order. An input is only
available if it is in the kitchen or an earlier unit outputs it. Answer with
the task tree inside a ```foon fenced block."""


class CorpusTooSmallError(ValueError):
    pass


class NoBlockFoundError(ValueError):
    pass


class TreeSyntaxError(ValueError):
    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("; ".join(violations))


class RetriesExhaustedError(RuntimeError):
    def __init__(self, attempts: int, last_report: VerificationReport | None, last_error: str = ""):
        self.attempts = attempts
        self.last_report = last_report
        self.last_error = last_error
        detail = last_error or (last_report.describe() if last_report else "")
        super().__init__(f"no valid tree after {attempts} attempts: {detail}")


# ---------------------------------------------------------------------------
# Example corpus


def parse_corpus(text: str) -> list[tuple[str, str]]:
    """Split ``=== <request>`` headed FOON-text blocks into (request, text) pairs."""
    entries: list[tuple[str, list[str]]] = []
    for line in text.splitlines():
        if line.startswith("==="):
            entries.append((line[3:].strip(), []))
        elif entries:
            entries[-1][1].append(line)
        elif line.strip() and not line.lstrip().startswith("#"):
            raise ValueError("corpus text before the first '===' header")
    return [(req, "\n".join(body).strip() + "\n") for req, body in entries]


def load_corpus(path=None) -> list[tuple[str, str]]:
    if path is None:
        text = resources.files("star.data").joinpath("examples.foon").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return parse_corpus(text)


# ---------------------------------------------------------------------------
# Prompts


def _kitchen_lines(kitchen: KitchenState) -> str:
    return "\n".join(f"- {o.to_text()}" for o in kitchen) or "- (nothing observed)"


def build_generation_prompt(
    request_goal: str,
    kitchen: KitchenState,
    examples: Sequence[tuple[str, str]],
    n_examples: int = DEFAULT_EXAMPLE_COUNT,
) -> PromptText:
    if len(examples) < n_examples:
        raise CorpusTooSmallError(f"need {n_examples} examples, corpus has {len(examples)}")
    shots = tuple((f"Goal: {req}", f"```foon\n{body}```") for req, body in examples[:n_examples])
    user = (
        f"Kitchen objects:\n{_kitchen_lines(kitchen)}\n\n"
        f"Goal: {request_goal}\n"
        "Write a task tree that produces the goal from the kitchen objects."
    )
    return PromptText(system=f"You are a robot cooking task planner.\n{GRAMMAR}", user=user, few_shot_examples=shots)


def build_modification_prompt(
    request_goal: str,
    partial: TaskTree | None,
    kitchen: KitchenState,
    *,
    source_goal: str | None = None,
    allow_empty: bool = False,
    examples: Sequence[tuple[str, str]] = (),
    n_examples: int = DEFAULT_EXAMPLE_COUNT,
) -> PromptText:
    """Prompt asking the model to adapt ``partial`` to ``request_goal``.

    An empty partial tree is only accepted with ``allow_empty``, in which
    case the generation prompt is returned instead.
    """
    if partial is None or not partial.units:
        if not allow_empty:
            raise ValueError("partial tree is empty; pass allow_empty=True to fall back to generation")
        return build_generation_prompt(request_goal, kitchen, examples, n_examples)
    source = source_goal or partial.goal.name
    user = (
        f"Kitchen objects:\n{_kitchen_lines(kitchen)}\n\n"
        f"Reference task tree for {source}:\n```foon\n{serialize_subgraph(partial.units)}```\n\n"
        f"Goal: {request_goal}\n"
        f"Modify the reference tree so that it produces {request_goal} instead of {source}. "
        "Replace ingredients and steps that do not apply, keep the ones that do, and only "
        "use objects from the kitchen or produced by earlier units."
    )
    return PromptText(system=f"You are a robot cooking task planner.\n{GRAMMAR}", user=user)


def build_goal_prompt(instruction: str) -> PromptText:
    return PromptText(
        system="Extract the target object of a cooking instruction. Reply with one line: "
        "<object name> | <state>,<state> (states optional).",
        user=f"Instruction: {instruction}",
    )


_MAKE_RE = re.compile(
    r"^\s*(?:please\s+)?(?:make|prepare|cook|bake|serve|fix)\s+(?:me\s+|us\s+)?(?:a\s+|an\s+|some\s+|the\s+)?(.+?)[\s.!?]*$",
    re.IGNORECASE,
)


def extract_goal(instruction: str, provider: CompletionProvider | None = None) -> ObjectNode:
    """Map a natural-language instruction to a goal object.

    With a provider this is a one-line model call; offline, ``make <dish>``
    style phrasing is handled by a regular expression and anything else is
    taken verbatim.
    """
    if provider is not None:
        reply = provider.complete(build_goal_prompt(instruction), max_tokens=32)
        line = next((ln for ln in reply.splitlines() if ln.strip()), "")
        return parse_goal(line.strip().strip("`"))
    m = _MAKE_RE.match(instruction)
    return parse_goal(m.group(1) if m else instruction)


# ---------------------------------------------------------------------------
# Response parsing


_FENCE_RE = re.compile(r"```[ \t]*([A-Za-z0-9_-]*)[ \t]*\n(.*?)```", re.DOTALL)
_FOON_LINE = re.compile(r"^\s*(?:[UIMOT](?:\s|$)|\[(?:foon|failnet)\]|#)", re.IGNORECASE)


def extract_block(text: str) -> tuple[str, int]:
    """Return the first FOON-text block and its 0-based line offset in ``text``."""
    for m in _FENCE_RE.finditer(text):
        body = m.group(2)
        if any(ln.strip() == "U" for ln in body.splitlines()):
            offset = text.count("\n", 0, m.start(2))
            return body, offset
    lines = text.splitlines()
    for start, ln in enumerate(lines):
        if ln.strip() == "U" or ln.strip().startswith("T "):
            end = start
            while end < len(lines) and (not lines[end].strip() or _FOON_LINE.match(lines[end])):
                end += 1
            return "\n".join(lines[start:end]) + "\n", start
    raise NoBlockFoundError("no FOON-text block found in response")


def parse_tree_response(text: str, goal: ObjectNode | None = None) -> TaskTree:
    """Parse the first FOON-text block in a model response into a tree.

    Raises NoBlockFoundError, or TreeSyntaxError carrying violations with
    line numbers relative to the full response.
    """
    if not text or not text.strip():
        raise NoBlockFoundError("empty response")
    block, offset = extract_block(text)
    try:
        units = [b.unit for b in parse_blocks(block)]
    except FoonSyntaxError as exc:
        line = exc.line + offset if exc.line else 0
        msg = str(exc).split(": ", 1)[-1] if exc.line else str(exc)
        raise TreeSyntaxError([f"line {line}: {msg}" if line else msg]) from exc
    if goal is None:
        goal = units[-1].outputs[0] if units[-1].outputs else ObjectNode("unknown")
    return TaskTree(units, goal)


def parse_recovery_response(text: str) -> list[tuple[FunctionalUnit, list]]:
    block, offset = extract_block(text)
    try:
        return [(b.unit, b.triggers) for b in parse_blocks(block, default_section="failnet")]
    except FoonSyntaxError as exc:
        line = exc.line + offset if exc.line else 0
        raise TreeSyntaxError([f"line {line}: {exc}"]) from exc


# ---------------------------------------------------------------------------
# Verification


@dataclass
class VerificationReport:
    missing_objects: set[str] = field(default_factory=set)
    unreachable_goal: bool = False
    syntax_violations: list[str] = field(default_factory=list)
    capability_violations: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not (self.missing_objects or self.unreachable_goal or self.syntax_violations or self.capability_violations)

    def describe(self) -> str:
        if self.valid:
            return "valid"
        parts = []
        if self.syntax_violations:
            parts.append("syntax: " + "; ".join(self.syntax_violations))
        if self.capability_violations:
            parts.append("capability: " + "; ".join(self.capability_violations))
        if self.missing_objects:
            parts.append("missing objects: " + ", ".join(sorted(self.missing_objects)))
        if self.unreachable_goal:
            parts.append("goal not reached")
        return " | ".join(parts)


def verify_tree(
    tree: TaskTree,
    kitchen: KitchenState | Iterable[ObjectNode],
    goal: ObjectNode | None = None,
    capabilities: Iterable[str] | None = None,
) -> VerificationReport:
    """Check by set propagation that every unit's inputs are available when
    reached and that the goal holds at the end. Reports every missing object.
    """
    goal = goal or tree.goal
    report = VerificationReport()
    caps = None if capabilities is None else {c.lower() for c in capabilities}
    objects = kitchen.available if isinstance(kitchen, KitchenState) else kitchen
    available: set[ObjectNode] = set(objects)
    for idx, unit in enumerate(tree.units):
        for v in validate_unit(unit):
            report.syntax_violations.append(f"unit {idx}: {v}")
        if caps is not None and unit.motion.verb not in caps:
            report.capability_violations.append(
                f"unit {idx}: motion {unit.motion.verb!r} is not a robot capability"
            )
        used = set()
        for req in unit.inputs:
            match = next((a for a in available if a.satisfies(req)), None)
            if match is None:
                report.missing_objects.add(req.name)
            else:
                used.add(match)
        available -= used
        out_names = {o.name for o in unit.outputs}
        available = {a for a in available if a.name not in out_names}
        available |= set(unit.outputs)
    if not any(a.satisfies(goal) for a in available):
        report.unreachable_goal = True
    return report


# ---------------------------------------------------------------------------
# Generate / repair loop


def _feedback(attempt: int, detail: str) -> str:
    return (
        f"Attempt {attempt} was rejected: {detail}\n"
        "Fix these problems and answer with the complete corrected task tree."
    )


def generate_or_repair(
    provider: CompletionProvider,
    outcome: RetrievalOutcome,
    request_goal: str | ObjectNode,
    kitchen: KitchenState,
    corpus: Sequence[tuple[str, str]],
    retry_limit: int = DEFAULT_RETRY_LIMIT,
    *,
    n_examples: int = DEFAULT_EXAMPLE_COUNT,
    capabilities: Iterable[str] | None = None,
) -> TaskTree:
    """Ask the model for a tree (Case 1) or an adaptation (Case 2), reprompting
    with the parse/verification feedback until a verified tree comes back."""
    if outcome.case is RetrievalCase.EXACT_MATCH:
        raise ValueError("exact matches need no model call")
    goal = parse_goal(request_goal) if isinstance(request_goal, str) else request_goal
    goal_text = goal.to_text()
    if outcome.case is RetrievalCase.CATEGORY_MATCH:
        prompt = build_modification_prompt(
            goal_text, outcome.tree, kitchen, source_goal=outcome.partial_source,
            allow_empty=True, examples=corpus, n_examples=n_examples,
        )
    else:
        prompt = build_generation_prompt(goal_text, kitchen, corpus, n_examples)
    base = prompt
    last_report: VerificationReport | None = None
    last_error = ""
    for attempt in range(1, retry_limit + 1):
        response = provider.complete(prompt)
        try:
            tree = parse_tree_response(response, goal)
        except (NoBlockFoundError, TreeSyntaxError) as exc:
            last_error, last_report = str(exc), None
            prompt = base.with_feedback(_feedback(attempt, last_error))
            continue
        report = verify_tree(tree, kitchen, goal, capabilities)
        if report.valid:
            return tree
        last_report, last_error = report, ""
        prompt = base.with_feedback(_feedback(attempt, report.describe()))
    raise RetriesExhaustedError(retry_limit, last_report, last_error)
