"""Goal to executable plan: retrieval, model fallback, lifelong merge and
per-unit PDDL compilation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .fm import DEFAULT_RETRY_LIMIT, generate_or_repair
from .kg import KnowledgeStore, MergeReport, ObjectNode, TaskTree
from .planner.emit import CompiledUnit, compile_tree
from .providers import CompletionProvider
from .retrieval import DishTaxonomy, KitchenState, RetrievalCase, RetrievalOutcome, parse_goal, retrieve


class PlanningError(RuntimeError):
    pass


@dataclass
class PlanResult:
    goal: ObjectNode
    outcome: RetrievalOutcome
    tree: TaskTree
    compiled: list[CompiledUnit] = field(default_factory=list)
    merged: MergeReport | None = None
    provider_calls: int = 0

    @property
    def case(self) -> RetrievalCase:
        return self.outcome.case


def plan_goal(
    store: KnowledgeStore,
    goal: str | ObjectNode,
    kitchen: KitchenState,
    taxonomy: DishTaxonomy | None = None,
    provider: CompletionProvider | None = None,
    corpus: Sequence[tuple[str, str]] = (),
    *,
    capabilities: Iterable[str] | None = None,
    retry_limit: int = DEFAULT_RETRY_LIMIT,
    merge: bool = True,
    compile_plans: bool = True,
) -> PlanResult:
    """Retrieve a tree for ``goal``; on a miss or a category match ask the
    provider, merge the verified tree into FOON, then compile every unit.

    Raises PlanningError when nothing is retrieved and no provider is given,
    CompileError when a unit has no plan, and the fm-bridge errors when the
    provider cannot produce a verified tree.
    """
    goal = parse_goal(goal) if isinstance(goal, str) else goal
    taxonomy = taxonomy or DishTaxonomy.default()
    outcome = retrieve(store, goal, kitchen, taxonomy)
    calls_before = provider.call_count if provider is not None else 0
    merged = None
    if outcome.case is RetrievalCase.EXACT_MATCH:
        tree = outcome.tree
    else:
        if provider is None:
            raise PlanningError(f"no task tree for {goal.to_text()!r} and no provider configured")
        tree = generate_or_repair(provider, outcome, goal, kitchen, corpus, retry_limit,
                                  capabilities=capabilities)
        if merge:
            merged = store.merge(tree.units, "foon")
    compiled = compile_tree(tree, kitchen) if compile_plans else []
    calls = provider.call_count - calls_before if provider is not None else 0
    return PlanResult(goal, outcome, tree, compiled, merged, calls)
