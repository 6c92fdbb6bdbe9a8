import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from star.kg import ObjectNode, TaskTree, parse_subgraph
from star.planner.emit import (
    ActionNamer,
    CompileError,
    EmissionError,
    build_emission,
    compile_tree,
    emit_domain_problem,
)
from star.planner.ground import GroundAction, GroundedPlanningTask, GroundingLimitError, ground
from star.planner.model import Literal, Plan, format_typed, write_domain, write_problem
from star.planner.parser import (
    PddlSyntaxError,
    UnknownPredicateError,
    UnsupportedRequirementError,
    parse_pddl,
)
from star.planner.search import (
    NodeBudgetExceeded,
    UnsolvableError,
    breadth_first,
    h_ff,
    solve,
    validate_plan,
)
from star.retrieval import KitchenState

import oracles

MINIMAL = """(define (domain kitchen)
  (:requirements :strips :typing)
  (:types item)
  (:predicates (clean ?i - item) (dirty ?i - item))
  (:action wash
    :parameters (?i - item)
    :precondition (and (dirty ?i))
    :effect (and (clean ?i) (not (dirty ?i)))))
"""

CAFETERIA = """(define (domain cafeteria)
  (:requirements :strips :typing)
  (:types place - object food drink - item item)
  (:constants counter - place)
  (:predicates (at ?i - item ?p - place) (adjacent ?a ?b - place) (held ?i - item) (free))
  (:action move
    :parameters (?i - item ?from ?to - place)
    :precondition (and (at ?i ?from) (adjacent ?from ?to))
    :effect (and (at ?i ?to) (not (at ?i ?from))))
  (:action pick
    :parameters (?i - item ?p - place)
    :precondition (and (at ?i ?p) (free))
    :effect (and (held ?i) (not (free)) (not (at ?i ?p))))
  (:action serve
    :parameters (?f - food ?d - drink)
    :precondition (and (held ?f) (held ?d))
    :effect (and (free))))
"""

CAFETERIA_PROBLEM = """(define (problem lunch)
  (:domain cafeteria)
  (:objects soup bread - food tea - drink table tray - place)
  (:init (at soup counter) (at bread table) (at tea tray) (free)
         (adjacent counter table) (adjacent table tray) (adjacent tray counter))
  (:goal (and (held soup) (at bread tray))))
"""


def chain_task():
    facts = [Literal("p", (x,)) for x in "abc"]
    acts = [
        GroundAction("(make-c)", frozenset({1}), frozenset({2}), frozenset()),
        GroundAction("(make-b)", frozenset({0}), frozenset({1}), frozenset()),
        GroundAction("(make-a)", frozenset(), frozenset({0}), frozenset()),
    ]
    return GroundedPlanningTask(facts, acts, frozenset(), frozenset({2}))


# ---------------------------------------------------------------------------
# parser


def test_minimal_domain():
    d = parse_pddl(MINIMAL)
    assert d.name == "kitchen"
    assert [a.name for a in d.actions] == ["wash"]
    assert d.actions[0].delete == [Literal("dirty", ("?i",))]


def test_unbalanced_paren_position():
    with pytest.raises(PddlSyntaxError) as exc:
        parse_pddl("(define (domain d)\n  (:predicates (p ?x)\n")
    assert (exc.value.line, exc.value.col) == (2, 3)
    with pytest.raises(PddlSyntaxError) as exc:
        parse_pddl("(define (domain d)))")
    assert (exc.value.line, exc.value.col) == (1, 20)


def test_unsupported_requirement_named():
    with pytest.raises(UnsupportedRequirementError) as exc:
        parse_pddl("(define (domain d) (:requirements :strips :adl))")
    assert exc.value.flag == ":adl"
    assert ":adl" in str(exc.value)


def test_unknown_predicate():
    text = MINIMAL.replace("(and (dirty ?i))", "(and (muddy ?i))")
    with pytest.raises(UnknownPredicateError) as exc:
        parse_pddl(text)
    assert exc.value.predicate == "muddy"


def test_problem_round_trip():
    d = parse_pddl(CAFETERIA)
    p = parse_pddl(CAFETERIA_PROBLEM, d)
    assert parse_pddl(write_domain(d)) == d
    assert parse_pddl(write_problem(p), d) == p


@pytest.mark.parametrize("items, text", [
    ([("a", "object"), ("b", "t")], "a - object b - t"),
    ([("b", "t"), ("a", "object")], "b - t a"),
    ([("a", "object"), ("c", "object")], "a c"),
])
def test_format_typed(items, text):
    assert format_typed(items) == text


# ---------------------------------------------------------------------------
# grounding


def test_one_param_two_constants():
    d = parse_pddl(MINIMAL)
    p = parse_pddl("(define (problem p) (:domain kitchen) (:objects cup plate - item)"
                   " (:init (dirty cup) (dirty plate)) (:goal (and (clean cup))))", d)
    assert sorted(a.name for a in ground(d, p).actions) == ["(wash cup)", "(wash plate)"]


def test_unreachable_precondition_pruned():
    d = parse_pddl(MINIMAL.replace("(dirty ?i))\n    :effect", "(dirty ?i) (wet ?i))\n    :effect")
                   .replace("(dirty ?i - item))", "(dirty ?i - item) (wet ?i - item))"))
    p = parse_pddl("(define (problem p) (:domain kitchen) (:objects cup - item)"
                   " (:init (dirty cup)) (:goal (and (clean cup))))", d)
    assert ground(d, p).actions == []


def enumerate_ground_count(domain, problem):
    """Counting oracle: full cartesian product over typed objects, then the
    reachability fixpoint, without the grounder's incremental pruning."""
    parent = dict(domain.types)

    def is_a(t, target):
        while True:
            if t == target or target == "object":
                return True
            if t not in parent:
                return False
            t = parent[t]

    objs = list(domain.constants) + list(problem.objects)
    candidates = []
    for a in domain.actions:
        pools = [[n for n, t in objs if is_a(t, typ)] for _, typ in a.parameters]
        for combo in itertools.product(*pools):
            b = dict(zip((v for v, _ in a.parameters), combo))
            sub = lambda lits: {Literal(l.predicate, tuple(b.get(x, x) for x in l.args)) for l in lits}
            candidates.append((sub(a.precondition), sub(a.add)))
    alive = candidates
    while True:
        producible = set(problem.init).union(*(add for _, add in alive)) if alive else set(problem.init)
        kept = [c for c in alive if c[0] <= producible]
        if len(kept) == len(alive):
            return len(kept)
        alive = kept


def test_cafeteria_count_matches_enumeration():
    d = parse_pddl(CAFETERIA)
    p = parse_pddl(CAFETERIA_PROBLEM, d)
    task = ground(d, p)
    assert len(task.actions) == enumerate_ground_count(d, p)
    assert len(task.actions) > 0


def test_grounding_cap():
    d = parse_pddl(CAFETERIA)
    p = parse_pddl(CAFETERIA_PROBLEM, d)
    with pytest.raises(GroundingLimitError):
        ground(d, p, max_actions=3)


# ---------------------------------------------------------------------------
# search


def test_goal_in_init_gives_empty_plan():
    t = chain_task()
    t2 = GroundedPlanningTask(t.facts, t.actions, frozenset({2}), frozenset({2}))
    assert solve(t2).steps == []
    assert validate_plan(Plan([]), t2) == (True, None)


def test_linear_chain_plan_length_three():
    plan = solve(chain_task())
    assert plan.steps == ["(make-a)", "(make-b)", "(make-c)"]
    assert len(breadth_first(chain_task())) == 3
    assert h_ff(chain_task()) == 3


def test_swapped_steps_fail_validation():
    assert validate_plan(Plan(["(make-b)", "(make-a)", "(make-c)"]), chain_task()) == (False, 0)
    assert validate_plan(Plan(["(make-a)", "(make-c)", "(make-b)"]), chain_task()) == (False, 1)
    assert validate_plan(Plan(["(make-a)"]), chain_task()) == (False, 1)


def test_unsolvable():
    t = chain_task()
    t.goal = frozenset({2})
    t2 = GroundedPlanningTask(t.facts + [Literal("p", ("z",))], t.actions, frozenset(), frozenset({3}))
    with pytest.raises(UnsolvableError):
        solve(t2)
    assert h_ff(t2) == float("inf")


def test_dead_root_falls_back_or_fails():
    # deletes make the goal unreachable although the relaxation finds it
    facts = [Literal("p", (x,)) for x in "ab"]
    acts = [GroundAction("(spend)", frozenset({0}), frozenset({1}), frozenset({0})),
            GroundAction("(need-both)", frozenset({0, 1}), frozenset(), frozenset())]
    t = GroundedPlanningTask(facts + [Literal("p", ("g",))],
                             acts + [GroundAction("(g)", frozenset({0, 1}), frozenset({2}), frozenset())],
                             frozenset({0}), frozenset({2}))
    assert h_ff(t) == 2
    with pytest.raises(UnsolvableError):
        solve(t)


def test_node_budget():
    rng = random.Random(3)
    (task, n), = oracles.solvable_tasks(rng, 1, n_facts=(10, 12), n_actions=(18, 20))
    with pytest.raises(NodeBudgetExceeded):
        breadth_first(task, node_budget=0)


def test_cafeteria_solves():
    d = parse_pddl(CAFETERIA)
    task = ground(d, parse_pddl(CAFETERIA_PROBLEM, d))
    plan = solve(task)
    assert validate_plan(plan, task)[0]
    assert oracles.run_plan(task, plan.steps)
    assert len(plan) <= 2 * oracles.bfs_length(task)


def test_random_tasks_against_bfs():
    rng = random.Random(11)
    for task, optimum in oracles.solvable_tasks(rng, 40):
        plan = solve(task)
        assert oracles.run_plan(task, plan.steps)
        assert len(plan) <= 2 * optimum


def test_h_ff_never_undercuts_relaxed_optimum():
    rng = random.Random(12)
    for _ in range(40):
        task = oracles.random_task(rng, n_facts=(3, 8), n_actions=(2, 10))
        best = oracles.relaxed_optimum(task)
        h = h_ff(task)
        if best is None:
            assert h == float("inf")
        else:
            assert h >= best


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_solve_agrees_with_bfs_on_solvability(seed):
    task = oracles.random_task(random.Random(seed), n_facts=(3, 8), n_actions=(2, 10))
    optimum = oracles.bfs_length(task)
    try:
        plan = solve(task)
    except UnsolvableError:
        assert optimum is None
    else:
        assert optimum is not None and oracles.run_plan(task, plan.steps)


# ---------------------------------------------------------------------------
# emission and compilation

POUR = parse_subgraph("U\nI water cup | filled | water\nI bowl | empty\nM pour\n"
                      "O bowl | filled | water\nO water cup | empty\n")[0]
KITCHEN = KitchenState([ObjectNode("water cup", ("filled",), ("water",)), ObjectNode("bowl", ("empty",))])


def test_pour_emission():
    em = build_emission(POUR, KITCHEN)
    [action] = em.domain.actions
    assert action.name == "pour"
    assert Literal("is-state", ("?bowl", "filled")) in action.add
    assert Literal("has-ingredient", ("?bowl", "ing-water")) in action.add
    assert Literal("has-ingredient", ("?water_cup", "ing-water")) in action.delete
    assert Literal("is-state", ("bowl", "filled")) in em.problem.goal
    for pred in ("(is-state ?o - obj ?s - label)", "(at-hand ?o - obj)", "(exists ?o - obj)"):
        assert pred in em.domain_text


def test_emission_is_order_insensitive():
    rev = type(POUR)(reversed(POUR.inputs), POUR.motion, reversed(POUR.outputs))
    assert emit_domain_problem(rev, KITCHEN) == emit_domain_problem(POUR, KITCHEN)


def test_emission_round_trips_through_parser():
    dom_text, prob_text = emit_domain_problem(POUR, KITCHEN)
    d = parse_pddl(dom_text)
    assert write_domain(d) == dom_text
    assert write_problem(parse_pddl(prob_text, d)) == prob_text


def test_same_verb_different_signature():
    other = parse_subgraph("U\nI milk | cold\nI glass\nM pour\nO glass | filled | milk\n")[0]
    namer = ActionNamer()
    a = build_emission(POUR, KITCHEN, namer).domain.actions[0].name
    b = build_emission(other, KITCHEN, namer).domain.actions[0].name
    again = build_emission(POUR, KITCHEN, namer).domain.actions[0].name
    assert (a, b, again) == ("pour", "pour_2", "pour")


def test_reserved_verb():
    bad = parse_subgraph("U\nI bowl\nM exists\nO bowl\n")[0]
    with pytest.raises(EmissionError):
        build_emission(bad, KITCHEN)


CHAIN = """U
I potato | raw
I knife
M chop
O potato | chopped
O knife

U
I potato | chopped
I pot
M boil
O potato | cooked
O pot

U
I potato | cooked
I plate
M place
O potato | plated
O plate
"""


def test_compile_three_unit_chain():
    units = parse_subgraph(CHAIN)
    kitchen = KitchenState([ObjectNode("potato", ("raw",)), ObjectNode("knife"), ObjectNode("pot"),
                            ObjectNode("plate"), ObjectNode("spoon")])
    out = compile_tree(TaskTree(units, ObjectNode("potato", ("plated",))), kitchen)
    assert len(out) == 3
    for c in out:
        d = parse_pddl(c.domain_text)
        task = ground(d, parse_pddl(c.problem_text, d))
        assert validate_plan(c.plan, task)[0]
    assert [c.plan.steps for c in out] == [["(chop knife potato)"], ["(boil pot potato)"], ["(place plate potato)"]]


def test_compile_empty_tree():
    assert compile_tree(TaskTree([], ObjectNode("x")), KITCHEN) == []


def test_compile_names_unsolvable_middle_unit():
    units = parse_subgraph(CHAIN)
    kitchen = KitchenState([ObjectNode("potato", ("raw",)), ObjectNode("knife"), ObjectNode("plate")])
    with pytest.raises(CompileError) as exc:
        compile_tree(TaskTree(units, ObjectNode("potato")), kitchen)
    assert exc.value.unit_id == units[1].unit_id


def test_compile_pancake(pancake_tree, pancake_world):
    out = compile_tree(pancake_tree, KitchenState.from_world(pancake_world))
    assert len(out) == len(pancake_tree.units)
    assert out[4].plan.steps == ["(place pan stove)"]
