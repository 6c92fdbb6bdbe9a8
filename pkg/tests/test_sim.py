import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from star.fm import verify_tree
from star.kg import KnowledgeStore, ObjectNode, TaskTree, parse_subgraph
from star.monitor import compose_grid, encode_png
from star.providers import MockProvider, PromptText
from star.recovery import load_failnet_seed
from star.sim import (
    NOMINAL_COLOR,
    STATUS_COLORS,
    EpisodeConfig,
    EpisodeLog,
    FailureInjection,
    PreconditionError,
    SyntheticVisionProvider,
    UnsafeActionError,
    WorldState,
    execute_unit,
    progress_score,
    run_episode,
)
from star.worldfile import parse_world

import oracles

POUR = parse_subgraph("U\nI water cup | filled | water\nI bowl | empty\nM pour\nO bowl | filled | water\n")[0]


def make_world(text="water cup | filled | water\nbowl | empty\n[collateral]\ncoffee cup | upright\n"):
    return WorldState.from_config(parse_world(text))


def test_nominal_pour():
    w, frames = execute_unit(make_world(), POUR)
    assert w.objects["bowl"] == ObjectNode("bowl", ("filled",), ("water",))
    assert "water cup" not in w.objects
    assert len(frames) == 13 and [f.timestamp for f in frames][:3] == [0, 5, 10]


def test_overpour_makes_output_watery():
    w, frames = execute_unit(make_world(), POUR, FailureInjection(0, "overpour"))
    assert w.objects["bowl"].states == ("watery",)
    assert w.objects["bowl"].contains == ("water",)
    assert tuple(frames[-1].pixels[0, 0]) == STATUS_COLORS["overpour"]
    assert tuple(frames[0].pixels[0, 0]) == NOMINAL_COLOR


def test_collateral_knocks_over_coffee_cup():
    w, _ = execute_unit(make_world(), POUR, FailureInjection(0, "collateral"))
    assert w.objects["coffee cup"] == ObjectNode("coffee cup", ("knocked-over",))
    assert w.objects["bowl"].states == ("filled",)


def test_slip_leaves_world_unchanged():
    before = make_world()
    w, _ = execute_unit(before, POUR, FailureInjection(0, "slip"))
    assert w.objects == before.objects


def test_precondition_error_names_object():
    with pytest.raises(PreconditionError) as exc:
        execute_unit(make_world("bowl | empty\n"), POUR)
    assert exc.value.missing == ["water cup absent"]


def test_execute_does_not_mutate_input():
    w = make_world()
    snap = dict(w.objects)
    execute_unit(w, POUR)
    assert w.objects == snap


IGNITE = parse_subgraph("U\nI stove | off\nM ignite\nO stove | on\n")[0]
SUPERVISE = parse_subgraph("U\nI chef\nM supervise | sets=supervised\nO chef\n")[0]


def test_unsafe_action_raises_before_mutation():
    w = make_world("stove | off\nchef\n[unsafe]\nignite | supervised\n")
    with pytest.raises(UnsafeActionError) as exc:
        execute_unit(w, IGNITE)
    assert exc.value.unmet == frozenset({"supervised"})
    assert w.objects["stove"].states == ("off",)
    w2, _ = execute_unit(w, SUPERVISE)
    assert w2.hazards == frozenset({"supervised"})
    w3, _ = execute_unit(w2, IGNITE)
    assert w3.objects["stove"].states == ("on",)


def test_unsafe_action_in_episode_is_reported():
    w = make_world("stove | off\nchef\n[unsafe]\nignite | supervised\n")
    log = run_episode(w, TaskTree([IGNITE], ObjectNode("stove", ("on",))),
                      config=EpisodeConfig(detector=SyntheticVisionProvider()))
    assert log.status == "failure"
    assert log.records[0].detection["failure_type"] == "unsafe_action"
    assert log.records[0].post_state == log.records[0].pre_state


def test_synthetic_detector_reads_colors():
    _, frames = execute_unit(make_world(), POUR, FailureInjection(0, "overpour"))
    det = SyntheticVisionProvider()
    user = "Action being executed (FOON-text):\n" + POUR.to_text()
    grid = compose_grid(frames[::2][:9])
    text = det.complete(PromptText("s", user), images=[grid.to_png()])
    assert "TYPE: overpour" in text and "OBJECTS: bowl" in text
    _, ok = execute_unit(make_world(), POUR)
    assert det.complete(PromptText("s", user), images=[encode_png(f.pixels) for f in ok]).startswith("FAILED: no")


def seeded_config(**kw):
    kw.setdefault("detector", SyntheticVisionProvider(["coffee cup"]))
    return EpisodeConfig(**kw)


def test_nominal_episode(pancake_world, pancake_tree):
    log = run_episode(WorldState.from_config(pancake_world), pancake_tree, config=seeded_config())
    assert log.status == "success" and log.recoveries == []
    assert log.executed_ids == pancake_tree.unit_ids
    assert progress_score(log, pancake_tree) == 1.0
    assert log.detector_calls == len(pancake_tree.units)


def test_overpour_recovered_from_failnet(pancake_world, pancake_tree):
    log = run_episode(WorldState.from_config(pancake_world), pancake_tree,
                      [FailureInjection(1, "overpour")], seeded_config(store=load_failnet_seed()))
    assert log.status == "success"
    assert len(log.recoveries) == 1 and log.recoveries[0]["provenance"] == "failnet"
    assert log.first_report()["failure_type"] == "overpour"


def test_unrecoverable_episode(pancake_world, pancake_tree):
    bad = MockProvider([("Failure type", "```foon\nU\nI gold flakes\nM pour\nO batter | unmixed\n```")])
    log = run_episode(WorldState.from_config(pancake_world), pancake_tree,
                      [FailureInjection(1, "overpour")], seeded_config(store=KnowledgeStore(), generator=bad))
    assert log.status == "failure"
    assert "recovery generation failed" in log.cause
    assert bad.call_count == 3 and log.generator_calls == 3


def test_slip_is_retried(pancake_world, pancake_tree):
    log = run_episode(WorldState.from_config(pancake_world), pancake_tree,
                      [FailureInjection(0, "slip")], seeded_config())
    assert log.status == "success"
    assert log.records[0].decision == "ReExecute"
    assert len(log.records) == len(pancake_tree.units) + 1


def test_injection_outside_tree(pancake_world, pancake_tree):
    with pytest.raises(ValueError):
        run_episode(WorldState.from_config(pancake_world), pancake_tree, [FailureInjection(7, "slip")])


def test_log_json(tmp_path, pancake_world, pancake_tree):
    log = run_episode(WorldState.from_config(pancake_world), pancake_tree, config=seeded_config())
    path = tmp_path / "log.json"
    log.save(path)
    assert path.read_text() == log.to_json()


def test_progress_examples():
    gold = TaskTree(parse_subgraph("\n".join(f"U\nI s{i}\nM mix\nO s{i + 1}\n" for i in range(4))),
                    ObjectNode("s4"))
    assert progress_score(gold, gold) == 1.0
    assert progress_score(EpisodeLog("s4"), gold) == 0.0
    assert progress_score(gold.unit_ids[:2], gold) == 0.5
    with pytest.raises(ValueError):
        progress_score([], TaskTree([], ObjectNode("x")))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from("abcdef"), max_size=12), st.lists(st.sampled_from("abcdef"), min_size=1, max_size=12))
def test_progress_matches_dp_oracle(executed, gold_ids):
    class Gold:
        units = gold_ids
        unit_ids = gold_ids
    score = progress_score(executed, Gold)
    assert score == oracles.lcs_length(executed, gold_ids) / len(gold_ids)
    assert 0.0 <= score <= 1.0


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_verification_agrees_with_execution(seed):
    rng = random.Random(seed)
    units, kitchen, goal = oracles.random_store_case(rng)
    seq = rng.sample(units, rng.randint(0, len(units)))
    tree = TaskTree(seq, goal)
    valid = verify_tree(tree, kitchen).valid
    w = WorldState({o.name: o for o in kitchen})
    try:
        for u in seq:
            w, _ = execute_unit(w, u)
        executed = w.satisfies(goal)
    except PreconditionError:
        executed = False
    assert valid == executed
    if valid:
        log = run_episode(WorldState({o.name: o for o in kitchen}), tree)
        assert log.status == "success"


class NoOpRecovery(MockProvider):
    """Answers every recovery request with a valid unit that changes
    nothing, so recoveries never run out and only the caps stop the loop."""

    def __init__(self):
        super().__init__([])

    def _complete(self, prompt, max_tokens, images):
        return "```foon\nU\nI spare egg | raw\nM pick\nO spare egg | raw\n```"


FAILURES = ["overpour", "slip", "incorrect_mix", "misplaced_pour", "collateral", "other"]


@settings(max_examples=40, deadline=None)
@given(injections=st.dictionaries(st.integers(0, 6), st.sampled_from(FAILURES), max_size=4))
def test_episodes_terminate(injections):
    from conftest import DEMO
    from star.harness import tree_from_file
    from star.worldfile import load_world

    world_cfg = load_world(DEMO / "pancake.world")
    tree = tree_from_file(DEMO / "pancake.foon", "pancake | cooked")
    cfg = seeded_config(store=KnowledgeStore(), generator=NoOpRecovery())
    injs = [FailureInjection(at, ftype) for at, ftype in injections.items()]
    log = run_episode(WorldState.from_config(world_cfg), tree, injs, cfg)
    n = len(tree.units)
    assert len(log.records) <= cfg.growth_cap * n * (1 + cfg.reexecute_cap)
    assert log.status in ("success", "failure")
    if log.status == "failure":
        assert log.cause
