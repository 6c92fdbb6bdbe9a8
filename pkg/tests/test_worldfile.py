import pytest

from star.kg import FoonSyntaxError, ObjectNode
from star.retrieval import KitchenState
from star.worldfile import format_world, parse_world


def test_pancake_world(pancake_world):
    names = [o.name for o in pancake_world.objects]
    assert "flour" in names and "spare egg" in names
    assert pancake_world.collateral == [ObjectNode("coffee cup", ("upright",))]
    assert pancake_world.unsafe == {"ignite": frozenset({"supervised"})}
    assert "pour" in pancake_world.capabilities
    kitchen = KitchenState.from_world(pancake_world)
    assert kitchen.satisfies(ObjectNode("coffee cup"))


def test_bare_lines_are_objects():
    cfg = parse_world("bowl | clean\n# a comment\nflour\n")
    assert [o.name for o in cfg.objects] == ["bowl", "flour"]
    assert cfg.capabilities is None


def test_round_trip():
    text = ("[objects]\nbowl | clean\n[collateral]\ncup | upright\n[hazards]\nstove_on\n"
            "[unsafe]\nignite | pan-on-stove,supervised\n[capabilities]\npour, mix\n")
    cfg = parse_world(text)
    assert parse_world(format_world(cfg)) == cfg


def test_unknown_section_has_line_number():
    with pytest.raises(FoonSyntaxError) as exc:
        parse_world("bowl\n[pantry]\n")
    assert exc.value.line == 2


def test_duplicate_kitchen_names_rejected():
    with pytest.raises(ValueError, match="duplicate"):
        KitchenState([ObjectNode("bowl"), ObjectNode("bowl", ("clean",))])
