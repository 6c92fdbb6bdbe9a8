"""Hypothesis strategies for FOON structures."""

from hypothesis import strategies as st

from star.kg import FunctionalUnit, MotionNode, ObjectNode

names = st.sampled_from(["bowl", "flour", "milk", "egg", "pan", "batter", "whisk", "water cup"])
labels = st.sampled_from(["hot", "cut", "wet", "mixed", "clean", "dry", "on-stove"])
ingredients = st.sampled_from(["flour", "milk", "egg", "salt", "sugar"])
verbs = st.sampled_from(["pour", "mix", "cut", "heat", "place"])


@st.composite
def objects(draw, name=None):
    n = name if name is not None else draw(names)
    states = draw(st.lists(labels, max_size=3, unique=True))
    contains = draw(st.lists(ingredients, max_size=3, unique=True))
    return ObjectNode(n, tuple(states), tuple(contains))


@st.composite
def object_lists(draw, min_size=1, max_size=3):
    picked = draw(st.lists(names, min_size=min_size, max_size=max_size, unique=True))
    return [draw(objects(n)) for n in picked]


@st.composite
def motions(draw):
    params = draw(st.dictionaries(st.sampled_from(["time", "source", "target"]),
                                  st.sampled_from(["2min", "flour", "stove", "bowl"]), max_size=2))
    return MotionNode(draw(verbs), tuple(params.items()))


@st.composite
def units(draw):
    return FunctionalUnit(draw(object_lists()), draw(motions()), draw(object_lists(max_size=2)))


@st.composite
def shuffled(draw, unit):
    """The same unit with inputs/outputs/states listed in another order."""
    def jumble(objs):
        objs = draw(st.permutations(list(objs)))
        return [ObjectNode(o.name, tuple(draw(st.permutations(list(o.states)))),
                           tuple(draw(st.permutations(list(o.contains))))) for o in objs]
    return FunctionalUnit(jumble(unit.inputs), unit.motion, jumble(unit.outputs))
