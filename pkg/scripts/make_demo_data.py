"""Regenerate the files under demo/ (menu, golden episodes, datasets).

Run from the repository root: python3 scripts/make_demo_data.py
"""

import csv
import json
from datetime import date, timedelta
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent / "demo"

# dish -> (first ingredient, prep verb, second ingredient, tool, verb, final state)
DISHES = {
    "tomato soup": ("tomato", "chop", "vegetable broth", "pot", "boil", "hot"),
    "green salad": ("lettuce", "chop", "olive oil", "salad bowl", "mix", "tossed"),
    "ham sandwich": ("ham", "slice", "bread loaf", "cutting board", "place", "assembled"),
    "scrambled eggs": ("egg", "crack", "butter", "frying pan", "stir", "scrambled"),
    "fried rice": ("cooked rice", "stir", "soy sauce", "wok", "fry", "fried"),
    "banana smoothie": ("banana", "slice", "yogurt", "blender", "mix", "blended"),
    "beef stew": ("beef", "cut", "carrot", "stock pot", "boil", "simmered"),
    "vegetable curry": ("cauliflower", "chop", "curry paste", "saucepan", "stir", "simmered"),
    "oatmeal": ("oats", "pour", "milk", "small pot", "boil", "cooked"),
    "lemonade": ("lemon", "squeeze", "sugar", "pitcher", "stir", "chilled"),
    "chocolate cake": ("cocoa", "mix", "cake flour", "oven", "bake", "baked"),
    "garlic bread": ("garlic", "chop", "baguette", "toaster oven", "toast", "toasted"),
    "chicken soup": ("chicken", "cut", "celery", "pot", "boil", "hot"),
    "fruit salad": ("apple", "chop", "grapes", "salad bowl", "mix", "tossed"),
    "cheese omelette": ("cheese", "slice", "egg", "frying pan", "fry", "folded"),
    "iced tea": ("tea leaves", "pour", "ice", "pitcher", "stir", "chilled"),
    "mashed potatoes": ("potato", "cut", "cream", "stock pot", "mix", "mashed"),
    "guacamole": ("avocado", "cut", "lime", "salad bowl", "mix", "mashed"),
    "french fries": ("russet potato", "slice", "frying oil", "fryer", "fry", "fried"),
    "apple pie": ("pie apple", "slice", "pie crust", "oven", "bake", "baked"),
}
IN_STORE = list(DISHES)[:12]  # the rest need the provider (category or generation)


def tree_text(dish):
    a, prep, b, tool, verb, state = DISHES[dish]
    return (
        "U\n"
        f"I {a} | fresh\n"
        "I knife\n"
        f"M {prep}\n"
        f"O {dish} base | prepared | {a}\n"
        "O knife\n"
        "\n"
        "U\n"
        f"I {dish} base | prepared\n"
        f"I {b} | fresh\n"
        f"I {tool}\n"
        f"M {verb}\n"
        f"O {dish} | {state} | {';'.join(sorted([a, b]))}\n"
        f"O {tool}\n"
    )


def slug(name):
    return name.replace(" ", "_")


def write_menu():
    menu = ROOT / "menu"
    (menu / "gold").mkdir(parents=True, exist_ok=True)
    start = date(2024, 3, 1)
    with open(menu / "menu.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "dish"])
        for k, dish in enumerate(DISHES):
            w.writerow([(start + timedelta(days=k * 3 // 2)).isoformat(), dish])
    for dish in DISHES:
        (menu / "gold" / f"{slug(dish)}.foon").write_text(tree_text(dish))
    store = "[FOON]\n" + "\n".join(tree_text(d) for d in IN_STORE)
    (menu / "store.foon").write_text(store)
    objects = set()
    tools = {"knife"}
    for a, _, b, tool, _, _ in DISHES.values():
        objects.update([a, b])
        tools.add(tool)
    lines = ["[objects]"] + [f"{o} | fresh" for o in sorted(objects)] + sorted(tools)
    (menu / "kitchen.world").write_text("\n".join(lines) + "\n")
    script = [
        {"match": f"Goal: {dish}\n", "response": f"```foon\n{tree_text(dish)}```"}
        for dish in list(DISHES)[12:]
    ]
    (menu / "provider.json").write_text(json.dumps(script, indent=2) + "\n")


RECOVERY = {
    "overpour": (
        "U\nI batter | watery | flour;milk\nI spare flour | dry\nM pour | source=spare flour\n"
        "O batter | unmixed | flour;milk\n"
    ),
    "incorrect_mix": (
        "U\nI batter | unevenly-mixed | egg;flour;milk\nI whisk\nM mix | time=1min\n"
        "O batter | mixed | egg;flour;milk\nO whisk | dirty\n"
    ),
    "misplaced_pour": (
        "U\nI pan | misplaced | batter\nI spatula | clean\nM scoop\nO pan | filled | batter\nO spatula | dirty\n"
    ),
    "collateral": "U\nI coffee cup | knocked-over\nM place | pose=upright\nO coffee cup | upright\n",
    "slip": "U\nI spare egg | raw\nM pick | grasp=firm\nO egg | raw\n",
}
KEYPHRASES = {
    "overpour": ["overpour", "watery"],
    "slip": ["slipped"],
    "incorrect_mix": ["unevenly mixed"],
    "misplaced_pour": ["misplaced pour"],
    "collateral": ["collateral", "knocked over"],
}
TASK_TYPE = {
    "overpour": "Pouring", "misplaced_pour": "Pouring", "incorrect_mix": "Mixing",
    "slip": "Pick and Place", "collateral": "Others", None: "Others",
}

# name, injections, store, generator, expected status
EPISODES = [
    ("nominal_a", [], "builtin:failnet-seed", None, "success"),
    ("nominal_b", [], None, None, "success"),
    ("nominal_c", [], "builtin:failnet-seed", "generator_overpour.json", "success"),
    ("nominal_d", [], None, "generator_invalid.json", "success"),
    ("overpour_failnet", [{"at_unit": 1, "failure_type": "overpour"}], "builtin:failnet-seed", None, "success"),
    ("overpour_generated", [{"at_unit": 1, "failure_type": "overpour"}], None, "generator_overpour.json", "success"),
    ("slip_pan_retry", [{"at_unit": 4, "failure_type": "slip"}], "builtin:failnet-seed", None, "success"),
    ("slip_egg_failnet", [{"at_unit": 2, "failure_type": "slip", "target": "egg", "states": ["dropped"]}],
     "builtin:failnet-seed", None, "success"),
    ("mix_failnet", [{"at_unit": 3, "failure_type": "incorrect_mix"}], "builtin:failnet-seed", None, "success"),
    ("mix_generated", [{"at_unit": 3, "failure_type": "incorrect_mix"}], None, "generator_mix.json", "success"),
    ("misplaced_failnet", [{"at_unit": 5, "failure_type": "misplaced_pour"}], "builtin:failnet-seed", None, "success"),
    ("misplaced_generated", [{"at_unit": 5, "failure_type": "misplaced_pour"}], None, "generator_misplaced.json",
     "success"),
    ("collateral_first", [{"at_unit": 0, "failure_type": "collateral"}], "builtin:failnet-seed", None, "success"),
    ("collateral_place", [{"at_unit": 4, "failure_type": "collateral"}], "builtin:failnet-seed", None, "success"),
    ("collateral_last", [{"at_unit": 6, "failure_type": "collateral"}], "builtin:failnet-seed", None, "success"),
    ("overpour_unrecoverable", [{"at_unit": 1, "failure_type": "overpour"}], None, "generator_invalid.json",
     "failure"),
    ("slip_flour_retry", [{"at_unit": 0, "failure_type": "slip"}], None, None, "success"),
    ("collateral_generated", [{"at_unit": 2, "failure_type": "collateral"}], None, "generator_collateral.json",
     "success"),
    ("mix_then_collateral", [{"at_unit": 3, "failure_type": "incorrect_mix"},
                             {"at_unit": 5, "failure_type": "collateral"}], "builtin:failnet-seed", None, "success"),
    ("overpour_then_slip", [{"at_unit": 1, "failure_type": "overpour"}, {"at_unit": 4, "failure_type": "slip"}],
     "builtin:failnet-seed", None, "success"),
]


def write_episodes():
    ep_dir = ROOT / "episodes"
    (ep_dir / "gold").mkdir(parents=True, exist_ok=True)
    for ftype, text in RECOVERY.items():
        (ep_dir / "gold" / f"{ftype}.foon").write_text(text)
    scripts = {
        "generator_overpour.json": "overpour",
        "generator_mix.json": "incorrect_mix",
        "generator_misplaced.json": "misplaced_pour",
        "generator_collateral.json": "collateral",
    }
    for fname, ftype in scripts.items():
        script = [{"match": f"Failure type: {ftype}", "response": f"```foon\n{RECOVERY[ftype]}```"}]
        (ep_dir / fname).write_text(json.dumps(script, indent=2) + "\n")
    invalid = [{"match": "Failure type:", "response":
                "```foon\nU\nI extra flour | dry\nI batter\nM pour\nO batter | unmixed\n```"}]
    (ep_dir / "generator_invalid.json").write_text(json.dumps(invalid, indent=2) + "\n")

    names = []
    for k, (name, injections, store, generator, status) in enumerate(EPISODES, start=1):
        first = injections[0]["failure_type"] if injections else None
        ann = {
            "true_failure_type": first,
            "explanation_keyphrases": KEYPHRASES.get(first, []),
            "gold_recovery": f"gold/{first}.foon" if first in RECOVERY and first != "slip" or
            (first == "slip" and injections[0].get("target")) else None,
            "task_type": TASK_TYPE[first],
            "source": "Lab Experiment",
            "expected_status": status,
        }
        manifest = {
            "name": name,
            "tree": "../pancake.foon",
            "goal": "pancake | cooked",
            "world": "../pancake.world",
            "store": store,
            "injections": injections,
            "detector": "synthetic",
            "generator": f"mock:{generator}" if generator else None,
            "mode": "grid",
            "annotation": ann,
        }
        fname = f"ep{k:02d}_{name}.json"
        (ep_dir / fname).write_text(json.dumps(manifest, indent=2) + "\n")
        names.append(fname)
    (ep_dir / "golden.json").write_text(json.dumps({"episodes": names}, indent=2) + "\n")

    # dataset mirroring the reference distribution: 101 episodes drawn from
    # the golden manifests, with task type and source labels per entry
    by_type = {}
    for fname, (_, injections, *_rest) in zip(names, EPISODES):
        first = injections[0]["failure_type"] if injections else None
        by_type.setdefault(TASK_TYPE[first], []).append(fname)
    counts = {"Pouring": 36, "Mixing": 19, "Pick and Place": 23, "Others": 23}
    sources = ["YouTube"] * 23 + ["Competition"] * 23 + ["Lab Experiment"] * 55
    entries = []
    for ttype, n in counts.items():
        pool = by_type[ttype]
        for j in range(n):
            entries.append({"manifest": pool[j % len(pool)], "task_type": ttype})
    for entry, src in zip(entries, sources):
        entry["source"] = src
    (ep_dir / "table2.json").write_text(json.dumps({"episodes": entries}, indent=2) + "\n")


if __name__ == "__main__":
    write_menu()
    write_episodes()
