"""World/kitchen configuration files.

Format (``#`` comments, blank lines ignored)::

    [objects]
    bowl | clean
    flour | in-bag
    [collateral]
    coffee cup | upright
    [hazards]
    stove_on
    [unsafe]
    ignite | pan-on-stove,supervised
    [capabilities]
    pour, mix, pick-and-place

Lines before any header are objects.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .kg import FoonSyntaxError, ObjectNode

_SECTIONS = ("objects", "collateral", "hazards", "unsafe", "capabilities")


@dataclass
class WorldConfig:
    objects: list[ObjectNode] = field(default_factory=list)
    collateral: list[ObjectNode] = field(default_factory=list)
    hazards: set[str] = field(default_factory=set)
    unsafe: dict[str, frozenset[str]] = field(default_factory=dict)
    capabilities: frozenset[str] | None = None


def parse_world(text: str) -> WorldConfig:
    cfg = WorldConfig()
    section = "objects"
    caps: set[str] = set()
    saw_caps = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in _SECTIONS:
                raise FoonSyntaxError("unknown world section", lineno, line)
            saw_caps = saw_caps or section == "capabilities"
            continue
        if section in ("objects", "collateral"):
            try:
                node = ObjectNode.from_text(line)
            except FoonSyntaxError as exc:
                raise FoonSyntaxError("malformed object", lineno, line) from exc
            if not node.name:
                raise FoonSyntaxError("object name missing", lineno, line)
            getattr(cfg, section).append(node)
        elif section == "hazards":
            cfg.hazards.update(h.strip().lower() for h in line.split(",") if h.strip())
        elif section == "unsafe":
            verb, _, flags = line.partition("|")
            cfg.unsafe[verb.strip().lower()] = frozenset(
                f.strip().lower() for f in flags.split(",") if f.strip()
            )
        else:
            caps.update(v.strip().lower() for v in line.split(",") if v.strip())
    if saw_caps:
        cfg.capabilities = frozenset(caps)
    return cfg


def load_world(path) -> WorldConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_world(fh.read())


def format_world(cfg: WorldConfig) -> str:
    out = ["[objects]"] + [o.to_text() for o in cfg.objects]
    if cfg.collateral:
        out += ["[collateral]"] + [o.to_text() for o in cfg.collateral]
    if cfg.hazards:
        out += ["[hazards]"] + sorted(cfg.hazards)
    if cfg.unsafe:
        out += ["[unsafe]"] + [f"{v} | {','.join(sorted(f))}" for v, f in sorted(cfg.unsafe.items())]
    if cfg.capabilities is not None:
        out += ["[capabilities]", ", ".join(sorted(cfg.capabilities))]
    return "\n".join(out) + "\n"
