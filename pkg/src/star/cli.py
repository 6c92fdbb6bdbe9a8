"""Command-line entry point: ``star plan|simulate|eval|grid|merge``.

Exit codes: 0 success, 2 unreadable or malformed input, 3 planning or
execution failure, 4 provider failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .fm import CorpusTooSmallError, RetriesExhaustedError, load_corpus
from .harness import (
    DatasetError,
    EpisodeManifest,
    MenuDataset,
    eval_episodes,
    eval_menu,
    load_episode_dataset,
    make_provider,
    run_manifest,
)
from .kg import FoonSyntaxError, InvalidUnitError, KnowledgeStore, load_store, merge_blocks, parse_blocks, save_store
from .monitor import compose_grid, load_frames
from .pipeline import PlanningError, plan_goal
from .planner.emit import CompileError
from .providers import ProviderError
from .recovery import load_capabilities
from .retrieval import KitchenState, RetrievalError, parse_goal
from .worldfile import load_world

EXIT_OK, EXIT_PARSE, EXIT_PLAN, EXIT_PROVIDER = 0, 2, 3, 4


def _err(msg: str) -> None:
    print(f"star: {msg}", file=sys.stderr)


def _load_store(path: str | None, create: bool = False) -> KnowledgeStore:
    if path is None:
        return KnowledgeStore()
    if create and not Path(path).exists():
        return KnowledgeStore()
    return load_store(path)


def cmd_plan(args) -> int:
    try:
        store = _load_store(args.store)
        kitchen = KitchenState.from_world(load_world(args.world))
        goal = parse_goal(args.goal)
        provider = make_provider(args.provider)
        corpus = load_corpus(args.corpus) if provider is not None else ()
    except (OSError, FoonSyntaxError, InvalidUnitError, ValueError) as exc:
        _err(str(exc))
        return EXIT_PARSE
    except ProviderError as exc:
        _err(str(exc))
        return EXIT_PROVIDER
    try:
        res = plan_goal(store, goal, kitchen, provider=provider, corpus=corpus)
    except (ProviderError, RetriesExhaustedError, CorpusTooSmallError) as exc:
        _err(str(exc))
        return EXIT_PROVIDER
    except (PlanningError, CompileError, RetrievalError) as exc:
        print(f"planning failed: {exc}")
        return EXIT_PLAN
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "tree.foon").write_text("\n".join(u.to_text() for u in res.tree.units), encoding="utf-8")
    for k, c in enumerate(res.compiled, start=1):
        (out / f"unit{k:02d}_domain.pddl").write_text(c.domain_text, encoding="utf-8")
        (out / f"unit{k:02d}_problem.pddl").write_text(c.problem_text, encoding="utf-8")
        (out / f"unit{k:02d}.plan").write_text(c.plan.to_text(), encoding="utf-8")
    if res.merged is not None and res.merged.added and args.store:
        save_store(store, args.store)
    print(f"Case {res.case.number} ({res.case.value})")
    if res.outcome.partial_source:
        print(f"adapted from: {res.outcome.partial_source}")
    print(f"units: {len(res.tree.units)}")
    print(f"provider calls: {res.provider_calls}")
    if res.merged is not None:
        print(f"merged: added={res.merged.added} skipped={res.merged.skipped_duplicates}")
    print(f"artifacts: {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        manifest = EpisodeManifest.load(args.manifest)
        detector = make_provider(args.provider) if args.provider else None
        log = run_manifest(manifest, args.mode, detector=detector)
    except (OSError, DatasetError, FoonSyntaxError, InvalidUnitError, ValueError, KeyError) as exc:
        _err(str(exc))
        return EXIT_PARSE
    except ProviderError as exc:
        _err(str(exc))
        return EXIT_PROVIDER
    log_path = Path(args.log) if args.log else Path(f"{manifest.name}.log.json")
    log.save(log_path)
    print(f"episode {manifest.name}: {log.status}")
    print(f"units executed: {len(log.records)}, recoveries: {len(log.recoveries)}")
    for r in log.recoveries:
        print(f"  recovery ({r['provenance']}): {r['trigger'][0]} -> {', '.join(r['unit_ids'])}")
    if log.cause:
        print(f"cause: {log.cause}")
    print(f"log: {log_path}")
    return EXIT_OK if log.status == "success" else EXIT_PLAN


def cmd_eval(args) -> int:
    try:
        if args.episodes:
            report = eval_episodes(load_episode_dataset(args.episodes), jobs=args.jobs, mode=args.mode)
        else:
            if not (args.menu and args.world):
                _err("eval needs --episodes, or --menu with --world")
                return EXIT_PARSE
            menu = MenuDataset.load(args.menu, args.gold)
            store = _load_store(args.store)
            kitchen = KitchenState.from_world(load_world(args.world))
            provider = make_provider(args.provider)
            report = eval_menu(menu, store, kitchen, provider, load_corpus(args.corpus), jobs=args.jobs)
            if args.persist and args.store:
                save_store(store, args.store)
    except (OSError, DatasetError, FoonSyntaxError, InvalidUnitError, ValueError, KeyError,
            json.JSONDecodeError) as exc:
        _err(str(exc))
        return EXIT_PARSE
    except ProviderError as exc:
        _err(str(exc))
        return EXIT_PROVIDER
    if args.json:
        Path(args.json).write_text(report.to_json(), encoding="utf-8")
    print(report.to_table(), end="")
    return EXIT_OK


def cmd_grid(args) -> int:
    try:
        frames = load_frames(args.frames)
    except (OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_PARSE
    if not frames:
        _err("no frames found")
        return EXIT_PARSE
    cell_w = cell_h = None
    if args.cell:
        try:
            cell_w, cell_h = (int(v) for v in args.cell.lower().split("x"))
        except ValueError:
            _err(f"bad --cell {args.cell!r}, expected WxH")
            return EXIT_PARSE
    try:
        grid = compose_grid(frames, args.rows, args.cols, cell_w, cell_h)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_PARSE
    Path(args.out).write_bytes(grid.to_png())
    print(f"{len(frames)} frames -> {args.rows}x{args.cols} grid {args.out}")
    print(f"sha256 (pixels): {grid.checksum()}")
    return EXIT_OK


def cmd_merge(args) -> int:
    try:
        store = _load_store(args.store, create=True)
        text = Path(args.subgraph).read_text(encoding="utf-8")
        rep = merge_blocks(store, parse_blocks(text, default_section=args.section), args.section)
    except FoonSyntaxError as exc:
        _err(f"{args.subgraph}: {exc}")
        return EXIT_PARSE
    except (OSError, InvalidUnitError, ValueError) as exc:
        _err(str(exc))
        return EXIT_PARSE
    save_store(store, args.store)
    print(f"added={rep.added} skipped={rep.skipped_duplicates}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="star", description="Task planning and failure recovery for cooking robots.")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("plan", help="retrieve or generate a task tree and compile it to PDDL plans")
    sp.add_argument("goal", help="goal object, e.g. 'pancake | cooked'")
    sp.add_argument("--world", required=True, help="kitchen/world file")
    sp.add_argument("--store", help="knowledge store (FOON-text); merged trees are written back")
    sp.add_argument("--provider", help="mock:<script.json> or http")
    sp.add_argument("--corpus", help="few-shot example corpus (default: bundled)")
    sp.add_argument("--out", default="star-out", help="artifact directory")
    sp.set_defaults(func=cmd_plan)

    ss = sub.add_parser("simulate", help="run one episode manifest")
    ss.add_argument("manifest")
    ss.add_argument("--mode", choices=("grid", "frames"))
    ss.add_argument("--provider", help="override the manifest's detector (mock:<script.json> or http)")
    ss.add_argument("--log", help="episode log path (default: <name>.log.json)")
    ss.set_defaults(func=cmd_simulate)

    se = sub.add_parser("eval", help="evaluate on a menu or an episode dataset")
    se.add_argument("--menu", help="menu CSV (date,dish)")
    se.add_argument("--gold", help="gold tree directory (default: <menu dir>/gold)")
    se.add_argument("--episodes", help="episode dataset JSON")
    se.add_argument("--store")
    se.add_argument("--world")
    se.add_argument("--provider")
    se.add_argument("--corpus")
    se.add_argument("--mode", choices=("grid", "frames"))
    se.add_argument("--jobs", type=int, default=1)
    se.add_argument("--persist", action="store_true", help="write merged trees back to --store")
    se.add_argument("--json", help="machine-readable report path")
    se.set_defaults(func=cmd_eval)

    sg = sub.add_parser("grid", help="pack frames into one image grid")
    sg.add_argument("frames", help="directory of t<seconds>.png files or a frame list")
    sg.add_argument("out")
    sg.add_argument("--rows", type=int, default=3)
    sg.add_argument("--cols", type=int, default=3)
    sg.add_argument("--cell", help="cell size WxH (default: first frame size)")
    sg.set_defaults(func=cmd_grid)

    sm = sub.add_parser("merge", help="merge a FOON-text subgraph into a store")
    sm.add_argument("store")
    sm.add_argument("subgraph")
    sm.add_argument("--section", choices=("foon", "failnet"), default="foon")
    sm.set_defaults(func=cmd_merge)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
