"""Datasets, episode manifests and the evaluation loop behind ``star eval``."""

from __future__ import annotations

import csv
import json
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Sequence

from .fm import CorpusTooSmallError, RetriesExhaustedError, load_corpus
from .kg import KnowledgeStore, TaskTree, load_store, parse_subgraph
from .monitor import SamplingPolicy
from .pipeline import PlanningError, plan_goal
from .planner.emit import CompileError
from .providers import CompletionProvider, CountingView, HttpProvider, MockProvider, ProviderError
from .recovery import load_capabilities, load_failnet_seed, load_recovery_corpus
from .retrieval import DishTaxonomy, KitchenState, RetrievalError, parse_goal
from .sim import EpisodeConfig, EpisodeLog, FailureInjection, SyntheticVisionProvider, WorldState, progress_score, run_episode
from .worldfile import WorldConfig, load_world

ANNOTATION_FIELDS = ("true_failure_type", "explanation_keyphrases", "gold_recovery", "task_type", "source")


class DatasetError(ValueError):
    pass


def slug(name: str) -> str:
    return "_".join(name.lower().split())


def make_provider(source: str | None, base: Path | None = None) -> CompletionProvider | None:
    """``mock:<script.json>`` or ``http``; None passes through."""
    if source is None:
        return None
    if source == "http":
        return HttpProvider()
    if source.startswith("mock:"):
        path = Path(source[5:])
        if base is not None and not path.is_absolute():
            path = base / path
        return MockProvider.from_file(path)
    raise ValueError(f"unknown provider {source!r} (expected mock:<script> or http)")


def tree_from_file(path, goal: str | None = None) -> TaskTree:
    with open(path, encoding="utf-8") as fh:
        units = parse_subgraph(fh.read())
    g = parse_goal(goal) if goal else units[-1].outputs[0]
    return TaskTree(units, g)


# ---------------------------------------------------------------------------
# Menu dataset


@dataclass
class MenuDataset:
    entries: list[tuple[date, str]]
    gold_dir: Path | None = None

    @classmethod
    def load(cls, path, gold_dir=None) -> MenuDataset:
        entries = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames[:2]] != ["date", "dish"]:
                raise DatasetError("menu CSV must have a 'date,dish' header")
            for lineno, row in enumerate(reader, start=2):
                try:
                    day = date.fromisoformat(row["date"].strip())
                except (ValueError, AttributeError) as exc:
                    raise DatasetError(f"line {lineno}: bad date {row.get('date')!r}") from exc
                dish = " ".join((row.get("dish") or "").lower().split())
                if not dish:
                    raise DatasetError(f"line {lineno}: empty dish name")
                entries.append((day, dish))
        gold = Path(gold_dir) if gold_dir else Path(path).parent / "gold"
        return cls(entries, gold)

    @property
    def span_days(self) -> int:
        if not self.entries:
            return 0
        days = [d for d, _ in self.entries]
        return (max(days) - min(days)).days + 1

    def gold_tree(self, dish: str) -> TaskTree:
        if self.gold_dir is None:
            raise DatasetError("no gold directory")
        return tree_from_file(self.gold_dir / f"{slug(dish)}.foon")


# ---------------------------------------------------------------------------
# Episodes


@dataclass
class EpisodeManifest:
    path: Path
    name: str
    tree: Path
    goal: str | None
    world: Path
    store: str | None
    injections: list[FailureInjection]
    detector: str
    generator: str | None
    mode: str
    annotation: dict

    @classmethod
    def load(cls, path) -> EpisodeManifest:
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        base = path.parent
        missing = [k for k in ("tree", "world") if k not in data]
        if missing:
            raise DatasetError(f"{path}: missing {', '.join(missing)}")
        m = cls(
            path=path,
            name=data.get("name", path.stem),
            tree=base / data["tree"],
            goal=data.get("goal"),
            world=base / data["world"],
            store=data.get("store"),
            injections=[FailureInjection.from_dict(d) for d in data.get("injections", [])],
            detector=data.get("detector", "synthetic"),
            generator=data.get("generator"),
            mode=data.get("mode", "grid"),
            annotation=data.get("annotation", {}),
        )
        m.check()
        return m

    @property
    def base(self) -> Path:
        return self.path.parent

    def _file(self, rel: str) -> Path:
        return self.base / rel

    def check(self) -> None:
        for p in (self.tree, self.world):
            if not p.is_file():
                raise DatasetError(f"{self.path}: referenced file {p} does not exist")
        if self.store and not self.store.startswith("builtin:") and not self._file(self.store).is_file():
            raise DatasetError(f"{self.path}: store {self.store} does not exist")
        for source in (self.detector, self.generator):
            if source and source.startswith("mock:") and not self._file(source[5:]).is_file():
                raise DatasetError(f"{self.path}: provider script {source[5:]} does not exist")
        gold = self.annotation.get("gold_recovery")
        if gold and not self._file(gold).is_file():
            raise DatasetError(f"{self.path}: gold recovery {gold} does not exist")

    def check_annotation(self) -> None:
        absent = [f for f in ANNOTATION_FIELDS if f not in self.annotation]
        if absent:
            raise DatasetError(f"{self.path}: annotation lacks {', '.join(absent)}")

    def load_store(self) -> KnowledgeStore:
        if self.store is None:
            return KnowledgeStore()
        if self.store == "builtin:failnet-seed":
            return load_failnet_seed()
        if self.store.startswith("builtin:"):
            raise DatasetError(f"unknown builtin store {self.store!r}")
        return load_store(self._file(self.store))


def run_manifest(
    manifest: EpisodeManifest,
    mode: str | None = None,
    store: KnowledgeStore | None = None,
    detector: CompletionProvider | None = None,
    generator: CompletionProvider | None = None,
) -> EpisodeLog:
    cfg: WorldConfig = load_world(manifest.world)
    tree = tree_from_file(manifest.tree, manifest.goal)
    world = WorldState.from_config(cfg)
    if detector is None:
        if manifest.detector == "synthetic":
            detector = SyntheticVisionProvider(o.name for o in cfg.collateral)
        else:
            detector = make_provider(manifest.detector, manifest.base)
    if generator is None:
        generator = make_provider(manifest.generator, manifest.base)
    config = EpisodeConfig(
        detector=detector,
        generator=generator,
        store=store if store is not None else manifest.load_store(),
        recovery_corpus=load_recovery_corpus(),
        capabilities=cfg.capabilities if cfg.capabilities is not None else load_capabilities(),
        mode=mode or manifest.mode,
    )
    return run_episode(world, tree, manifest.injections, config)


@dataclass
class EpisodeEntry:
    manifest: EpisodeManifest
    task_type: str
    source: str


def load_episode_dataset(path) -> list[EpisodeEntry]:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    raw = data["episodes"] if isinstance(data, dict) else data
    entries = []
    cache: dict[Path, EpisodeManifest] = {}
    for item in raw:
        if isinstance(item, str):
            item = {"manifest": item}
        mpath = (path.parent / item["manifest"]).resolve()
        if mpath not in cache:
            if not mpath.is_file():
                raise DatasetError(f"manifest {item['manifest']} does not exist")
            cache[mpath] = EpisodeManifest.load(mpath)
        m = cache[mpath]
        m.check_annotation()
        entries.append(EpisodeEntry(
            m, item.get("task_type", m.annotation["task_type"]), item.get("source", m.annotation["source"])
        ))
    return entries


# ---------------------------------------------------------------------------
# Metrics


@dataclass
class Ratio:
    hits: int = 0
    total: int = 0

    @property
    def percent(self) -> float | None:
        return None if self.total == 0 else round(100.0 * self.hits / self.total, 2)

    def to_dict(self) -> dict:
        return {"percent": self.percent, "hits": self.hits, "total": self.total}

    def text(self) -> str:
        pct = "n/a" if self.percent is None else f"{self.percent:.2f}%"
        return f"{pct} ({self.hits}/{self.total})"


@dataclass
class MetricsReport:
    planning_accuracy: Ratio | None = None
    detection: Ratio | None = None
    explanation: Ratio | None = None
    recovery_accuracy: Ratio | None = None
    fm_calls: dict[str, int] = field(default_factory=dict)
    case_counts: dict[str, int] = field(default_factory=dict)
    distribution: dict[str, dict[str, int]] = field(default_factory=dict)
    items: list[dict] = field(default_factory=list)

    def metrics(self) -> dict[str, Ratio]:
        out = {}
        for name in ("planning_accuracy", "detection", "explanation", "recovery_accuracy"):
            r = getattr(self, name)
            if r is not None:
                out[name] = r
        return out

    def to_dict(self) -> dict:
        return {
            "metrics": {k: v.to_dict() for k, v in self.metrics().items()},
            "fm_calls": dict(sorted(self.fm_calls.items())),
            "case_counts": dict(sorted(self.case_counts.items())),
            "distribution": {k: dict(v) for k, v in self.distribution.items()},
            "items": self.items,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        rows = [("metric", "value")]
        rows += [(k, v.text()) for k, v in self.metrics().items()]
        rows += [(f"fm calls: {k}", str(v)) for k, v in sorted(self.fm_calls.items())]
        rows += [(f"case {k}", str(v)) for k, v in sorted(self.case_counts.items())]
        for group, counts in self.distribution.items():
            rows += [(f"{group}: {k}", str(v)) for k, v in counts.items()]
        width = max(len(r[0]) for r in rows)
        lines = [f"{a:<{width}}  {b}" for a, b in rows]
        lines.insert(1, "-" * (width + 2 + max(len(r[1]) for r in rows)))
        return "\n".join(lines) + "\n"


def eval_menu(
    menu: MenuDataset,
    store: KnowledgeStore,
    kitchen: KitchenState,
    provider: CompletionProvider | None = None,
    corpus: Sequence[tuple[str, str]] | None = None,
    *,
    taxonomy: DishTaxonomy | None = None,
    jobs: int = 1,
    capabilities=None,
) -> MetricsReport:
    """Plan every dish and score it against its gold tree.

    Dishes are planned against the store as it was at the start; verified
    model trees are merged afterwards, in menu order, so results do not
    depend on ``jobs``.
    """
    if not menu.entries:
        raise DatasetError("menu dataset is empty")
    taxonomy = taxonomy or DishTaxonomy.default()
    corpus = load_corpus() if corpus is None else corpus
    calls0 = provider.call_count if provider else 0

    def one(entry):
        day, dish = entry
        item = {"date": day.isoformat(), "dish": dish}
        try:
            view = CountingView(provider) if provider is not None else None
            res = plan_goal(store, dish, kitchen, taxonomy, view, corpus,
                            capabilities=capabilities, merge=False)
        except (PlanningError, CompileError, RetrievalError, ProviderError, RetriesExhaustedError,
                CorpusTooSmallError) as exc:
            item.update(case=None, score=0.0, error=str(exc))
            return item, None
        item["case"] = res.case.number
        item["provider_calls"] = res.provider_calls
        try:
            item["score"] = progress_score(res.tree, menu.gold_tree(dish))
        except (OSError, ValueError) as exc:
            item.update(score=0.0, error=f"gold tree: {exc}")
        return item, res

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, menu.entries))
    else:
        results = [one(e) for e in menu.entries]

    report = MetricsReport(planning_accuracy=Ratio())
    cases = Counter()
    for item, res in results:
        report.items.append(item)
        report.planning_accuracy.total += 1
        report.planning_accuracy.hits += int(item["score"] == 1.0)
        cases[f"{item['case']}" if item["case"] else "error"] += 1
        if res is not None and res.case.number != 3:
            store.merge(res.tree.units, "foon")
    report.case_counts = dict(cases)
    report.fm_calls = {"planning": (provider.call_count - calls0) if provider else 0}
    return report


def eval_episodes(entries: Sequence[EpisodeEntry], *, jobs: int = 1, mode: str | None = None) -> MetricsReport:
    if not entries:
        raise DatasetError("episode dataset is empty")

    def one(entry: EpisodeEntry):
        return entry, run_manifest(entry.manifest, mode)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, entries))
    else:
        results = [one(e) for e in entries]

    report = MetricsReport(detection=Ratio(), explanation=Ratio(), recovery_accuracy=Ratio())
    det_calls = gen_calls = 0
    for entry, log in results:
        ann = entry.manifest.annotation
        truth = ann.get("true_failure_type")
        first = log.first_report()
        report.detection.total += 1
        if truth is None:
            hit = first is None
        else:
            hit = first is not None and first["failure_type"] == truth
        report.detection.hits += int(hit)
        expl_hit = None
        if truth is not None:
            report.explanation.total += 1
            text = (first or {}).get("explanation", "").lower()
            phrases = [p.lower() for p in ann.get("explanation_keyphrases", [])]
            expl_hit = first is not None and all(p in text for p in phrases)
            report.explanation.hits += int(expl_hit)
            report.recovery_accuracy.total += 1
            report.recovery_accuracy.hits += int(log.status == "success")
        det_calls += log.detector_calls
        gen_calls += log.generator_calls
        report.items.append({
            "episode": entry.manifest.name,
            "task_type": entry.task_type,
            "source": entry.source,
            "status": log.status,
            "detected": first["failure_type"] if first else None,
            "truth": truth,
            "detection_ok": hit,
            "explanation_ok": expl_hit,
        })
    report.fm_calls = {"detection": det_calls, "recovery": gen_calls}
    report.distribution = {
        "task type": dict(Counter(e.task_type for e in entries)),
        "source": dict(Counter(e.source for e in entries)),
    }
    return report
