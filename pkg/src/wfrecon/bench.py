"""Seeded multi-run benchmarks: variants x seeds under one iteration budget."""
from __future__ import annotations

import csv
import json
import logging
import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

from .config import DEFAULTS, ConfigError
from .execution import (
    InfrastructureError,
    SimExecutor,
    SimWorld,
    evaluate_workflow,
    random_world,
    stagnation_world,
    world_from_config,
)
from .mcts import RunRecord, SearchConfig, run_search, write_records_csv
from .primitives import ObservationPair, PrimitiveSpace, load_dataset, space_from_config
from .similarity import MetricConfig, make_evaluator, metric_config_from_dict

log = logging.getLogger(__name__)

VARIANTS = ("pruned", "unpruned", "no_tools", "all_tools", "selected_tools")


def paired_t(differences: Sequence[float]) -> tuple[float, float, float]:
    """Mean, sample standard deviation and t-statistic of paired differences.

    With zero spread the statistic is +/-inf for a non-zero mean and 0 otherwise.
    """
    n = len(differences)
    if n < 2:
        raise ValueError("paired_t needs at least 2 differences")
    mean = statistics.fmean(differences)
    sd = statistics.stdev(differences)
    if sd == 0:
        t = 0.0 if mean == 0 else math.copysign(math.inf, mean)
    else:
        t = mean / (sd / math.sqrt(n))
    return mean, sd, t


@dataclass
class BenchSpec:
    config: SearchConfig
    seeds: list[int] = field(default_factory=lambda: list(DEFAULTS["bench_seeds"]))
    variants: list[str] = field(default_factory=lambda: ["pruned", "unpruned"])
    world: SimWorld | None = None
    dataset: list[ObservationPair] | None = None
    space: PrimitiveSpace | None = None
    http: dict | None = None
    metric: MetricConfig = MetricConfig()
    metric_name: str = "sfe"
    threshold: float | str | None = None
    selected_tools: list[str] | None = None
    baseline: str | None = "unpruned"
    workers: int = 1

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("a bench needs at least one seed")
        if not self.variants:
            raise ValueError("a bench needs at least one variant")
        unknown = [v for v in self.variants if v not in VARIANTS]
        if unknown:
            raise ValueError(f"unknown variants {unknown}; choose from {VARIANTS}")
        if len(set(self.variants)) != len(self.variants):
            raise ValueError("variants must be distinct")
        if self.world is None and (self.dataset is None or self.space is None or self.http is None):
            raise ValueError("a bench needs a world, or a dataset with a primitive space and http endpoint")
        if "selected_tools" in self.variants and self.selected_tools is None:
            raise ValueError("variant 'selected_tools' needs a 'selected_tools' list")
        if isinstance(self.threshold, str):
            kind, _, ref = self.threshold.partition(":")
            if kind != "median" or ref not in self.variants:
                raise ValueError("threshold must be a number or 'median:<variant in this bench>'")

    @property
    def base_space(self) -> PrimitiveSpace:
        return self.world.space if self.world is not None else self.space

    @property
    def observations(self) -> list[ObservationPair]:
        return list(self.world.tasks) if self.world is not None else list(self.dataset)

    def variant_space(self, variant: str) -> PrimitiveSpace:
        if variant == "no_tools":
            return self.base_space.with_toolsets(())
        if variant == "selected_tools":
            return self.base_space.with_toolsets(self.selected_tools)
        return self.base_space


@dataclass
class CellResult:
    variant: str
    seed: int
    final_similarity: float
    eval_similarity: float
    total_tokens: int
    best_length: int
    max_depth: int
    red_fraction: float
    iterations: int
    best_workflow: str
    tokens_to_threshold: int | None = None


ROW_FIELDS = [
    "variant", "seed", "final_similarity", "eval_similarity", "total_tokens", "best_length",
    "max_depth", "red_fraction", "iterations", "tokens_to_threshold", "best_workflow",
]
AGG_FIELDS = ["final_similarity", "eval_similarity", "total_tokens", "best_length", "max_depth", "red_fraction"]


@dataclass
class BenchReport:
    rows: list[CellResult]
    curves: dict[tuple[str, int], list[RunRecord]]
    threshold: float | None
    aggregates: dict[str, dict[str, dict[str, float]]]
    paired: dict[str, dict[str, float | None]]
    settings: dict
    aborted: str | None = None

    def to_json(self) -> dict:
        return {
            "settings": self.settings,
            "threshold": self.threshold,
            "rows": [asdict(r) for r in self.rows],
            "aggregates": self.aggregates,
            "paired": {k: {kk: _json_float(vv) for kk, vv in v.items()} for k, v in self.paired.items()},
            "aborted": self.aborted,
        }


def _json_float(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def tokens_to_threshold(records: Sequence[RunRecord], threshold: float) -> int | None:
    for r in records:
        if r.best_similarity >= threshold:
            return r.cumulative_tokens
    return None


def aggregate(rows: Sequence[CellResult], variants: Sequence[str]) -> dict:
    out = {}
    for variant in variants:
        cells = [r for r in rows if r.variant == variant]
        if not cells:
            continue
        stats = {}
        for name in AGG_FIELDS:
            values = [getattr(c, name) for c in cells]
            stats[name] = {"mean": statistics.fmean(values), "min": min(values), "max": max(values)}
        reached = [c.tokens_to_threshold for c in cells if c.tokens_to_threshold is not None]
        stats["tokens_to_threshold"] = {
            "reached": len(reached),
            "mean": statistics.fmean(reached) if reached else None,
            "min": min(reached) if reached else None,
            "max": max(reached) if reached else None,
        }
        out[variant] = stats
    return out


def paired_comparisons(rows: Sequence[CellResult], variants: Sequence[str], baseline: str | None) -> dict:
    if baseline is None or baseline not in variants:
        return {}
    base = {r.seed: r.final_similarity for r in rows if r.variant == baseline}
    out = {}
    for variant in variants:
        if variant == baseline:
            continue
        diffs = [r.final_similarity - base[r.seed] for r in rows if r.variant == variant and r.seed in base]
        if len(diffs) < 2:
            out[variant] = {"n": len(diffs), "mean": statistics.fmean(diffs) if diffs else None, "sd": None, "t": None}
            continue
        mean, sd, t = paired_t(diffs)
        out[variant] = {"n": len(diffs), "mean": mean, "sd": sd, "t": t}
    return out


def _make_executor(spec: BenchSpec, space: PrimitiveSpace):
    if spec.world is not None:
        return SimExecutor(spec.world, space)
    from .http_executor import HttpEndpoint, HttpExecutor
    return HttpExecutor(HttpEndpoint.from_config(spec.http), space)


def run_cell(spec: BenchSpec, variant: str, seed: int) -> tuple[CellResult, list[RunRecord]]:
    space = spec.variant_space(variant)
    executor = _make_executor(spec, space)
    evaluator = make_evaluator(spec.metric_name, spec.metric)
    data = spec.observations
    config = replace(spec.config, seed=seed)
    try:
        result = run_search(space, config, executor, evaluator, data, pruning=variant != "unpruned")
        eval_sim = evaluate_workflow(result.best_workflow, executor, evaluator, data) if result.best_workflow else 0.0
    finally:
        close = getattr(executor, "close", None)
        if close:
            close()
    last = result.records[-1] if result.records else None
    row = CellResult(
        variant=variant,
        seed=seed,
        final_similarity=last.best_similarity if last else 0.0,
        eval_similarity=eval_sim,
        total_tokens=last.cumulative_tokens if last else 0,
        best_length=len(result.best_workflow),
        max_depth=result.tree.max_depth,
        red_fraction=result.tree.red_fraction(),
        iterations=len(result.records),
        best_workflow=",".join(result.best_workflow),
    )
    return row, result.records


def run_bench(spec: BenchSpec) -> BenchReport:
    """Run every (variant, seed) cell and assemble a report in a fixed order."""
    cells = [(v, s) for v in spec.variants for s in spec.seeds]
    rows: list[CellResult] = []
    curves: dict[tuple[str, int], list[RunRecord]] = {}
    aborted = None
    with ThreadPoolExecutor(max_workers=max(1, spec.workers)) as pool:
        futures = [pool.submit(run_cell, spec, v, s) for v, s in cells]
        for (v, s), fut in zip(cells, futures):
            try:
                row, records = fut.result()
            except InfrastructureError as exc:
                aborted = aborted or f"cell ({v}, seed {s}): {exc}"
                log.error("bench cell (%s, %s) aborted: %s", v, s, exc)
                continue
            rows.append(row)
            curves[(v, s)] = records

    threshold = resolve_threshold(spec.threshold, rows)
    if threshold is not None:
        for row in rows:
            row.tokens_to_threshold = tokens_to_threshold(curves[(row.variant, row.seed)], threshold)
    settings = {
        "search": asdict(spec.config) | {"seed": None},
        "seeds": list(spec.seeds),
        "variants": list(spec.variants),
        "metric": spec.metric_name,
        "metric_config": asdict(spec.metric),
        "threshold_rule": spec.threshold,
        "selected_tools": spec.selected_tools,
        "baseline": spec.baseline,
        "executor": "sim" if spec.world is not None else "http",
        "defaults": DEFAULTS,
    }
    return BenchReport(
        rows=rows,
        curves=curves,
        threshold=threshold,
        aggregates=aggregate(rows, spec.variants),
        paired=paired_comparisons(rows, spec.variants, spec.baseline),
        settings=settings,
        aborted=aborted,
    )


def resolve_threshold(rule, rows: Sequence[CellResult]) -> float | None:
    if rule is None:
        return None
    if isinstance(rule, (int, float)):
        return float(rule)
    _, _, ref = rule.partition(":")
    values = [r.final_similarity for r in rows if r.variant == ref]
    return statistics.median(values) if values else None


def write_report(report: BenchReport, prefix: str | Path) -> list[Path]:
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    csv_path = prefix.with_name(prefix.name + ".report.csv")
    json_path = prefix.with_name(prefix.name + ".report.json")
    curve_dir = prefix.with_name(prefix.name + ".curves")
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ROW_FIELDS)
        for r in report.rows:
            writer.writerow(["" if getattr(r, f) is None else getattr(r, f) for f in ROW_FIELDS])
    json_path.write_text(json.dumps(report.to_json(), indent=2) + "\n", encoding="utf-8")
    curve_dir.mkdir(exist_ok=True)
    written = [csv_path, json_path]
    for (variant, seed), records in report.curves.items():
        path = curve_dir / f"{variant}_seed{seed}.csv"
        write_records_csv(records, path)
        written.append(path)
    return written


def bench_spec_from_config(data: dict, base_dir: str | Path = ".") -> BenchSpec:
    """Build a BenchSpec from a parsed bench file.

    World selection, in order of precedence: ``world`` (inline mapping or
    path to a world file), ``random_world`` (generator arguments),
    ``stagnation_world`` (world seed), or ``dataset`` + ``primitives`` +
    ``http`` for a live backend.
    """
    if not isinstance(data, dict):
        raise ConfigError("bench spec must be a mapping")
    base_dir = Path(base_dir)
    known = {"world", "random_world", "stagnation_world", "dataset", "primitives", "space", "http",
             "search", "seeds", "variants", "threshold", "selected_tools", "metric", "metric_name",
             "baseline", "workers"}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown bench keys: {sorted(extra)}")
    world = dataset = space = None
    try:
        if "world" in data:
            w = data["world"]
            if isinstance(w, str):
                from .config import read_config
                path = base_dir / w
                world = world_from_config(read_config(path), path.parent)
            else:
                world = world_from_config(w, base_dir)
        elif "random_world" in data:
            world = random_world(**data["random_world"])
        elif "stagnation_world" in data:
            world = stagnation_world(int(data["stagnation_world"]))
        elif "dataset" in data:
            dataset = load_dataset(base_dir / data["dataset"])
            if "primitives" in data:
                space = space_from_config(data["primitives"])
            elif "space" in data:
                from .primitives import load_space
                space = load_space(base_dir / data["space"])
        else:
            raise ConfigError("bench spec needs a world, random_world, stagnation_world or dataset")
        return BenchSpec(
            config=SearchConfig.from_dict(data.get("search")),
            seeds=[int(s) for s in data.get("seeds", DEFAULTS["bench_seeds"])],
            variants=list(data.get("variants", ["pruned", "unpruned"])),
            world=world,
            dataset=dataset,
            space=space,
            http=data.get("http"),
            metric=metric_config_from_dict(data.get("metric")),
            metric_name=data.get("metric_name", "sfe"),
            threshold=data.get("threshold"),
            selected_tools=data.get("selected_tools"),
            baseline=data.get("baseline", "unpruned"),
            workers=int(data.get("workers", 1)),
        )
    except TypeError as exc:
        raise ConfigError(f"invalid bench spec: {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid bench spec: {exc}") from exc
