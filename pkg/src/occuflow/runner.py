"""Dataset-level evaluation: scenario loading, prediction alignment and a
deterministic (ordered, compensated) aggregation across scenarios."""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MissingPrediction, ParseError
from .losses import PredictionSet
from .metrics import METRIC_KEYS, MetricsConfig, MetricsReport, ThresholdGrid, \
    evaluate
from .ofgr import read_grids
from .raster import build_waypoint_targets, rasterize_occupancy
from .scenario import CURRENT_INDEX, Scenario, parse_scenario

PREDICTION_SUFFIXES = ("pred_observed", "pred_occluded", "pred_flow")
GT_SUFFIXES = ("gt_observed", "gt_occluded", "gt_flow")


@dataclass(frozen=True)
class RunConfig:
    scenario_dir: Path
    prediction_dir: Path
    out_dir: Path | None = None
    jobs: int = 1
    strict: bool = False
    threshold_count: int = 100
    iou_variant: str = "paper_literal"
    grid_height: int = 256
    grid_width: int = 256
    cell_size_m: float = 0.3125

    def __post_init__(self):
        if self.jobs < 1:
            raise ValueError("parallelism degree must be >= 1")
        for p in (self.scenario_dir, self.prediction_dir):
            if not Path(p).is_dir():
                raise FileNotFoundError(f"no such directory: {p}")

    def metrics_config(self) -> MetricsConfig:
        return MetricsConfig(ThresholdGrid(self.threshold_count),
                             self.iou_variant)


@dataclass(frozen=True)
class DatasetSummary:
    """Aggregate over a scenario set; the aggregate is the deterministic
    ordered mean of the per-scenario reports."""

    scenario_count: int
    aggregate: dict[str, float]
    per_scenario: dict[str, MetricsReport]
    wall_time_s: float = field(compare=False)

    def to_dict(self) -> dict:
        # wall time is intentionally left out: summary bytes must be
        # reproducible across runs and parallelism degrees
        return {
            "scenario_count": self.scenario_count,
            "aggregate": {k: self.aggregate[k] for k in METRIC_KEYS},
            "per_scenario": {sid: self.per_scenario[sid].to_dict()
                             for sid in sorted(self.per_scenario)},
        }

    def to_json(self, indent=2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def load_scenario_file(path, strict: bool = False) -> list[Scenario]:
    """Load one .json (single scenario) or .jsonl (one per line) file."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix == ".jsonl":
            return [parse_scenario(line, strict)
                    for line in text.splitlines() if line.strip()]
        return [parse_scenario(text, strict)]
    except ParseError as e:
        raise type(e)(f"{path}: {e}") from None


def load_scenario_dir(directory, strict: bool = False) -> list[Scenario]:
    """All scenarios under a directory, sorted by scenario id."""
    directory = Path(directory)
    scenarios = []
    for path in sorted(directory.glob("*.json")) + sorted(directory.glob("*.jsonl")):
        scenarios.extend(load_scenario_file(path, strict))
    ids = [s.id for s in scenarios]
    if len(set(ids)) != len(ids):
        raise ParseError(f"{directory}: duplicate scenario ids")
    return sorted(scenarios, key=lambda s: s.id)


def load_prediction_set(prediction_dir, scenario_id: str) -> PredictionSet:
    """Read the three OFGR containers for one scenario id."""
    prediction_dir = Path(prediction_dir)
    paths = [prediction_dir / f"{scenario_id}.{sfx}.ofgr"
             for sfx in PREDICTION_SUFFIXES]
    observed = read_grids(paths[0], "grid")
    occluded = read_grids(paths[1], "grid")
    flow = read_grids(paths[2], "flow")
    return PredictionSet(tuple(observed), tuple(occluded), tuple(flow))


def evaluate_scenario(scenario: Scenario, prediction_dir,
                      config: RunConfig) -> MetricsReport:
    pred = load_prediction_set(prediction_dir, scenario.id)
    spec = pred.spec
    targets = build_waypoint_targets(scenario, spec)
    current = rasterize_occupancy(scenario, CURRENT_INDEX, spec)
    return evaluate(pred, targets, current, config.metrics_config())


def _worker(args):
    scenario, prediction_dir, config = args
    return scenario.id, evaluate_scenario(scenario, prediction_dir, config)


def run_eval(config: RunConfig) -> DatasetSummary:
    """Evaluate every scenario against its predictions and aggregate.

    Results are byte-identical for any parallelism degree: scenarios are
    processed keyed by id and reduced in sorted-id order with compensated
    summation.
    """
    start = time.monotonic()
    scenarios = load_scenario_dir(config.scenario_dir, config.strict)
    if not scenarios:
        raise FileNotFoundError(f"no scenarios found in {config.scenario_dir}")

    missing = [s.id for s in scenarios
               if not all((Path(config.prediction_dir) / f"{s.id}.{sfx}.ofgr").exists()
                          for sfx in PREDICTION_SUFFIXES)]
    if missing:
        raise MissingPrediction(missing)

    tasks = [(s, config.prediction_dir, config) for s in scenarios]
    if config.jobs == 1:
        results = dict(map(_worker, tasks))
    else:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = dict(pool.map(_worker, tasks))

    ordered = sorted(results)
    aggregate = {
        key: math.fsum(results[sid].mean[key] for sid in ordered) / len(ordered)
        for key in METRIC_KEYS
    }
    summary = DatasetSummary(len(ordered), aggregate, results,
                             time.monotonic() - start)
    if config.out_dir is not None:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(summary.to_json() + "\n")
        lines = [f"scenarios evaluated: {summary.scenario_count}"]
        lines += [f"{k:<24}{aggregate[k]:.6f}" for k in METRIC_KEYS]
        (out / "summary.txt").write_text("\n".join(lines) + "\n")
        for sid in ordered:
            (out / f"{sid}.report.json").write_text(
                results[sid].to_json() + "\n")
    return summary
