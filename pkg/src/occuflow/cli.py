"""Command-line surface.

Exit codes: 0 success, 1 validation failure, 2 I/O error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import blocks, gradcheck
from .baselines import BASELINE_KINDS, predict_baseline
from .errors import OccuflowError
from .grids import Grid
from .losses import LossWeights, make_schedule
from .metrics import METRIC_KEYS, lookup_reference, reference_table
from .ofgr import OfgrError, write_ofgr
from .raster import assemble_input, build_waypoint_targets, rasterize_map, \
    rasterize_occupancy
from .runner import RunConfig, load_scenario_file, run_eval
from .scenario import CURRENT_INDEX, make_synthetic_scenario
from .trainer import TrainConfig, make_training_scenes, save_model, train, \
    wl_ablation

EXIT_VALIDATION = 1
EXIT_IO = 2


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guarded(fn):
    """Map toolkit and I/O errors to the exit-code contract."""
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (OfgrError, OSError) as e:
            _fail(EXIT_IO, str(e))
        except (OccuflowError, ValueError) as e:
            _fail(EXIT_VALIDATION, str(e))
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _load_single_scenario(path, strict):
    scenarios = load_scenario_file(path, strict)
    if len(scenarios) != 1:
        _fail(EXIT_VALIDATION, f"{path}: expected exactly one scenario")
    return scenarios[0]


def _parse_loss_options(lambda_o, lambda_f, lambda_w, schedule, config):
    """Loss settings from flags, optionally overridden by a config file with
    a [loss] section (TOML or JSON, same keys as the flags)."""
    if config is not None:
        text = Path(config).read_text()
        if config.endswith(".json"):
            section = json.loads(text).get("loss", {})
        else:
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            section = tomllib.loads(text).get("loss", {})
        lambda_o = section.get("lambda_o", lambda_o)
        lambda_f = section.get("lambda_f", lambda_f)
        lambda_w = section.get("lambda_w", lambda_w)
        schedule = section.get("schedule", schedule)
    if isinstance(schedule, str) and schedule.startswith("["):
        schedule = json.loads(schedule)
    if isinstance(schedule, (list, tuple)):
        sched = make_schedule("custom", schedule)
    else:
        sched = make_schedule(schedule)
    return LossWeights(lambda_o, lambda_f, lambda_w), sched


grid_options = [
    click.option("--grid-size", default=256, show_default=True,
                 help="Grid height and width in cells."),
    click.option("--cell-size", default=0.3125, show_default=True,
                 help="Cell edge length in meters."),
]


def _with_options(opts):
    def deco(fn):
        for opt in reversed(opts):
            fn = opt(fn)
        return fn
    return deco


@click.group()
def main():
    """BEV occupancy and backward-flow prediction toolkit."""


@main.command()
@click.argument("scenario_file", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Output directory.")
@click.option("--timestep", default=CURRENT_INDEX, show_default=True)
@click.option("--strict", is_flag=True, help="Reject unknown JSON fields.")
@_with_options(grid_options)
@_guarded
def rasterize(scenario_file, out, timestep, strict, grid_size, cell_size):
    """Rasterize a scenario's occupancy and map at one timestep."""
    scenario = _load_single_scenario(scenario_file, strict)
    spec = scenario.anchored_spec(grid_size, grid_size, cell_size)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_ofgr(out / f"{scenario.id}.occupancy.ofgr",
               rasterize_occupancy(scenario, timestep, spec))
    write_ofgr(out / f"{scenario.id}.map.ofgr", rasterize_map(scenario, spec))
    click.echo(f"wrote occupancy and map rasters for {scenario.id} to {out}")


@main.command()
@click.argument("scenario_file", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Output directory.")
@click.option("--strict", is_flag=True)
@_with_options(grid_options)
@_guarded
def gt(scenario_file, out, strict, grid_size, cell_size):
    """Write waypoint ground truth (observed, occluded, flow) as OFGR."""
    scenario = _load_single_scenario(scenario_file, strict)
    spec = scenario.anchored_spec(grid_size, grid_size, cell_size)
    targets = build_waypoint_targets(scenario, spec)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_ofgr(out / f"{scenario.id}.gt_observed.ofgr", list(targets.observed_occ))
    write_ofgr(out / f"{scenario.id}.gt_occluded.ofgr", list(targets.occluded_occ))
    write_ofgr(out / f"{scenario.id}.gt_flow.ofgr", list(targets.flow))
    click.echo(f"wrote 8+8+8 ground-truth grids for {scenario.id} to {out}")


@main.command()
@click.argument("scenario_file", type=click.Path(exists=True))
@click.option("--baseline", type=click.Choice(["persistence", "cv"]),
              default="persistence", show_default=True)
@click.option("--out", required=True, type=click.Path(), help="Output directory.")
@click.option("--strict", is_flag=True)
@_with_options(grid_options)
@_guarded
def predict(scenario_file, baseline, out, strict, grid_size, cell_size):
    """Run a baseline predictor and write its PredictionSet as OFGR."""
    scenario = _load_single_scenario(scenario_file, strict)
    spec = scenario.anchored_spec(grid_size, grid_size, cell_size)
    features = assemble_input(scenario, spec)
    kind = "constant_velocity" if baseline == "cv" else baseline
    pred = predict_baseline(kind, features, scenario)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_ofgr(out / f"{scenario.id}.pred_observed.ofgr", list(pred.observed_logits))
    write_ofgr(out / f"{scenario.id}.pred_occluded.ofgr", list(pred.occluded_logits))
    write_ofgr(out / f"{scenario.id}.pred_flow.ofgr", list(pred.flow))
    click.echo(f"wrote {baseline} predictions for {scenario.id} to {out}")


@main.command("eval")
@click.option("--scenarios", "scenario_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--predictions", "prediction_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path())
@click.option("--jobs", default=1, show_default=True)
@click.option("--thresholds", default=100, show_default=True)
@click.option("--iou-variant", type=click.Choice(["paper", "union"]),
              default="paper", show_default=True)
@click.option("--strict", is_flag=True)
@_guarded
def eval_cmd(scenario_dir, prediction_dir, out, jobs, thresholds,
             iou_variant, strict):
    """Evaluate predictions for a scenario directory and write reports."""
    variant = "paper_literal" if iou_variant == "paper" else "union"
    config = RunConfig(Path(scenario_dir), Path(prediction_dir), Path(out),
                       jobs=jobs, strict=strict, threshold_count=thresholds,
                       iou_variant=variant)
    summary = run_eval(config)
    click.echo(f"evaluated {summary.scenario_count} scenarios "
               f"in {summary.wall_time_s:.2f}s; reports in {out}")
    for key in METRIC_KEYS:
        click.echo(f"  {key:<24}{summary.aggregate[key]:.6f}")


@main.command("gradcheck")
@click.option("--seed", default=0, show_default=True)
@_guarded
def gradcheck_cmd(seed):
    """Finite-difference verification of all analytic gradients."""
    if not gradcheck.run_all(seed=seed):
        sys.exit(EXIT_VALIDATION)


@main.command("blocks-selftest")
@_guarded
def blocks_selftest():
    """Run the neural-block invariant suite."""
    if not blocks.selftest():
        sys.exit(EXIT_VALIDATION)


@main.command("train-demo")
@click.option("--schedule", default="linear", show_default=True,
              help='"uniform", "linear" or a JSON list of 8 weights.')
@click.option("--steps", default=200, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--learning-rate", default=0.05, show_default=True)
@click.option("--scenes", default=16, show_default=True)
@click.option("--lambda-o", default=1.0, show_default=True)
@click.option("--lambda-f", default=1.0, show_default=True)
@click.option("--lambda-w", default=1.0, show_default=True)
@click.option("--config", type=click.Path(exists=True),
              help="TOML/JSON config file with a [loss] section.")
@click.option("--out", required=True, type=click.Path(), help="Model file.")
@_guarded
def train_demo(schedule, steps, seed, learning_rate, scenes, lambda_o,
               lambda_f, lambda_w, config, out):
    """Train the tiny predictor on synthetic scenes with gradient descent."""
    lambdas, sched = _parse_loss_options(lambda_o, lambda_f, lambda_w,
                                         schedule, config)
    cfg = TrainConfig(steps=steps, learning_rate=learning_rate, seed=seed,
                      schedule=sched, lambdas=lambdas)
    dataset = make_training_scenes(seed, scenes)
    result = train(cfg, dataset)
    save_model(out, result.model)
    first, last = result.loss_curve[0], result.loss_curve[-1]
    click.echo(f"trained {steps} steps on {scenes} scenes; "
               f"loss {first.total:.6f} -> {last.total:.6f}; model in {out}")


@main.command("wl-ablation")
@click.option("--seed", default=0, show_default=True)
@click.option("--steps", default=200, show_default=True)
@click.option("--learning-rate", default=0.05, show_default=True)
@click.option("--train-scenes", default=16, show_default=True)
@click.option("--eval-scenes", default=8, show_default=True)
@click.option("--out", type=click.Path(), help="Optional JSON report path.")
@_guarded
def wl_ablation_cmd(seed, steps, learning_rate, train_scenes, eval_scenes, out):
    """Compare uniform vs time-weighted flow-loss training on held-out EPE."""
    cfg = TrainConfig(steps=steps, learning_rate=learning_rate, seed=seed)
    train_set = make_training_scenes(seed, train_scenes)
    eval_set = make_training_scenes(seed + 10_000, eval_scenes)
    report = wl_ablation(cfg, train_set, eval_set)
    click.echo("per-waypoint EPE (uniform schedule): "
               + " ".join(f"{v:.4f}" for v in report.epe_uniform))
    click.echo("per-waypoint EPE (linear schedule):  "
               + " ".join(f"{v:.4f}" for v in report.epe_weighted))
    click.echo(f"waypoint-8 EPE better with weighting: "
               f"{report.weighted_final_waypoint_better}")
    click.echo(f"published EPE reference (weighted vs uniform schedule): "
               f"{report.reference_epe_weighted} vs {report.reference_epe_uniform}")
    if out:
        Path(out).write_text(json.dumps(report.to_dict(), indent=2) + "\n")


@main.command("report")
@click.argument("results_file", type=click.Path(exists=True))
@click.option("--reference", default="OFMPNet-Swin-T", show_default=True)
@click.option("--split", type=click.Choice(["val", "test"]), default="test",
              show_default=True)
@_guarded
def report_cmd(results_file, reference, split):
    """Print a metric table from a summary/report JSON with reference deltas."""
    data = json.loads(Path(results_file).read_text())
    mean = data.get("aggregate") or data.get("mean")
    if mean is None:
        _fail(EXIT_VALIDATION, f"{results_file}: no aggregate/mean section")
    ref = lookup_reference(reference, split)
    click.echo(f"{'metric':<26}{'ours':>10}{'reference':>12}{'delta':>10}"
               f"   ({reference}, {split})")
    for key in METRIC_KEYS:
        rv = getattr(ref, key)
        click.echo(f"{key:<26}{mean[key]:>10.4f}{rv:>12.4f}"
                   f"{mean[key] - rv:>+10.4f}")


@main.command("reference-table")
@_guarded
def reference_table_cmd():
    """Print the embedded registry of published benchmark numbers."""
    for row in reference_table():
        vals = " ".join(f"{getattr(row, k):.4f}" for k in METRIC_KEYS)
        click.echo(f"{row.method:<22}{row.split:<6}{vals}")


@main.command("make-synthetic")
@click.option("--seed", default=0, show_default=True)
@click.option("--kind", type=click.Choice(["static", "linear", "turning",
                                           "appearing"]), default="linear",
              show_default=True)
@click.option("--agents", default=3, show_default=True)
@click.option("--speed", default=3.125, show_default=True)
@click.option("--out", required=True, type=click.Path())
@_guarded
def make_synthetic(seed, kind, agents, speed, out):
    """Write a deterministic synthetic scenario as JSON."""
    from .scenario import scenario_to_json
    scenario = make_synthetic_scenario(seed, kind, n_agents=agents, speed=speed)
    Path(out).write_text(scenario_to_json(scenario, indent=2) + "\n")
    click.echo(f"wrote scenario {scenario.id} to {out}")


if __name__ == "__main__":
    main()
