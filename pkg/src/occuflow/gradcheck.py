"""Central finite-difference verification of every analytic gradient."""

from __future__ import annotations

import numpy as np

from .grids import GridSpec, OccupancyGrid
from .losses import (LossWeights, flow_loss, make_schedule, occupancy_loss,
                     trace_loss)
from .trainer import TrainConfig, TinyPredictor, prepare_scene, \
    scene_loss_and_grad
from .scenario import make_synthetic_scenario


def central_diff(f, x: np.ndarray, indices=None, h: float = 1e-3) -> np.ndarray:
    """Central finite differences of scalar f at x, over all entries or a
    subset of flat indices."""
    flat = x.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    grad = np.zeros(flat.size)
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray,
                floor: float = 1e-6) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_occupancy_loss(seed: int = 0, t_f: int = 2, size: int = 8) -> float:
    rng = np.random.default_rng(seed)
    z = rng.normal(scale=2.0, size=(t_f, size, size))
    y = (rng.random((t_f, size, size)) < 0.5).astype(float)
    _, grad = occupancy_loss(z, y)
    fd = central_diff(lambda a: occupancy_loss(a, y)[0], z.copy())
    return max_rel_err(grad, fd)


def check_flow_loss(seed: int = 0, t_f: int = 2, size: int = 8) -> float:
    rng = np.random.default_rng(seed)
    gt = rng.normal(scale=2.0, size=(t_f, size, size, 2))
    # keep |pred - gt| away from the L1 kink so h=1e-3 steps stay one-sided
    offs = rng.uniform(0.1, 1.0, gt.shape) * rng.choice([-1.0, 1.0], gt.shape)
    pred = gt + offs
    occ = (rng.random((t_f, size, size)) < 0.6).astype(float)
    sched = make_schedule("linear", n=t_f)
    _, grad = flow_loss(pred, gt, occ, sched)
    fd = central_diff(lambda a: flow_loss(a, gt, occ, sched)[0], pred.copy())
    return max_rel_err(grad, fd)


def _trace_instance(seed: int, t_f: int, size: int):
    rng = np.random.default_rng(seed)
    # negative logits keep sigmoid sums below the combine clamp; flow
    # fractional parts away from 0/1 keep bilinear sampling one-sided
    z_obs = rng.uniform(-3.0, -1.0, (t_f, size, size))
    z_occl = rng.uniform(-3.0, -1.0, (t_f, size, size))
    base = rng.integers(-2, 3, (t_f, size, size, 2)).astype(float)
    flow = base + rng.uniform(0.2, 0.8, base.shape)
    occ0 = rng.random((size, size))
    gt = (rng.random((t_f, size, size)) < 0.5).astype(float)
    return z_obs, z_occl, flow, occ0, gt


def check_trace_loss(seed: int = 0, t_f: int = 2, size: int = 8) -> dict:
    z_obs, z_occl, flow, occ0, gt = _trace_instance(seed, t_f, size)
    _, g_obs, g_occl, g_flow = trace_loss(z_obs, z_occl, flow, occ0, gt)

    def value(zo=None, zc=None, fl=None):
        return trace_loss(zo if zo is not None else z_obs,
                          zc if zc is not None else z_occl,
                          fl if fl is not None else flow, occ0, gt)[0]

    return {
        "observed_logits": max_rel_err(
            g_obs, central_diff(lambda a: value(zo=a), z_obs.copy())),
        "occluded_logits": max_rel_err(
            g_occl, central_diff(lambda a: value(zc=a), z_occl.copy())),
        "flow": max_rel_err(
            g_flow, central_diff(lambda a: value(fl=a), flow.copy())),
    }


def check_predictor_gradients(seed: int = 7, n_samples: int = 32) -> float:
    scenario = make_synthetic_scenario(seed, "linear", n_agents=2, speed=0.3125)
    spec = scenario.anchored_spec(32, 32)
    features, targets, current = prepare_scene(scenario, spec)
    config = TrainConfig(steps=1, seed=seed)
    model = TinyPredictor.create(seed=seed)
    # bias flow outputs off the bilinear-sampling integer kinks and the
    # occupancy outputs away from the combine clamp at probability 1
    b2 = model.b2.copy()
    b2.reshape(-1, 4)[:, 0:2] = -1.0
    b2.reshape(-1, 4)[:, 2:4] = 0.37
    model = TinyPredictor(model.w1, model.b1, model.w2, b2)

    _, analytic = scene_loss_and_grad(model, features, targets, current, config)
    params = model.to_vector()
    rng = np.random.default_rng(seed)
    indices = rng.choice(params.size, size=n_samples, replace=False)

    def loss_at(v):
        m = model.from_vector(v)
        return scene_loss_and_grad(m, features, targets, current, config)[0].total

    fd = central_diff(loss_at, params.copy(), indices=indices)
    return max_rel_err(analytic[indices], fd.reshape(-1)[indices])


def run_all(seed: int = 0, verbose: bool = True) -> bool:
    """Run every gradient check at its target tolerance; True iff all pass."""
    results = [
        ("occupancy loss vs finite differences",
         check_occupancy_loss(seed), 1e-4),
        ("flow loss vs finite differences", check_flow_loss(seed), 1e-4),
    ]
    for name, err in check_trace_loss(seed).items():
        results.append((f"trace loss ({name}) vs finite differences", err, 1e-4))
    results.append(("predictor parameter gradients",
                    check_predictor_gradients(seed), 1e-3))
    ok = True
    for name, err, tol in results:
        passed = err < tol
        ok &= passed
        if verbose:
            print(f"[{'PASS' if passed else 'FAIL'}] {name}: "
                  f"max rel err {err:.2e} (tol {tol:.0e})")
    return ok
