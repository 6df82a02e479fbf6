"""Desk-scale reference trainer: a tiny two-layer convolutional predictor
trained with plain gradient descent on synthetic scenes, plus the
weighted-vs-uniform flow-loss ablation."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DivergenceError, ShapeMismatch
from .grids import GridSpec, OccupancyGrid
from .losses import (LossValue, LossWeights, PredictionSet, WeightSchedule,
                     combined_loss, make_schedule)
from .metrics import epe
from .raster import (InputFeatures, MAP_CHANNELS, N_HISTORY_FLOW,
                     N_HISTORY_OCC, WaypointTargets, assemble_input,
                     build_waypoint_targets)
from .scenario import N_WAYPOINTS, Scenario, make_synthetic_scenario

IN_CHANNELS = N_HISTORY_OCC + MAP_CHANNELS + 2 * N_HISTORY_FLOW  # 38
OUT_CHANNELS = 4 * N_WAYPOINTS  # per waypoint: obs logit, occl logit, dx, dy
MODEL_MAGIC = b"OFMP"
MODEL_VERSION = 1


# ---------------------------------------------------------------------------
# minimal conv plumbing (same padding, 3x3)

def _im2col(x: np.ndarray) -> np.ndarray:
    """(H, W, C) -> (H*W, C*9) patch matrix for a same-padded 3x3 window."""
    H, W, C = x.shape
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (3, 3), axis=(0, 1))  # (H, W, C, 3, 3)
    return win.reshape(H * W, C * 9)


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """'same' 3x3 convolution: x (H, W, Cin), w (3, 3, Cin, Cout), b (Cout)."""
    H, W, cin = x.shape
    cout = w.shape[3]
    wmat = w.transpose(2, 0, 1, 3).reshape(cin * 9, cout)
    return (_im2col(x) @ wmat + b).reshape(H, W, cout)


def conv2d_backward(x: np.ndarray, w: np.ndarray, g_out: np.ndarray):
    """Gradients of a same-padded 3x3 conv w.r.t. input, kernel and bias."""
    H, W, cin = x.shape
    cout = w.shape[3]
    g_flat = g_out.reshape(H * W, cout)
    g_w = (_im2col(x).T @ g_flat).reshape(cin, 3, 3, cout).transpose(1, 2, 0, 3)
    g_b = g_flat.sum(axis=0)
    # input gradient: full correlation of g_out with the flipped kernel
    wflip = w[::-1, ::-1].transpose(3, 0, 1, 2).reshape(cout * 9, cin)
    g_x = (_im2col(g_out) @ wflip).reshape(H, W, cin)
    return g_x, g_w, g_b


@dataclass
class TinyPredictor:
    """Two 3x3 conv layers with tanh in between; linear output head gives
    (observed logit, occluded logit, dx, dy) per waypoint."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def create(cls, seed: int = 0, hidden: int = 16,
               in_channels: int = IN_CHANNELS) -> "TinyPredictor":
        rng = np.random.default_rng(seed)
        s1 = 1.0 / np.sqrt(9 * in_channels)
        s2 = 1.0 / np.sqrt(9 * hidden)
        model = cls(rng.uniform(-s1, s1, (3, 3, in_channels, hidden)),
                    np.zeros(hidden),
                    rng.uniform(-s2, s2, (3, 3, hidden, OUT_CHANNELS)),
                    np.zeros(OUT_CHANNELS))
        assert model.n_params < 100_000
        return model

    @property
    def hidden(self) -> int:
        return self.w1.shape[3]

    @property
    def in_channels(self) -> int:
        return self.w1.shape[2]

    @property
    def n_params(self) -> int:
        return self.w1.size + self.b1.size + self.w2.size + self.b2.size

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1.ravel(),
                               self.w2.ravel(), self.b2.ravel()])

    def from_vector(self, v: np.ndarray) -> "TinyPredictor":
        if v.size != self.n_params:
            raise ShapeMismatch(
                f"parameter vector has {v.size} entries, expected {self.n_params}")
        out = []
        offset = 0
        for arr in (self.w1, self.b1, self.w2, self.b2):
            out.append(v[offset:offset + arr.size].reshape(arr.shape).copy())
            offset += arr.size
        return TinyPredictor(*out)


def _forward_arrays(model: TinyPredictor, x: np.ndarray):
    h = conv2d(x, model.w1, model.b1)
    a = np.tanh(h)
    out = conv2d(a, model.w2, model.b2)
    return out, (x, a)


def _split_outputs(out: np.ndarray):
    """(H, W, 32) -> observed (8,H,W), occluded (8,H,W), flow (8,H,W,2)."""
    H, W, _ = out.shape
    per = out.reshape(H, W, N_WAYPOINTS, 4).transpose(2, 0, 1, 3)
    return per[:, :, :, 0], per[:, :, :, 1], per[:, :, :, 2:4]


def _merge_output_grads(g_obs, g_occl, g_flow) -> np.ndarray:
    T, H, W = g_obs.shape
    per = np.concatenate([g_obs[..., None], g_occl[..., None], g_flow], axis=3)
    return per.transpose(1, 2, 0, 3).reshape(H, W, 4 * T)


def forward(model: TinyPredictor, features: InputFeatures) -> PredictionSet:
    """Deterministic forward pass producing a PredictionSet."""
    x = features.stacked_channels()
    if x.shape[2] != model.in_channels:
        raise ShapeMismatch(
            f"input has {x.shape[2]} channels, model expects {model.in_channels}")
    out, _ = _forward_arrays(model, x)
    obs, occl, flow = _split_outputs(out)
    return PredictionSet.from_arrays(features.spec, obs, occl, flow)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 200
    learning_rate: float = 1e-4
    seed: int = 0
    schedule: WeightSchedule = field(default_factory=lambda: make_schedule("linear"))
    lambdas: LossWeights = LossWeights()
    hidden: int = 16

    def __post_init__(self):
        if self.steps <= 0:
            raise ValueError("steps must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")


def scene_loss_and_grad(model: TinyPredictor, features: InputFeatures,
                        targets: WaypointTargets, current_occ: OccupancyGrid,
                        config: TrainConfig):
    """Loss and flat parameter gradient for one scene (reverse accumulation
    through conv, tanh and the full loss stack)."""
    x = features.stacked_channels()
    out, (x_in, a) = _forward_arrays(model, x)
    obs, occl, flow = _split_outputs(out)
    pred = PredictionSet.from_arrays(features.spec, obs, occl, flow)
    loss, grads = combined_loss(pred, targets, current_occ,
                                config.lambdas, config.schedule)
    g_out = _merge_output_grads(grads["observed_logits"],
                                grads["occluded_logits"], grads["flow"])
    g_a, g_w2, g_b2 = conv2d_backward(a, model.w2, g_out)
    g_h = g_a * (1.0 - a * a)
    _, g_w1, g_b1 = conv2d_backward(x_in, model.w1, g_h)
    g = np.concatenate([g_w1.ravel(), g_b1.ravel(), g_w2.ravel(), g_b2.ravel()])
    return loss, g


def backward(model: TinyPredictor, features: InputFeatures,
             targets: WaypointTargets, current_occ: OccupancyGrid,
             config: TrainConfig) -> np.ndarray:
    """Flat analytic gradient of the combined loss w.r.t. all parameters."""
    return scene_loss_and_grad(model, features, targets, current_occ, config)[1]


@dataclass(frozen=True)
class TrainResult:
    model: TinyPredictor
    loss_curve: tuple[LossValue, ...]


def prepare_scene(scenario: Scenario, spec: GridSpec):
    """(features, targets, current occupancy) triple for one scenario."""
    from .raster import rasterize_occupancy
    from .scenario import CURRENT_INDEX
    features = assemble_input(scenario, spec)
    targets = build_waypoint_targets(scenario, spec)
    current = rasterize_occupancy(scenario, CURRENT_INDEX, spec)
    return features, targets, current


def train(config: TrainConfig, dataset, spec: GridSpec | None = None) -> TrainResult:
    """Plain gradient descent on prepared scenes.

    ``dataset`` is a list of scenarios or of prepared (features, targets,
    current_occ) triples.  Deterministic given the config seed.
    """
    if not dataset:
        raise ValueError("training dataset must be nonempty")
    scenes = [prepare_scene(s, spec or s.anchored_spec(32, 32))
              if isinstance(s, Scenario) else s for s in dataset]
    model = TinyPredictor.create(seed=config.seed, hidden=config.hidden)
    params = model.to_vector()
    curve = []
    for _ in range(config.steps):
        if not np.all(np.isfinite(params)):
            raise DivergenceError("parameters became non-finite")
        model = model.from_vector(params)
        totals = np.zeros(4)
        grad = np.zeros_like(params)
        for features, targets, current in scenes:
            loss, g = scene_loss_and_grad(model, features, targets, current,
                                          config)
            totals += (loss.total, loss.occupancy, loss.flow, loss.trace)
            grad += g
        n = len(scenes)
        step_loss = LossValue(*(totals / n))
        if not np.isfinite(step_loss.total):
            raise DivergenceError(f"loss became non-finite: {step_loss.total}")
        curve.append(step_loss)
        params = params - config.learning_rate * (grad / n)
    return TrainResult(model.from_vector(params), tuple(curve))


def make_training_scenes(seed: int, count: int, kinds=("linear", "turning"),
                         speed: float = 0.3125) -> list[Scenario]:
    """Deterministic desk-scale synthetic dataset for the demo trainer."""
    return [make_synthetic_scenario(seed * 1000 + i, kinds[i % len(kinds)],
                                    n_agents=2, speed=speed)
            for i in range(count)]


def per_waypoint_epe(model: TinyPredictor, scenes) -> np.ndarray:
    """Mean EPE per waypoint across prepared evaluation scenes."""
    sums = np.zeros(N_WAYPOINTS)
    counts = np.zeros(N_WAYPOINTS)
    for features, targets, _ in scenes:
        pred = forward(model, features)
        flow = pred.flow_array()
        for k in range(N_WAYPOINTS):
            gt = targets.flow[k].data
            if np.any(gt != 0.0):
                sums[k] += epe(flow[k], gt)
                counts[k] += 1
    return sums / np.maximum(counts, 1)


@dataclass(frozen=True)
class AblationReport:
    """Weighted-vs-uniform flow-loss comparison on held-out scenes."""

    epe_uniform: tuple[float, ...]
    epe_weighted: tuple[float, ...]
    weighted_final_waypoint_better: bool
    reference_epe_weighted: float = 3.3987   # published large-scale pair,
    reference_epe_uniform: float = 3.5425    # for context only

    def to_dict(self) -> dict:
        return {
            "epe_uniform": list(self.epe_uniform),
            "epe_weighted": list(self.epe_weighted),
            "weighted_final_waypoint_better": self.weighted_final_waypoint_better,
            "reference_epe": {"weighted": self.reference_epe_weighted,
                              "uniform": self.reference_epe_uniform},
        }


def wl_ablation(config: TrainConfig, train_scenarios, eval_scenarios,
                spec: GridSpec | None = None) -> AblationReport:
    """Train a uniform-schedule and a linear-schedule model that differ in
    nothing else and compare per-waypoint EPE on held-out scenes."""
    def prep(scenarios):
        return [prepare_scene(s, spec or s.anchored_spec(32, 32))
                if isinstance(s, Scenario) else s for s in scenarios]

    train_scenes = prep(train_scenarios)
    eval_scenes = prep(eval_scenarios)
    uniform_cfg = replace(config, schedule=make_schedule("uniform"))
    weighted_cfg = replace(config, schedule=make_schedule("linear"))
    uniform = train(uniform_cfg, train_scenes)
    weighted = train(weighted_cfg, train_scenes)
    epe_u = per_waypoint_epe(uniform.model, eval_scenes)
    epe_w = per_waypoint_epe(weighted.model, eval_scenes)
    return AblationReport(tuple(epe_u), tuple(epe_w),
                          bool(epe_w[-1] <= epe_u[-1]))


# ---------------------------------------------------------------------------
# model serialization: flat parameter file with a small header

def save_model(path, model: TinyPredictor) -> None:
    header = struct.pack("<4sHIII", MODEL_MAGIC, MODEL_VERSION,
                         model.in_channels, model.hidden, OUT_CHANNELS)
    Path(path).write_bytes(header + model.to_vector().astype("<f8").tobytes())


def load_model(path) -> TinyPredictor:
    raw = Path(path).read_bytes()
    magic, version, cin, hidden, cout = struct.unpack_from("<4sHIII", raw)
    if magic != MODEL_MAGIC or version != MODEL_VERSION:
        raise ValueError(f"{path}: not a model file")
    template = TinyPredictor(np.zeros((3, 3, cin, hidden)), np.zeros(hidden),
                             np.zeros((3, 3, hidden, cout)), np.zeros(cout))
    params = np.frombuffer(raw, dtype="<f8", offset=struct.calcsize("<4sHIII"))
    return template.from_vector(params.astype(np.float64))
