"""Multi-task objective: occupancy cross-entropy, time-weighted L1 flow
loss, recursive flow-trace loss and their combination, all with analytic
gradients (no autodiff framework)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidSchedule, ShapeMismatch
from .grids import FlowField, Grid, GridSpec, OccupancyGrid
from .raster import WaypointTargets
from .scenario import N_WAYPOINTS

_CE_EPS = 1e-7


# ---------------------------------------------------------------------------
# types

@dataclass(frozen=True)
class PredictionSet:
    """Model output for the 8 waypoints: occupancy logits (unbounded reals)
    for the observed and occluded channels plus backward flow."""

    observed_logits: tuple[Grid, ...]
    occluded_logits: tuple[Grid, ...]
    flow: tuple[FlowField, ...]

    def __post_init__(self):
        object.__setattr__(self, "observed_logits", tuple(self.observed_logits))
        object.__setattr__(self, "occluded_logits", tuple(self.occluded_logits))
        object.__setattr__(self, "flow", tuple(self.flow))
        for name in ("observed_logits", "occluded_logits", "flow"):
            seq = getattr(self, name)
            if len(seq) != N_WAYPOINTS:
                raise ShapeMismatch(f"{name}: expected {N_WAYPOINTS} waypoints")
            for g in seq:
                if g.spec != self.spec:
                    raise ShapeMismatch("prediction grids must share one GridSpec")

    @property
    def spec(self) -> GridSpec:
        return self.observed_logits[0].spec

    def observed_array(self) -> np.ndarray:
        return np.stack([g.data[:, :, 0] for g in self.observed_logits])

    def occluded_array(self) -> np.ndarray:
        return np.stack([g.data[:, :, 0] for g in self.occluded_logits])

    def flow_array(self) -> np.ndarray:
        return np.stack([f.data for f in self.flow])

    @classmethod
    def from_arrays(cls, spec: GridSpec, observed: np.ndarray,
                    occluded: np.ndarray, flow: np.ndarray) -> "PredictionSet":
        for a in (observed, occluded, flow):
            if a.shape[0] != N_WAYPOINTS:
                raise ShapeMismatch(
                    f"expected {N_WAYPOINTS} waypoints, got {a.shape[0]}")
        return cls(tuple(Grid(spec, observed[k]) for k in range(N_WAYPOINTS)),
                   tuple(Grid(spec, occluded[k]) for k in range(N_WAYPOINTS)),
                   tuple(FlowField(spec, flow[k]) for k in range(N_WAYPOINTS)))


@dataclass(frozen=True)
class WeightSchedule:
    """Per-waypoint positive weights, normalized to mean 1 on construction."""

    w: tuple[float, ...]

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise InvalidSchedule("schedule must be a non-empty vector")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise InvalidSchedule("schedule entries must be positive and finite")
        w = w / w.mean()
        object.__setattr__(self, "w", tuple(float(v) for v in w))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.w)


def make_schedule(kind: str, params=None, n: int = N_WAYPOINTS) -> WeightSchedule:
    """uniform -> all ones; linear -> ramp proportional to t, mean 1;
    custom -> user values, mean-normalized."""
    if kind == "uniform":
        return WeightSchedule(tuple(1.0 for _ in range(n)))
    if kind == "linear":
        return WeightSchedule(tuple(float(t) for t in range(1, n + 1)))
    if kind == "custom":
        if params is None:
            raise InvalidSchedule("custom schedule requires explicit weights")
        return WeightSchedule(tuple(float(v) for v in params))
    raise InvalidSchedule(f"unknown schedule kind {kind!r}")


@dataclass(frozen=True)
class LossWeights:
    """Combination coefficients for the occupancy, flow and trace terms."""

    lambda_o: float = 1.0
    lambda_f: float = 1.0
    lambda_w: float = 1.0

    def __post_init__(self):
        if min(self.lambda_o, self.lambda_f, self.lambda_w) < 0:
            raise ValueError("loss coefficients must be nonnegative")


@dataclass(frozen=True)
class LossValue:
    """Total objective plus raw (unnormalized) component sums."""

    total: float
    occupancy: float
    flow: float
    trace: float


# ---------------------------------------------------------------------------
# numerics helpers

def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _stack(grids, channels=1) -> np.ndarray:
    """Coerce a sequence of grids (or an array) to (T, H, W[, 2]) float."""
    if isinstance(grids, np.ndarray):
        return np.asarray(grids, dtype=np.float64)
    arrs = []
    for g in grids:
        a = g.data if isinstance(g, Grid) else np.asarray(g, dtype=np.float64)
        if channels == 1 and a.ndim == 3:
            a = a[:, :, 0]
        arrs.append(a)
    return np.stack(arrs)


def _check_same_shape(*arrays):
    shape = arrays[0].shape[:3]
    for a in arrays[1:]:
        if a.shape[:3] != shape:
            raise ShapeMismatch(f"shape mismatch: {a.shape} vs {arrays[0].shape}")


# ---------------------------------------------------------------------------
# loss components

def occupancy_loss(pred_logits, gt) -> tuple[float, np.ndarray]:
    """Summed binary cross-entropy over waypoints and cells, on logits.

    Returns (loss, gradient w.r.t. logits); the gradient is
    sigmoid(logit) - gt per cell.
    """
    z = _stack(pred_logits)
    y = _stack(gt)
    _check_same_shape(z, y)
    loss = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    grad = sigmoid(z) - y
    return float(loss.sum()), grad


def flow_loss(pred, gt, gt_occ, schedule: WeightSchedule) -> tuple[float, np.ndarray]:
    """Time-weighted, occupancy-masked L1 flow loss.

    Returns (loss, gradient w.r.t. predicted flow); sign(0) is taken as 0.
    """
    p = _stack(pred, channels=2)
    g = _stack(gt, channels=2)
    occ = _stack(gt_occ)
    _check_same_shape(p, g, occ)
    w = schedule.as_array()
    if w.shape[0] != p.shape[0]:
        raise ShapeMismatch("schedule length does not match waypoint count")
    diff = p - g
    mask = occ[..., None]
    loss = float(np.einsum("t,thwc->", w, np.abs(diff) * mask))
    grad = w[:, None, None, None] * np.sign(diff) * mask
    return loss, grad


def _warp_forward(occ: np.ndarray, flow: np.ndarray):
    """Bilinear backward warp with the cache needed for its adjoint."""
    H, W = occ.shape
    rows, cols = np.meshgrid(np.arange(H, dtype=np.float64),
                             np.arange(W, dtype=np.float64), indexing="ij")
    src_r = rows + flow[:, :, 1]
    src_c = cols + flow[:, :, 0]
    r0 = np.floor(src_r).astype(np.int64)
    c0 = np.floor(src_c).astype(np.int64)
    fr = src_r - r0
    fc = src_c - c0

    vals, valids, idx = [], [], []
    for dr, dc in ((0, 0), (0, 1), (1, 0), (1, 1)):
        r, c = r0 + dr, c0 + dc
        valid = (r >= 0) & (r < H) & (c >= 0) & (c < W)
        rv = np.where(valid, r, 0)
        cv = np.where(valid, c, 0)
        vals.append(occ[rv, cv] * valid)
        valids.append(valid)
        idx.append((rv, cv))
    w00 = (1 - fr) * (1 - fc)
    w01 = (1 - fr) * fc
    w10 = fr * (1 - fc)
    w11 = fr * fc
    out = w00 * vals[0] + w01 * vals[1] + w10 * vals[2] + w11 * vals[3]
    cache = (fr, fc, vals, valids, idx, (H, W))
    return out, cache


def _warp_backward(g_out: np.ndarray, cache):
    """Adjoint of :func:`_warp_forward`: gradients w.r.t. the input
    occupancy (scatter of bilinear weights) and the flow channels."""
    fr, fc, vals, valids, idx, (H, W) = cache
    v00, v01, v10, v11 = vals
    weights = ((1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc)

    g_occ = np.zeros((H, W))
    for w, valid, (rv, cv) in zip(weights, valids, idx):
        np.add.at(g_occ, (rv, cv), g_out * w * valid)

    d_dc = (1 - fr) * (v01 - v00) + fr * (v11 - v10)   # d out / d src_col
    d_dr = (1 - fc) * (v10 - v00) + fc * (v11 - v01)   # d out / d src_row
    g_flow = np.stack([g_out * d_dc, g_out * d_dr], axis=2)
    return g_occ, g_flow


def trace_loss(pred_obs_logits, pred_occl_logits, pred_flow, current_occ,
               gt_all_occ) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Flow-trace loss: recursively warp the current occupancy through the
    predicted flows and score the product with predicted occupancy against
    combined ground-truth occupancy.

    Returns (loss, grad_observed_logits, grad_occluded_logits, grad_flow);
    gradients are propagated through the product, the occupancy clamp and
    the whole warp chain (bilinear sampling is piecewise-differentiable).
    """
    z_obs = _stack(pred_obs_logits)
    z_occl = _stack(pred_occl_logits)
    flow = _stack(pred_flow, channels=2)
    occ0 = current_occ.values if isinstance(current_occ, OccupancyGrid) \
        else np.asarray(current_occ, dtype=np.float64)
    y = _stack(gt_all_occ)
    _check_same_shape(z_obs, z_occl, flow, y)
    T = z_obs.shape[0]
    if occ0.shape != z_obs.shape[1:]:
        raise ShapeMismatch("current occupancy shape mismatch")

    # forward pass, keeping every intermediate needed by the adjoint
    s_obs = sigmoid(z_obs)
    s_occl = sigmoid(z_occl)
    raw_sum = s_obs + s_occl
    p_occ = np.minimum(raw_sum, 1.0)              # combined predicted occupancy

    warped = [occ0]
    caches = []
    for t in range(T):
        w_t, cache = _warp_forward(warped[-1], flow[t])
        warped.append(w_t)
        caches.append(cache)
    W_arr = np.stack(warped[1:])                  # (T, H, W)

    prod = W_arr * p_occ
    pc = np.clip(prod, _CE_EPS, 1.0 - _CE_EPS)
    loss = float(np.sum(-y * np.log(pc) - (1.0 - y) * np.log1p(-pc)))

    # backward pass
    d_pc = (pc - y) / (pc * (1.0 - pc))
    in_range = (prod > _CE_EPS) & (prod < 1.0 - _CE_EPS)
    d_prod = d_pc * in_range

    d_p_occ = d_prod * W_arr
    unclamped = raw_sum < 1.0
    g_obs = d_p_occ * unclamped * s_obs * (1.0 - s_obs)
    g_occl = d_p_occ * unclamped * s_occl * (1.0 - s_occl)

    g_flow = np.zeros_like(flow)
    g_w = np.zeros_like(occ0)                     # gradient w.r.t. W_t
    for t in range(T - 1, -1, -1):
        g_w = g_w + d_prod[t] * p_occ[t]
        g_w, g_flow[t] = _warp_backward(g_w, caches[t])
    return loss, g_obs, g_occl, g_flow


def combined_loss(pred: PredictionSet, targets: WaypointTargets,
                  current_occ: OccupancyGrid, weights: LossWeights,
                  schedule: WeightSchedule):
    """Full objective: normalized weighted sum of the three components.

    Returns (LossValue, grads) where ``grads`` maps "observed_logits",
    "occluded_logits" and "flow" to gradients of the *total* loss.
    """
    z_obs = pred.observed_array()
    z_occl = pred.occluded_array()
    flow = pred.flow_array()
    gt_obs = _stack(targets.observed_occ)
    gt_occl = _stack(targets.occluded_occ)
    gt_flow = _stack(targets.flow, channels=2)
    gt_all = np.minimum(gt_obs + gt_occl, 1.0)

    l_obs, g_obs = occupancy_loss(z_obs, gt_obs)
    l_occl, g_occl = occupancy_loss(z_occl, gt_occl)
    l_occ = l_obs + l_occl
    l_flow, g_flow = flow_loss(flow, gt_flow, gt_all, schedule)
    l_trace, gt_obs_tr, gt_occl_tr, g_flow_tr = trace_loss(
        z_obs, z_occl, flow, current_occ, gt_all)

    T, H, W = z_obs.shape
    norm = 1.0 / (H * W * T)
    total = norm * (weights.lambda_o * l_occ + weights.lambda_f * l_flow +
                    weights.lambda_w * l_trace)
    grads = {
        "observed_logits": norm * (weights.lambda_o * g_obs +
                                   weights.lambda_w * gt_obs_tr),
        "occluded_logits": norm * (weights.lambda_o * g_occl +
                                   weights.lambda_w * gt_occl_tr),
        "flow": norm * (weights.lambda_f * g_flow +
                        weights.lambda_w * g_flow_tr),
    }
    return LossValue(total, l_occ, l_flow, l_trace), grads
