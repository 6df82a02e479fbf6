"""Evaluation suite: threshold-sweep PR-AUC, Soft-IoU (literal and union
denominators), end-point error and flow-grounded occupancy metrics, plus
the published reference-number registry used for report annotation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .grids import Grid, OccupancyGrid, combine_occupancy, warp_array
from .losses import PredictionSet, sigmoid, _stack
from .raster import WaypointTargets
from .scenario import N_WAYPOINTS

METRIC_KEYS = ("auc_observed", "soft_iou_observed", "auc_occluded",
               "soft_iou_occluded", "epe", "auc_flow_grounded",
               "soft_iou_flow_grounded")


@dataclass(frozen=True)
class ThresholdGrid:
    """Linearly spaced thresholds spanning [0, 1] inclusive."""

    count: int = 100

    def __post_init__(self):
        if self.count < 2:
            raise ValueError("need at least 2 thresholds")

    @property
    def values(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.count)


@dataclass(frozen=True)
class MetricsConfig:
    thresholds: ThresholdGrid = ThresholdGrid()
    iou_variant: str = "paper_literal"

    def __post_init__(self):
        if self.iou_variant not in ("paper_literal", "union"):
            raise ValueError(f"unknown Soft-IoU variant {self.iou_variant!r}")


def _flat(x) -> np.ndarray:
    if isinstance(x, Grid):
        return x.data.reshape(-1)
    if isinstance(x, np.ndarray):
        return x.reshape(-1)
    return np.concatenate([_flat(g) for g in x])


def pr_auc(pred, gt, thresholds: ThresholdGrid = ThresholdGrid()) -> float:
    """Area under the precision-recall curve over a threshold sweep.

    Cells with pred >= tau are classified positive; precision is taken as 1
    when nothing is predicted positive.  The recall-sorted points are
    anchored at (recall=0, first-point precision) and integrated with the
    trapezoid rule.  Returns 0 when the ground truth has no positive cells
    or the prediction is identically zero.
    """
    p = _flat(pred)
    g = _flat(gt)
    if p.shape != g.shape:
        raise ShapeMismatch(f"pred/gt size mismatch: {p.shape} vs {g.shape}")
    n_pos_total = int(np.count_nonzero(g > 0.5))
    if n_pos_total == 0:
        return 0.0
    if p.max() <= 0.0:
        # an all-zero prediction predicts nothing at any usable threshold
        return 0.0

    taus = thresholds.values
    pos_sorted = np.sort(p[g > 0.5])
    neg_sorted = np.sort(p[g <= 0.5])
    tp = n_pos_total - np.searchsorted(pos_sorted, taus, side="left")
    fp = neg_sorted.size - np.searchsorted(neg_sorted, taus, side="left")
    predicted = tp + fp
    precision = np.where(predicted > 0, tp / np.maximum(predicted, 1), 1.0)
    recall = tp / n_pos_total

    # tau descending -> recall non-decreasing; anchor at recall 0
    precision = precision[::-1]
    recall = recall[::-1]
    r_prev, p_prev = 0.0, precision[0]
    area = 0.0
    for r, pr in zip(recall, precision):
        area += (r - r_prev) * (pr + p_prev) / 2.0
        r_prev, p_prev = r, pr
    return float(area)


def soft_iou(pred, gt, variant: str = "paper_literal") -> float:
    """Soft intersection-over-union between probability grids.

    ``paper_literal`` uses the denominator sum(O + O^ + O*O^) exactly as
    printed in the source formula; ``union`` uses the standard soft union
    sum(O + O^ - O*O^).  Returns 0 when the ground truth is all zero.
    """
    p = _flat(pred)
    g = _flat(gt)
    if p.shape != g.shape:
        raise ShapeMismatch(f"pred/gt size mismatch: {p.shape} vs {g.shape}")
    if not np.any(g):
        return 0.0
    inter = float(np.sum(p * g))
    if variant == "paper_literal":
        denom = float(np.sum(g + p + p * g))
    elif variant == "union":
        denom = float(np.sum(g + p - p * g))
    else:
        raise ValueError(f"unknown Soft-IoU variant {variant!r}")
    return inter / denom if denom > 0 else 0.0


def _flow_pairs(pred, gt):
    p = _stack(pred, channels=2) if not isinstance(pred, np.ndarray) else pred
    g = _stack(gt, channels=2) if not isinstance(gt, np.ndarray) else gt
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if p.shape != g.shape:
        raise ShapeMismatch(f"flow shape mismatch: {p.shape} vs {g.shape}")
    return p.reshape(-1, 2), g.reshape(-1, 2)


def epe(pred, gt) -> float:
    """Mean L2 end-point error over cells with nonzero ground-truth flow."""
    p, g = _flow_pairs(pred, gt)
    support = np.any(g != 0.0, axis=1)
    if not support.any():
        return 0.0
    err = np.linalg.norm(p[support] - g[support], axis=1)
    return float(err.mean())


def flow_support_count(gt) -> int:
    """Number of cells carrying nonzero ground-truth flow."""
    g = _stack(gt, channels=2) if not isinstance(gt, np.ndarray) else gt
    return int(np.count_nonzero(np.any(np.asarray(g) != 0.0, axis=-1)))


def flow_grounded(pred: PredictionSet, targets: WaypointTargets,
                  current_occ: OccupancyGrid,
                  thresholds: ThresholdGrid = ThresholdGrid(),
                  variant: str = "paper_literal") -> list[tuple[float, float]]:
    """Flow-grounded occupancy metrics per waypoint.

    Warps the previous-waypoint ground-truth occupancy with the predicted
    flow, multiplies element-wise by the combined predicted occupancy, and
    scores the product against combined ground truth with PR-AUC and
    Soft-IoU.
    """
    if pred.spec != targets.spec or current_occ.spec != pred.spec:
        raise ShapeMismatch("prediction/target specs differ")
    p_obs = sigmoid(pred.observed_array())
    p_occl = sigmoid(pred.occluded_array())
    p_all = np.minimum(p_obs + p_occl, 1.0)
    flow = pred.flow_array()

    results = []
    o_prev = current_occ.values
    for k in range(N_WAYPOINTS):
        o_k = targets.all_occupancy(k).values
        warped = np.clip(warp_array(o_prev, flow[k]), 0.0, 1.0)
        score = warped * p_all[k]
        results.append((pr_auc(score, o_k, thresholds),
                        soft_iou(score, o_k, variant)))
        o_prev = o_k
    return results


@dataclass(frozen=True)
class MetricsReport:
    """Per-waypoint and averaged metric values for one prediction set."""

    per_waypoint: dict[str, tuple[float, ...]]
    mean: dict[str, float]
    flow_cells: tuple[int, ...]
    iou_variant: str
    waypoints: int = N_WAYPOINTS

    def to_dict(self) -> dict:
        return {
            "iou_variant": self.iou_variant,
            "waypoints": self.waypoints,
            "mean": {k: self.mean[k] for k in METRIC_KEYS},
            "per_waypoint": {k: list(self.per_waypoint[k]) for k in METRIC_KEYS},
            "flow_cells": list(self.flow_cells),
        }

    def to_json(self, indent=2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def to_text(self, reference: str | None = "OFMPNet-Swin-T",
                reference_split: str = "test") -> str:
        lines = [
            f"Soft-IoU variant: {self.iou_variant} "
            "(note: the literal denominator O + O^ + O*O^ differs from the "
            "standard soft union O + O^ - O*O^)",
            f"{'metric':<24}" + "".join(f"wp{k + 1:<2}      " for k in
                                        range(self.waypoints)) + "mean",
        ]
        for key in METRIC_KEYS:
            row = f"{key:<24}"
            row += "".join(f"{v:<10.4f}" for v in self.per_waypoint[key])
            row += f"{self.mean[key]:.4f}"
            lines.append(row)
        lines.append(f"flow-supported cells: {sum(self.flow_cells)}")
        if reference is not None:
            try:
                ref = lookup_reference(reference, reference_split)
            except KeyError:
                ref = None
            if ref is not None:
                lines.append(f"reference deltas vs {reference} ({reference_split}):")
                for key in METRIC_KEYS:
                    rv = getattr(ref, key)
                    lines.append(f"  {key:<24}{self.mean[key]:.4f} vs {rv:.4f} "
                                 f"(delta {self.mean[key] - rv:+.4f})")
        return "\n".join(lines)


def evaluate(pred: PredictionSet, targets: WaypointTargets,
             current_occ: OccupancyGrid,
             config: MetricsConfig = MetricsConfig()) -> MetricsReport:
    """All seven headline metrics per waypoint plus their arithmetic means."""
    if pred.spec != targets.spec:
        raise ShapeMismatch("prediction/target specs differ")
    p_obs = sigmoid(pred.observed_array())
    p_occl = sigmoid(pred.occluded_array())
    flow = pred.flow_array()
    thr = config.thresholds

    per = {k: [] for k in METRIC_KEYS}
    cells = []
    fg = flow_grounded(pred, targets, current_occ, thr, config.iou_variant)
    for k in range(N_WAYPOINTS):
        gt_obs = targets.observed_occ[k].values
        gt_occl = targets.occluded_occ[k].values
        gt_flow = targets.flow[k].data
        per["auc_observed"].append(pr_auc(p_obs[k], gt_obs, thr))
        per["soft_iou_observed"].append(soft_iou(p_obs[k], gt_obs,
                                                 config.iou_variant))
        per["auc_occluded"].append(pr_auc(p_occl[k], gt_occl, thr))
        per["soft_iou_occluded"].append(soft_iou(p_occl[k], gt_occl,
                                                 config.iou_variant))
        per["epe"].append(epe(flow[k], gt_flow))
        per["auc_flow_grounded"].append(fg[k][0])
        per["soft_iou_flow_grounded"].append(fg[k][1])
        cells.append(flow_support_count(gt_flow))

    per_waypoint = {k: tuple(v) for k, v in per.items()}
    mean = {k: math.fsum(v) / len(v) for k, v in per_waypoint.items()}
    return MetricsReport(per_waypoint, mean, tuple(cells), config.iou_variant)


# ---------------------------------------------------------------------------
# published reference numbers (benchmark tables), for report annotation only

@dataclass(frozen=True)
class ReferenceRow:
    method: str
    split: str
    auc_observed: float
    soft_iou_observed: float
    auc_occluded: float
    soft_iou_occluded: float
    epe: float
    auc_flow_grounded: float
    soft_iou_flow_grounded: float


_REFERENCE_ROWS = [
    # validation split
    ("OFMPNet-R2AttU", "val", 0.4726, 0.2028, 0.0330, 0.0047, 21.6873, 0.5182, 0.2220),
    ("OFMPNet-ULSTM", "val", 0.6559, 0.4007, 0.1227, 0.0261, 20.5876, 0.5768, 0.4280),
    ("OFMPNet-ULSTM-H", "val", 0.6572, 0.4097, 0.1180, 0.0221, 20.1906, 0.5835, 0.4312),
    ("OFMPNet-UNext-H", "val", 0.7119, 0.4257, 0.1451, 0.0309, 21.6873, 0.5691, 0.4243),
    ("OFMPNet-LSTM", "val", 0.7636, 0.4910, 0.1587, 0.0365, 3.6859, 0.7568, 0.5270),
    ("OFMPNet-CA-LSTM", "val", 0.7647, 0.4977, 0.1583, 0.0366, 3.6292, 0.7594, 0.5315),
    ("OFMPNet-Swin-T-WL", "val", 0.7618, 0.4820, 0.1540, 0.0357, 3.3987, 0.7685, 0.5240),
    ("OFMPNet-Swin-T", "val", 0.7714, 0.5047, 0.1613, 0.0413, 3.5425, 0.7621, 0.5410),
    # test split
    ("OFMPNet-ULSTM", "test", 0.6485, 0.3823, 0.1242, 0.0230, 20.0771, 0.5799, 0.4070),
    ("OFMPNet-R2AttU-T2", "test", 0.4759, 0.2006, 0.0403, 0.0065, 21.5577, 0.4846, 0.2008),
    ("OFMPNet-CA-LSTM", "test", 0.7627, 0.4950, 0.1633, 0.0374, 3.6686, 0.7590, 0.5284),
    ("OFMPNet-Swin-T-WL", "test", 0.7591, 0.4786, 0.1618, 0.0371, 3.4109, 0.7675, 0.5207),
    ("OFMPNet-Swin-T", "test", 0.7694, 0.5021, 0.1651, 0.0423, 3.5868, 0.7614, 0.5377),
]


def reference_table() -> list[ReferenceRow]:
    """Published benchmark rows used to annotate reports with deltas."""
    return [ReferenceRow(*row) for row in _REFERENCE_ROWS]


def lookup_reference(method: str, split: str = "val") -> ReferenceRow:
    for row in reference_table():
        if row.method == method and row.split == split:
            return row
    raise KeyError(f"no reference row for {method!r} on split {split!r}")
