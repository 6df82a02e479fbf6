"""Geo-referenced BEV grid containers, coordinate transforms and flow warping.

Conventions used throughout the toolkit:

* ``data`` arrays are row-major ``(H, W, C)``; row index is the grid y axis,
  column index the grid x axis.
* A ``FlowField`` stores per-cell backward displacements in *cells per
  waypoint interval*: channel 0 is ``dx`` (column displacement), channel 1
  is ``dy`` (row displacement).  Vectors point back in time.
* World <-> grid transforms are affine; ``rotation_rad`` is the heading of
  the grid x axis in the world frame and the grid is centered on ``origin``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SpecMismatch


@dataclass(frozen=True)
class GridSpec:
    """Geometry of a BEV raster: size, resolution and world placement."""

    height_cells: int = 256
    width_cells: int = 256
    cell_size_m: float = 0.3125
    origin: tuple[float, float] = (0.0, 0.0)
    rotation_rad: float = 0.0

    def __post_init__(self):
        if self.height_cells <= 0 or self.width_cells <= 0:
            raise ValueError("grid dimensions must be positive")
        if self.cell_size_m <= 0:
            raise ValueError("cell_size_m must be positive")

    @property
    def extent_m(self) -> tuple[float, float]:
        return (self.height_cells * self.cell_size_m,
                self.width_cells * self.cell_size_m)


def _as_readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Grid:
    """Immutable H x W x C raster tied to a GridSpec."""

    spec: GridSpec
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim == 2:
            d = d[:, :, None]
        if d.shape[:2] != (self.spec.height_cells, self.spec.width_cells):
            raise ValueError(
                f"data shape {d.shape} does not match spec "
                f"{self.spec.height_cells}x{self.spec.width_cells}")
        if not np.all(np.isfinite(d)):
            raise ValueError("grid data must be finite")
        object.__setattr__(self, "data", _as_readonly(d))

    @property
    def channels(self) -> int:
        return self.data.shape[2]


class OccupancyGrid(Grid):
    """Single-channel grid with values in [0, 1]."""

    def __post_init__(self):
        super().__post_init__()
        if self.channels != 1:
            raise ValueError("OccupancyGrid must have exactly 1 channel")
        if self.data.min() < -1e-12 or self.data.max() > 1 + 1e-12:
            raise ValueError("occupancy values must lie in [0, 1]")

    @property
    def values(self) -> np.ndarray:
        """(H, W) view of the single channel."""
        return self.data[:, :, 0]


class FlowField(Grid):
    """Two-channel backward flow; displacements clamped to half the grid."""

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim == 3 and d.shape[2] == 2:
            half_w = self.spec.width_cells / 2.0
            half_h = self.spec.height_cells / 2.0
            d = np.stack([np.clip(d[:, :, 0], -half_w, half_w),
                          np.clip(d[:, :, 1], -half_h, half_h)], axis=2)
            object.__setattr__(self, "data", d)
        super().__post_init__()
        if self.channels != 2:
            raise ValueError("FlowField must have exactly 2 channels")

    @property
    def dx(self) -> np.ndarray:
        return self.data[:, :, 0]

    @property
    def dy(self) -> np.ndarray:
        return self.data[:, :, 1]


def zeros_like_occupancy(spec: GridSpec) -> OccupancyGrid:
    return OccupancyGrid(spec, np.zeros((spec.height_cells, spec.width_cells, 1)))


def zero_flow(spec: GridSpec) -> FlowField:
    return FlowField(spec, np.zeros((spec.height_cells, spec.width_cells, 2)))


# ---------------------------------------------------------------------------
# coordinate transforms

def world_to_grid(p, spec: GridSpec):
    """Map world point(s) (x, y) in meters to continuous (row, col) cells.

    ``p`` is a pair or an array whose last axis is (x, y).  Cell (0, 0) is
    the top-left cell; the grid center maps to ((H-1)/2, (W-1)/2).
    Out-of-grid points are returned unclamped.
    """
    p = np.asarray(p, dtype=np.float64)
    dx = p[..., 0] - spec.origin[0]
    dy = p[..., 1] - spec.origin[1]
    c, s = np.cos(spec.rotation_rad), np.sin(spec.rotation_rad)
    u = c * dx + s * dy            # along grid x (columns)
    v = -s * dx + c * dy           # along grid y (rows)
    col = u / spec.cell_size_m + (spec.width_cells - 1) / 2.0
    row = v / spec.cell_size_m + (spec.height_cells - 1) / 2.0
    return np.stack([row, col], axis=-1) if p.ndim > 1 else (float(row), float(col))


def grid_to_world(rc, spec: GridSpec):
    """Inverse of :func:`world_to_grid`; maps (row, col) to world (x, y)."""
    rc = np.asarray(rc, dtype=np.float64)
    v = (rc[..., 0] - (spec.height_cells - 1) / 2.0) * spec.cell_size_m
    u = (rc[..., 1] - (spec.width_cells - 1) / 2.0) * spec.cell_size_m
    c, s = np.cos(spec.rotation_rad), np.sin(spec.rotation_rad)
    x = c * u - s * v + spec.origin[0]
    y = s * u + c * v + spec.origin[1]
    return np.stack([x, y], axis=-1) if rc.ndim > 1 else (float(x), float(y))


def cell_centers_world(spec: GridSpec) -> np.ndarray:
    """(H, W, 2) world coordinates of every cell center."""
    rows, cols = np.meshgrid(np.arange(spec.height_cells),
                             np.arange(spec.width_cells), indexing="ij")
    rc = np.stack([rows, cols], axis=-1).astype(np.float64)
    return grid_to_world(rc, spec)


# ---------------------------------------------------------------------------
# sampling and warping

def bilinear_sample_array(data: np.ndarray, rows: np.ndarray,
                          cols: np.ndarray) -> np.ndarray:
    """Sample (H, W, C) data at continuous (row, col) positions.

    Coordinates outside [0, H-1] x [0, W-1] contribute zero.  Returns an
    array of shape rows.shape + (C,).
    """
    H, W, C = data.shape
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    fr = rows - r0
    fc = cols - c0

    out = np.zeros(rows.shape + (C,), dtype=np.float64)
    for dr, dc, w in ((0, 0, (1 - fr) * (1 - fc)),
                      (0, 1, (1 - fr) * fc),
                      (1, 0, fr * (1 - fc)),
                      (1, 1, fr * fc)):
        r = r0 + dr
        c = c0 + dc
        valid = (r >= 0) & (r < H) & (c >= 0) & (c < W)
        rv = np.where(valid, r, 0)
        cv = np.where(valid, c, 0)
        out += (w * valid)[..., None] * data[rv, cv, :]
    return out


def bilinear_sample(g: Grid, rc) -> np.ndarray:
    """Per-channel bilinear interpolation at continuous (row, col)."""
    rc = np.asarray(rc, dtype=np.float64)
    return bilinear_sample_array(g.data, rc[..., 0], rc[..., 1])


def nearest_sample_array(data: np.ndarray, rows: np.ndarray,
                         cols: np.ndarray) -> np.ndarray:
    """Nearest-neighbor variant of :func:`bilinear_sample_array`."""
    H, W, C = data.shape
    r = np.rint(np.asarray(rows, dtype=np.float64)).astype(np.int64)
    c = np.rint(np.asarray(cols, dtype=np.float64)).astype(np.int64)
    valid = (r >= 0) & (r < H) & (c >= 0) & (c < W)
    rv = np.where(valid, r, 0)
    cv = np.where(valid, c, 0)
    return valid[..., None] * data[rv, cv, :]


def warp_array(occ: np.ndarray, flow: np.ndarray,
               method: str = "bilinear") -> np.ndarray:
    """Array-level backward warp: out(r, c) = occ(r + dy(r,c), c + dx(r,c)).

    ``occ`` is (H, W), ``flow`` is (H, W, 2) with (dx, dy) channels.
    """
    H, W = occ.shape
    rows, cols = np.meshgrid(np.arange(H, dtype=np.float64),
                             np.arange(W, dtype=np.float64), indexing="ij")
    src_r = rows + flow[:, :, 1]
    src_c = cols + flow[:, :, 0]
    sample = bilinear_sample_array if method == "bilinear" else nearest_sample_array
    return sample(occ[:, :, None], src_r, src_c)[:, :, 0]


def warp(occ_prev: OccupancyGrid, flow: FlowField,
         method: str = "bilinear") -> OccupancyGrid:
    """Transport occupancy along a backward flow field.

    Each output cell fetches the value at its earlier location; zero
    padding outside the grid.  Output values stay in [0, 1].
    """
    if occ_prev.spec != flow.spec:
        raise SpecMismatch("occupancy and flow grids have different specs")
    out = warp_array(occ_prev.values, flow.data, method=method)
    return OccupancyGrid(occ_prev.spec, np.clip(out, 0.0, 1.0))


def combine_occupancy(obs: OccupancyGrid, occ: OccupancyGrid) -> OccupancyGrid:
    """Per-cell min(obs + occ, 1): all-agents occupancy from the two channels."""
    if obs.spec != occ.spec:
        raise SpecMismatch("occupancy grids have different specs")
    return OccupancyGrid(obs.spec, np.minimum(obs.data + occ.data, 1.0))
