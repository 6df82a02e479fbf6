"""Binary grid container ("OFGR") reader/writer.

Layout (all little-endian):

* magic bytes ``OFGR``
* u16 format version (1)
* u32 H, W, C, T  (T = number of time slices, 1 for a single grid)
* u8 dtype code (0 = 32-bit float), 3 reserved bytes (zero)
* 5 x f64: cell_size_m, origin_x, origin_y, rotation_rad, padding (0.0)
* T * H * W * C f32 values, row-major, channel-minor
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .grids import FlowField, Grid, GridSpec, OccupancyGrid

MAGIC = b"OFGR"
VERSION = 1
_HEADER = struct.Struct("<4sH4I B3x 5d")


class OfgrError(ValueError):
    """Malformed OFGR container."""


def write_ofgr(path, grids) -> None:
    """Write one grid or a sequence of same-spec grids as one container."""
    if isinstance(grids, Grid):
        grids = [grids]
    if not grids:
        raise OfgrError("cannot write an empty container")
    spec = grids[0].spec
    channels = grids[0].channels
    for g in grids[1:]:
        if g.spec != spec or g.channels != channels:
            raise OfgrError("all grids in a container must share spec and channels")
    header = _HEADER.pack(
        MAGIC, VERSION,
        spec.height_cells, spec.width_cells, channels, len(grids),
        0,
        spec.cell_size_m, spec.origin[0], spec.origin[1], spec.rotation_rad, 0.0)
    payload = np.stack([g.data for g in grids]).astype("<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_ofgr(path) -> tuple[GridSpec, np.ndarray]:
    """Read a container; returns (spec, float64 array of shape (T, H, W, C))."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise OfgrError(f"{path}: truncated header")
    (magic, version, h, w, c, t, dtype_code,
     cell, ox, oy, rot, _pad) = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise OfgrError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise OfgrError(f"{path}: unsupported version {version}")
    if dtype_code != 0:
        raise OfgrError(f"{path}: unsupported dtype code {dtype_code}")
    expected = _HEADER.size + 4 * t * h * w * c
    if len(raw) != expected:
        raise OfgrError(f"{path}: expected {expected} bytes, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    data = data.reshape(t, h, w, c).astype(np.float64)
    spec = GridSpec(h, w, cell, (ox, oy), rot)
    return spec, data


def read_grids(path, kind: str = "grid") -> list[Grid]:
    """Read a container as a list of typed grids.

    ``kind`` selects the container type: "grid", "occupancy" or "flow".
    """
    spec, data = read_ofgr(path)
    cls = {"grid": Grid, "occupancy": OccupancyGrid, "flow": FlowField}[kind]
    return [cls(spec, data[i]) for i in range(data.shape[0])]
