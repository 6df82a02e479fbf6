"""Scene rasterization: agent boxes -> occupancy, map -> channel raster,
waypoint ground truth with backward flow, and input-feature assembly."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import MalformedScenario
from .grids import (FlowField, Grid, GridSpec, OccupancyGrid,
                    cell_centers_world, world_to_grid)
from .scenario import (AGENT_CLASSES, CURRENT_INDEX, LIGHT_STATES, MAX_AGENTS,
                       N_TIMESTEPS, N_WAYPOINTS, POLYLINE_TYPES,
                       STEPS_PER_WAYPOINT, Scenario)

N_HISTORY_OCC = CURRENT_INDEX + 1   # t-10 ... t inclusive
N_HISTORY_FLOW = CURRENT_INDEX      # consecutive history frame pairs
MAP_CHANNELS = len(POLYLINE_TYPES) + len(LIGHT_STATES)


@dataclass(frozen=True)
class WaypointTargets:
    """Ground truth for the 8 waypoints: occupancy split by current-time
    visibility plus backward flow, all on one GridSpec."""

    observed_occ: tuple[OccupancyGrid, ...]
    occluded_occ: tuple[OccupancyGrid, ...]
    flow: tuple[FlowField, ...]

    @property
    def spec(self) -> GridSpec:
        return self.observed_occ[0].spec

    def all_occupancy(self, k: int) -> OccupancyGrid:
        """Combined observed+occluded occupancy at waypoint index k (0-based)."""
        from .grids import combine_occupancy
        return combine_occupancy(self.observed_occ[k], self.occluded_occ[k])


@dataclass(frozen=True)
class InputFeatures:
    """Model input X: history occupancy, map raster, history flow and the
    padded agent-state tensor, all sharing one GridSpec."""

    history_occ: tuple[OccupancyGrid, ...]     # 11 grids, t-10 first
    map_raster: Grid
    history_flow: tuple[FlowField, ...]        # 10 fields, oldest pair first
    agent_states: np.ndarray                   # (64, 11, 6): x,y,vx,vy,heading,class
    agent_valid: np.ndarray                    # (64, 11) bool

    @property
    def spec(self) -> GridSpec:
        return self.map_raster.spec

    def stacked_channels(self) -> np.ndarray:
        """(H, W, 11 + map_channels + 20) raster stack for conv models."""
        parts = [g.data for g in self.history_occ]
        parts.append(self.map_raster.data)
        parts.extend(f.data for f in self.history_flow)
        return np.concatenate(parts, axis=2)


@lru_cache(maxsize=32)
def _centers(spec: GridSpec) -> np.ndarray:
    c = cell_centers_world(spec)
    c.flags.writeable = False
    return c


def _check_timesteps(scenario: Scenario) -> None:
    for a in scenario.agents:
        if a.x.shape[0] != N_TIMESTEPS:
            raise MalformedScenario(
                f"agent {a.id!r} has {a.x.shape[0]} states, expected {N_TIMESTEPS}")


def _footprint_mask(agent, t: int, spec: GridSpec):
    """Boolean cell mask of the agent's oriented box at timestep t, together
    with the (row, col) index arrays of the cells inside.

    A cell is occupied iff its center lies inside the length x width box at
    the agent's pose (boundary inclusive).
    """
    cx, cy, theta = agent.x[t], agent.y[t], agent.heading[t]
    half_l, half_w = agent.length / 2.0, agent.width / 2.0
    c, s = np.cos(theta), np.sin(theta)
    # box corners in world, then grid, to bound the candidate cell range
    corners_local = np.array([[half_l, half_w], [half_l, -half_w],
                              [-half_l, -half_w], [-half_l, half_w]])
    rot = np.array([[c, -s], [s, c]])
    corners_world = corners_local @ rot.T + np.array([cx, cy])
    rc = world_to_grid(corners_world, spec)
    r_lo = max(int(np.floor(rc[:, 0].min())) - 1, 0)
    r_hi = min(int(np.ceil(rc[:, 0].max())) + 2, spec.height_cells)
    c_lo = max(int(np.floor(rc[:, 1].min())) - 1, 0)
    c_hi = min(int(np.ceil(rc[:, 1].max())) + 2, spec.width_cells)
    if r_lo >= r_hi or c_lo >= c_hi:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty

    centers = _centers(spec)[r_lo:r_hi, c_lo:c_hi]       # (h, w, 2) world
    px = centers[:, :, 0] - cx
    py = centers[:, :, 1] - cy
    local_x = c * px + s * py
    local_y = -s * px + c * py
    inside = (np.abs(local_x) <= half_l) & (np.abs(local_y) <= half_w)
    rr, cc = np.nonzero(inside)
    return rr + r_lo, cc + c_lo


def rasterize_occupancy(scenario: Scenario, timestep: int, spec: GridSpec,
                        classes=None) -> OccupancyGrid:
    """Binary occupancy of all valid, class-matching agents at a timestep."""
    if not 0 <= timestep < N_TIMESTEPS:
        raise ValueError(f"timestep {timestep} outside [0, {N_TIMESTEPS - 1}]")
    _check_timesteps(scenario)
    occ = np.zeros((spec.height_cells, spec.width_cells))
    for agent in scenario.agents:
        if not agent.valid[timestep]:
            continue
        if classes is not None and agent.agent_class not in classes:
            continue
        rr, cc = _footprint_mask(agent, timestep, spec)
        occ[rr, cc] = 1.0
    return OccupancyGrid(spec, occ)


def rasterize_map(scenario: Scenario, spec: GridSpec,
                  timestep: int = CURRENT_INDEX) -> Grid:
    """Multi-channel map raster: one channel per polyline type, then one per
    traffic-light state (light states sampled at ``timestep``).

    Polylines mark every cell whose center is within cell_size_m / 2 of any
    segment; traffic lights mark the single cell containing the point.
    """
    H, W = spec.height_cells, spec.width_cells
    data = np.zeros((H, W, MAP_CHANNELS))
    centers = _centers(spec)
    radius = spec.cell_size_m / 2.0

    for pl in scenario.polylines:
        ch = POLYLINE_TYPES.index(pl.type)
        for a, b in zip(pl.points[:-1], pl.points[1:]):
            # candidate window: segment bbox in grid coords, padded one cell
            rc = world_to_grid(np.stack([a, b]), spec)
            r_lo = max(int(np.floor(rc[:, 0].min())) - 1, 0)
            r_hi = min(int(np.ceil(rc[:, 0].max())) + 2, H)
            c_lo = max(int(np.floor(rc[:, 1].min())) - 1, 0)
            c_hi = min(int(np.ceil(rc[:, 1].max())) + 2, W)
            if r_lo >= r_hi or c_lo >= c_hi:
                continue
            p = centers[r_lo:r_hi, c_lo:c_hi]
            ab = b - a
            denom = float(ab @ ab)
            if denom == 0.0:
                nearest = a
                d2 = np.sum((p - a) ** 2, axis=2)
            else:
                t = np.clip(((p - a) @ ab) / denom, 0.0, 1.0)
                nearest = a + t[:, :, None] * ab
                d2 = np.sum((p - nearest) ** 2, axis=2)
            hit = d2 <= radius * radius
            data[r_lo:r_hi, c_lo:c_hi, ch][hit] = 1.0

    for tl in scenario.traffic_lights:
        row, col = world_to_grid((tl.x, tl.y), spec)
        r, c = int(np.rint(row)), int(np.rint(col))
        if 0 <= r < H and 0 <= c < W:
            ch = len(POLYLINE_TYPES) + LIGHT_STATES.index(tl.states[timestep])
            data[r, c, ch] = 1.0
    return Grid(spec, data)


def _rigid_flow_cells(agent, t_now: int, t_prev: int, rr, cc,
                      spec: GridSpec) -> np.ndarray:
    """Backward displacement, in cells, of the body points occupying cells
    (rr, cc) at t_now, relative to their location at t_prev.

    Maps each cell center through the inverse pose at t_now, forward through
    the pose at t_prev, and differences the grid coordinates.  Returns
    (n, 2) with (dx=dcol, dy=drow).
    """
    centers = _centers(spec)[rr, cc]                     # (n, 2) world
    cx, cy, th = agent.x[t_now], agent.y[t_now], agent.heading[t_now]
    px, py = centers[:, 0] - cx, centers[:, 1] - cy
    c, s = np.cos(th), np.sin(th)
    bx = c * px + s * py                                  # body frame
    by = -s * px + c * py
    cxp, cyp, thp = agent.x[t_prev], agent.y[t_prev], agent.heading[t_prev]
    cp, sp = np.cos(thp), np.sin(thp)
    prev_world = np.stack([cxp + cp * bx - sp * by,
                           cyp + sp * bx + cp * by], axis=1)
    rc_prev = world_to_grid(prev_world, spec)
    rc_now = world_to_grid(centers, spec)
    d = rc_prev - rc_now                                  # (n, 2) as (drow, dcol)
    return d[:, ::-1]                                     # -> (dx, dy)


def build_waypoint_targets(scenario: Scenario, spec: GridSpec,
                           classes=None) -> WaypointTargets:
    """Ground truth for the 8 waypoints at future steps t+10k.

    Agents valid at the current timestep contribute to the observed channel,
    all others to the occluded channel.  Backward flow is written only on
    occupied cells and only when the agent has a valid pose one waypoint
    earlier; flow units are cells per waypoint interval.
    """
    _check_timesteps(scenario)
    H, W = spec.height_cells, spec.width_cells
    observed, occluded, flows = [], [], []
    for k in range(1, N_WAYPOINTS + 1):
        t_now = CURRENT_INDEX + STEPS_PER_WAYPOINT * k
        t_prev = t_now - STEPS_PER_WAYPOINT
        obs = np.zeros((H, W))
        occl = np.zeros((H, W))
        flow = np.zeros((H, W, 2))
        for agent in scenario.agents:
            if not agent.valid[t_now]:
                continue
            if classes is not None and agent.agent_class not in classes:
                continue
            rr, cc = _footprint_mask(agent, t_now, spec)
            if rr.size == 0:
                continue
            target = obs if agent.valid[CURRENT_INDEX] else occl
            target[rr, cc] = 1.0
            if agent.valid[t_prev]:
                flow[rr, cc] = _rigid_flow_cells(agent, t_now, t_prev, rr, cc, spec)
            else:
                flow[rr, cc] = 0.0
        observed.append(OccupancyGrid(spec, obs))
        occluded.append(OccupancyGrid(spec, occl))
        flows.append(FlowField(spec, flow))
    return WaypointTargets(tuple(observed), tuple(occluded), tuple(flows))


def build_history_flow(scenario: Scenario, spec: GridSpec,
                       classes=None) -> tuple[FlowField, ...]:
    """Backward flow between consecutive history frames.

    Field i covers frame i+1 relative to frame i for i = 0..9 (frame 10 is
    the current timestep), in cells per 0.1 s.  Cells whose agent has no
    valid earlier pose carry (0, 0).
    """
    _check_timesteps(scenario)
    H, W = spec.height_cells, spec.width_cells
    fields = []
    for i in range(N_HISTORY_FLOW):
        t_now, t_prev = i + 1, i
        flow = np.zeros((H, W, 2))
        for agent in scenario.agents:
            if not agent.valid[t_now]:
                continue
            if classes is not None and agent.agent_class not in classes:
                continue
            rr, cc = _footprint_mask(agent, t_now, spec)
            if rr.size == 0:
                continue
            if agent.valid[t_prev]:
                flow[rr, cc] = _rigid_flow_cells(agent, t_now, t_prev, rr, cc, spec)
            else:
                flow[rr, cc] = 0.0
        fields.append(FlowField(spec, flow))
    return tuple(fields)


def assemble_input(scenario: Scenario, spec: GridSpec,
                   classes=None) -> InputFeatures:
    """Bundle history occupancy, map raster, history flow and the padded
    agent-state tensor into the model input."""
    history_occ = tuple(rasterize_occupancy(scenario, t, spec, classes)
                        for t in range(N_HISTORY_OCC))
    map_raster = rasterize_map(scenario, spec)
    history_flow = build_history_flow(scenario, spec, classes)

    states = np.zeros((MAX_AGENTS, N_HISTORY_OCC, 6))
    valid = np.zeros((MAX_AGENTS, N_HISTORY_OCC), dtype=bool)
    for i, agent in enumerate(scenario.agents[:MAX_AGENTS]):
        cls_code = float(AGENT_CLASSES.index(agent.agent_class))
        for t in range(N_HISTORY_OCC):
            states[i, t] = (agent.x[t], agent.y[t], agent.vx[t], agent.vy[t],
                            agent.heading[t], cls_code)
            valid[i, t] = agent.valid[t]
    states[~valid] = 0.0
    return InputFeatures(history_occ, map_raster, history_flow, states, valid)
