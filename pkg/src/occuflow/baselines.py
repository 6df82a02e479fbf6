"""Deterministic baseline predictors: persistence and constant velocity."""

from __future__ import annotations

import numpy as np

from .grids import FlowField, Grid
from .losses import PredictionSet
from .raster import InputFeatures, build_waypoint_targets
from .scenario import (AgentTrack, CURRENT_INDEX, FREQ_HZ, N_TIMESTEPS,
                       N_WAYPOINTS, Scenario)

# sigmoid(+-15) is within 1e-6 of {1, 0} while keeping cross-entropy finite
LOGIT_MAGNITUDE = 15.0

BASELINE_KINDS = ("persistence", "constant_velocity")


def _occ_to_logits(occ_values: np.ndarray) -> np.ndarray:
    return np.where(occ_values > 0.5, LOGIT_MAGNITUDE, -LOGIT_MAGNITUDE)


def persistence_predict(features: InputFeatures) -> PredictionSet:
    """Repeat the current occupancy at every waypoint with zero flow."""
    spec = features.spec
    current = features.history_occ[-1].values
    obs = np.repeat(_occ_to_logits(current)[None], N_WAYPOINTS, axis=0)
    occl = np.full_like(obs, -LOGIT_MAGNITUDE)
    flow = np.zeros(obs.shape + (2,))
    return PredictionSet.from_arrays(spec, obs, occl, flow)


def _extrapolate(agent: AgentTrack) -> AgentTrack | None:
    """Constant-velocity track from the agent's current state; heading fixed.

    Agents invalid at the current timestep are dropped (no state to read).
    """
    if not agent.valid[CURRENT_INDEX]:
        return None
    t_rel = (np.arange(N_TIMESTEPS) - CURRENT_INDEX) / FREQ_HZ
    x0, y0 = agent.x[CURRENT_INDEX], agent.y[CURRENT_INDEX]
    vx0, vy0 = agent.vx[CURRENT_INDEX], agent.vy[CURRENT_INDEX]
    return AgentTrack(
        agent.id, agent.agent_class, agent.length, agent.width,
        x0 + vx0 * t_rel, y0 + vy0 * t_rel,
        np.full(N_TIMESTEPS, vx0), np.full(N_TIMESTEPS, vy0),
        np.full(N_TIMESTEPS, agent.heading[CURRENT_INDEX]),
        np.ones(N_TIMESTEPS, dtype=bool))


def constant_velocity_predict(features: InputFeatures,
                              scenario: Scenario) -> PredictionSet:
    """Extrapolate every currently valid agent at its current velocity and
    rasterize occupancy and rigid-transform flow from the extrapolated
    poses.  The occluded channel stays empty."""
    spec = features.spec
    tracks = tuple(t for t in (_extrapolate(a) for a in scenario.agents)
                   if t is not None)
    extrapolated = Scenario(scenario.id + "#cv", tracks)
    targets = build_waypoint_targets(extrapolated, spec)
    obs = np.stack([_occ_to_logits(g.values) for g in targets.observed_occ])
    occl = np.full_like(obs, -LOGIT_MAGNITUDE)
    flow = np.stack([f.data for f in targets.flow])
    return PredictionSet.from_arrays(spec, obs, occl, flow)


def predict_baseline(kind: str, features: InputFeatures,
                     scenario: Scenario | None = None) -> PredictionSet:
    if kind == "persistence":
        return persistence_predict(features)
    if kind == "constant_velocity":
        if scenario is None:
            raise ValueError("constant_velocity baseline needs the scenario")
        return constant_velocity_predict(features, scenario)
    raise ValueError(f"unknown baseline {kind!r}")
