"""Scenario model: 91-timestep agent tracks, map geometry, JSON codec and
deterministic synthetic scene generation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import FreqError, MalformedScenario, ParseError
from .grids import GridSpec

N_TIMESTEPS = 91          # t-10 ... t+80 at 10 Hz
CURRENT_INDEX = 10        # index of the current timestep t
N_WAYPOINTS = 8           # one-second-spaced future targets
STEPS_PER_WAYPOINT = 10
FREQ_HZ = 10
MAX_AGENTS = 64

AGENT_CLASSES = ("vehicle", "pedestrian", "cyclist")
POLYLINE_TYPES = ("road_line", "lane_edge", "crosswalk")
LIGHT_STATES = ("red", "yellow", "green", "unknown")

DEFAULT_VEHICLE_LENGTH = 4.5
DEFAULT_VEHICLE_WIDTH = 2.0


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    vx: float
    vy: float
    heading: float
    valid: bool


@dataclass(frozen=True)
class AgentTrack:
    """One agent's 91-step state sequence plus box extent.

    States are stored as column arrays for vectorized rasterization;
    :meth:`state` reconstructs individual :class:`AgentState` entries.
    """

    id: str
    agent_class: str
    length: float
    width: float
    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    vx: np.ndarray = field(repr=False)
    vy: np.ndarray = field(repr=False)
    heading: np.ndarray = field(repr=False)
    valid: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.agent_class not in AGENT_CLASSES:
            raise MalformedScenario(f"unknown agent class {self.agent_class!r}")
        for name in ("x", "y", "vx", "vy", "heading", "valid"):
            a = np.asarray(getattr(self, name))
            if a.shape != (N_TIMESTEPS,):
                raise MalformedScenario(
                    f"agent {self.id!r}: field {name} has {a.shape[0] if a.ndim else 0} "
                    f"entries, expected {N_TIMESTEPS}")
            dtype = bool if name == "valid" else np.float64
            a = np.ascontiguousarray(a, dtype=dtype)
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        if self.valid.any():
            if not (self.length > 0 and self.width > 0):
                raise MalformedScenario(f"agent {self.id!r}: nonpositive box extent")
            numeric = np.stack([self.x, self.y, self.vx, self.vy, self.heading])
            if not np.all(np.isfinite(numeric[:, self.valid])):
                raise MalformedScenario(f"agent {self.id!r}: non-finite valid state")

    @classmethod
    def from_states(cls, id, agent_class, length, width, states) -> "AgentTrack":
        return cls(id, agent_class, length, width,
                   np.array([s.x for s in states]),
                   np.array([s.y for s in states]),
                   np.array([s.vx for s in states]),
                   np.array([s.vy for s in states]),
                   np.array([s.heading for s in states]),
                   np.array([s.valid for s in states]))

    def state(self, t: int) -> AgentState:
        return AgentState(float(self.x[t]), float(self.y[t]),
                          float(self.vx[t]), float(self.vy[t]),
                          float(self.heading[t]), bool(self.valid[t]))


@dataclass(frozen=True)
class Polyline:
    type: str
    points: np.ndarray  # (N, 2) world meters

    def __post_init__(self):
        if self.type not in POLYLINE_TYPES:
            raise MalformedScenario(f"unknown polyline type {self.type!r}")
        p = np.ascontiguousarray(self.points, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] < 2:
            raise MalformedScenario("polyline needs an (N>=2, 2) point array")
        if not np.all(np.isfinite(p)):
            raise MalformedScenario("polyline vertices must be finite")
        p.flags.writeable = False
        object.__setattr__(self, "points", p)


@dataclass(frozen=True)
class TrafficLight:
    x: float
    y: float
    states: tuple[str, ...]  # one entry per timestep

    def __post_init__(self):
        if len(self.states) != N_TIMESTEPS:
            raise MalformedScenario("traffic light needs 91 state entries")
        for s in self.states:
            if s not in LIGHT_STATES:
                raise MalformedScenario(f"unknown light state {s!r}")


@dataclass(frozen=True)
class Scenario:
    id: str
    agents: tuple[AgentTrack, ...]
    polylines: tuple[Polyline, ...] = ()
    traffic_lights: tuple[TrafficLight, ...] = ()
    grid_override: GridSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "polylines", tuple(self.polylines))
        object.__setattr__(self, "traffic_lights", tuple(self.traffic_lights))
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise MalformedScenario("agent ids must be unique")
        if len(self.agents) > MAX_AGENTS:
            raise MalformedScenario(
                f"scenario has {len(self.agents)} agents, max is {MAX_AGENTS}")

    def anchored_spec(self, height_cells: int = 256, width_cells: int = 256,
                      cell_size_m: float = 0.3125) -> GridSpec:
        """Grid spec for this scene: the explicit override if present, else a
        grid anchored at the first agent's current pose with its heading
        along the grid x axis."""
        if self.grid_override is not None:
            return self.grid_override
        origin, rotation = (0.0, 0.0), 0.0
        for a in self.agents:
            if a.valid[CURRENT_INDEX]:
                origin = (float(a.x[CURRENT_INDEX]), float(a.y[CURRENT_INDEX]))
                rotation = float(a.heading[CURRENT_INDEX])
                break
        return GridSpec(height_cells, width_cells, cell_size_m, origin, rotation)


# ---------------------------------------------------------------------------
# JSON codec

def _require(obj, key, path, typ=None):
    if key not in obj:
        raise ParseError(f"{path}: missing field {key!r}")
    v = obj[key]
    if typ is not None and not isinstance(v, typ):
        raise ParseError(f"{path}.{key}: expected {typ}, got {type(v).__name__}")
    return v


def _check_unknown(obj, allowed, path, strict):
    if strict:
        extra = set(obj) - set(allowed)
        if extra:
            raise ParseError(f"{path}: unknown fields {sorted(extra)}")


def _parse_grid_override(obj, path, strict):
    allowed = ("height_cells", "width_cells", "cell_size_m", "origin", "rotation_rad")
    _check_unknown(obj, allowed, path, strict)
    origin = obj.get("origin", [0.0, 0.0])
    if not (isinstance(origin, list) and len(origin) == 2):
        raise ParseError(f"{path}.origin: expected [x, y]")
    return GridSpec(int(obj.get("height_cells", 256)),
                    int(obj.get("width_cells", 256)),
                    float(obj.get("cell_size_m", 0.3125)),
                    (float(origin[0]), float(origin[1])),
                    float(obj.get("rotation_rad", 0.0)))


def parse_scenario(text, strict: bool = False) -> Scenario:
    """Parse one scenario from UTF-8 JSON text or bytes."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e}") from None
    if not isinstance(obj, dict):
        raise ParseError("top level must be a JSON object")
    _check_unknown(obj, ("id", "freq_hz", "grid", "agents", "map"), "$", strict)

    freq = _require(obj, "freq_hz", "$", (int, float))
    if freq != FREQ_HZ:
        raise FreqError(f"$.freq_hz: expected {FREQ_HZ}, got {freq}")
    sid = _require(obj, "id", "$", str)

    agents = []
    for i, a in enumerate(_require(obj, "agents", "$", list)):
        path = f"$.agents[{i}]"
        _check_unknown(a, ("id", "class", "length_m", "width_m", "states"),
                       path, strict)
        states_raw = _require(a, "states", path, list)
        if len(states_raw) != N_TIMESTEPS:
            raise MalformedScenario(
                f"{path}: {len(states_raw)} states, expected {N_TIMESTEPS}")
        states = []
        for j, s in enumerate(states_raw):
            spath = f"{path}.states[{j}]"
            _check_unknown(s, ("x", "y", "vx", "vy", "heading", "valid"),
                           spath, strict)
            states.append(AgentState(
                float(_require(s, "x", spath)), float(_require(s, "y", spath)),
                float(_require(s, "vx", spath)), float(_require(s, "vy", spath)),
                float(_require(s, "heading", spath)),
                bool(_require(s, "valid", spath))))
        agents.append(AgentTrack.from_states(
            _require(a, "id", path, str), _require(a, "class", path, str),
            float(_require(a, "length_m", path)),
            float(_require(a, "width_m", path)), states))

    polylines, lights = [], []
    map_obj = obj.get("map", {})
    _check_unknown(map_obj, ("polylines", "traffic_lights"), "$.map", strict)
    for i, pl in enumerate(map_obj.get("polylines", [])):
        path = f"$.map.polylines[{i}]"
        _check_unknown(pl, ("type", "points"), path, strict)
        polylines.append(Polyline(_require(pl, "type", path, str),
                                  np.asarray(_require(pl, "points", path, list),
                                             dtype=np.float64)))
    for i, tl in enumerate(map_obj.get("traffic_lights", [])):
        path = f"$.map.traffic_lights[{i}]"
        _check_unknown(tl, ("x", "y", "states"), path, strict)
        lights.append(TrafficLight(float(_require(tl, "x", path)),
                                   float(_require(tl, "y", path)),
                                   tuple(_require(tl, "states", path, list))))

    override = None
    if "grid" in obj:
        override = _parse_grid_override(obj["grid"], "$.grid", strict)
    return Scenario(sid, tuple(agents), tuple(polylines), tuple(lights), override)


def scenario_to_json(scenario: Scenario, indent=None) -> str:
    """Serialize a scenario to the JSON interchange format."""
    obj = {
        "id": scenario.id,
        "freq_hz": FREQ_HZ,
        "agents": [
            {
                "id": a.id,
                "class": a.agent_class,
                "length_m": a.length,
                "width_m": a.width,
                "states": [
                    {"x": float(a.x[t]), "y": float(a.y[t]),
                     "vx": float(a.vx[t]), "vy": float(a.vy[t]),
                     "heading": float(a.heading[t]), "valid": bool(a.valid[t])}
                    for t in range(N_TIMESTEPS)
                ],
            }
            for a in scenario.agents
        ],
        "map": {
            "polylines": [
                {"type": p.type, "points": p.points.tolist()}
                for p in scenario.polylines
            ],
            "traffic_lights": [
                {"x": tl.x, "y": tl.y, "states": list(tl.states)}
                for tl in scenario.traffic_lights
            ],
        },
    }
    if scenario.grid_override is not None:
        g = scenario.grid_override
        obj["grid"] = {"height_cells": g.height_cells, "width_cells": g.width_cells,
                       "cell_size_m": g.cell_size_m, "origin": list(g.origin),
                       "rotation_rad": g.rotation_rad}
    return json.dumps(obj, indent=indent)


# ---------------------------------------------------------------------------
# synthetic scenes

SYNTHETIC_KINDS = ("static", "linear", "turning", "appearing")


def make_synthetic_scenario(seed: int, kind: str, n_agents: int = 3,
                            speed: float = 3.125) -> Scenario:
    """Deterministic desk-scale scene of the requested kind.

    ``linear`` agents follow exact constant-velocity motion (agent 0 at
    ``speed`` along +x, others at jittered fractions of it), ``turning``
    agents follow exact constant-curvature arcs, ``appearing`` scenes hold
    one agent that is invalid until t+31.
    """
    if kind not in SYNTHETIC_KINDS:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    rng = np.random.default_rng(seed)
    t_rel = (np.arange(N_TIMESTEPS) - CURRENT_INDEX) / FREQ_HZ  # seconds

    agents = []
    for i in range(n_agents):
        lateral = 0.0 if i == 0 else float((4.0 + 3.0 * (i - 1)) *
                                           (1 if i % 2 else -1) +
                                           rng.uniform(-0.5, 0.5))
        valid = np.ones(N_TIMESTEPS, dtype=bool)
        if kind == "static":
            x = np.full(N_TIMESTEPS, 0.0)
            y = np.full(N_TIMESTEPS, lateral)
            vx = np.zeros(N_TIMESTEPS)
            vy = np.zeros(N_TIMESTEPS)
            heading = np.zeros(N_TIMESTEPS)
        elif kind in ("linear", "appearing"):
            s = speed if i == 0 else float(speed * rng.uniform(0.5, 1.0))
            x = s * t_rel
            y = np.full(N_TIMESTEPS, lateral)
            vx = np.full(N_TIMESTEPS, s)
            vy = np.zeros(N_TIMESTEPS)
            heading = np.zeros(N_TIMESTEPS)
            if kind == "appearing" and i == n_agents - 1 and n_agents > 1:
                # hidden until t+31 (index 41): occluded at the current step
                valid = np.arange(N_TIMESTEPS) >= CURRENT_INDEX + 31
        else:  # turning
            s = speed if i == 0 else float(speed * rng.uniform(0.5, 1.0))
            omega = float(rng.uniform(0.05, 0.12)) * (1 if i % 2 == 0 else -1)
            radius = s / omega
            theta = omega * t_rel
            x = radius * np.sin(theta)
            y = lateral + radius * (1.0 - np.cos(theta))
            vx = s * np.cos(theta)
            vy = s * np.sin(theta)
            heading = theta
        agents.append(AgentTrack(f"agent-{i}", "vehicle",
                                 DEFAULT_VEHICLE_LENGTH, DEFAULT_VEHICLE_WIDTH,
                                 x, y, vx, vy, heading, valid))
    return Scenario(f"{kind}-{seed}", tuple(agents))
