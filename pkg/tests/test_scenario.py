"""Scenario model, JSON codec and synthetic scene generation."""

import json

import numpy as np
import pytest

from occuflow.errors import (FreqError, MalformedScenario, ParseError)
from occuflow.grids import GridSpec
from occuflow.scenario import (AGENT_CLASSES, CURRENT_INDEX, N_TIMESTEPS,
                               AgentState, AgentTrack, Scenario,
                               make_synthetic_scenario, parse_scenario,
                               scenario_to_json)


def minimal_scenario_dict():
    state = {"x": 0.0, "y": 0.0, "vx": 1.0, "vy": 0.0,
             "heading": 0.0, "valid": True}
    return {
        "id": "scene-1",
        "freq_hz": 10,
        "agents": [{"id": "a", "class": "vehicle", "length_m": 4.5,
                    "width_m": 2.0,
                    "states": [dict(state) for _ in range(N_TIMESTEPS)]}],
    }


class TestParse:
    def test_minimal_round_trip(self):
        sc = parse_scenario(json.dumps(minimal_scenario_dict()))
        assert sc.id == "scene-1"
        assert len(sc.agents) == 1
        assert sc.agents[0].valid.all()

    def test_full_round_trip_preserves_everything(self):
        original = make_synthetic_scenario(4, "turning", n_agents=3)
        back = parse_scenario(scenario_to_json(original))
        assert back.id == original.id
        for a, b in zip(original.agents, back.agents):
            assert a.id == b.id
            assert np.allclose(a.x, b.x, atol=0)
            assert np.allclose(a.heading, b.heading, atol=0)
            assert np.array_equal(a.valid, b.valid)

    def test_bytes_input(self):
        sc = parse_scenario(json.dumps(minimal_scenario_dict()).encode())
        assert sc.id == "scene-1"

    def test_invalid_json(self):
        with pytest.raises(ParseError):
            parse_scenario("{not json")

    def test_non_object_top_level(self):
        with pytest.raises(ParseError):
            parse_scenario("[1, 2, 3]")

    def test_wrong_frequency(self):
        obj = minimal_scenario_dict()
        obj["freq_hz"] = 20
        with pytest.raises(FreqError):
            parse_scenario(json.dumps(obj))

    def test_missing_field_names_path(self):
        obj = minimal_scenario_dict()
        del obj["agents"][0]["states"][5]["vx"]
        with pytest.raises(ParseError, match=r"states\[5\]"):
            parse_scenario(json.dumps(obj))

    def test_wrong_state_count(self):
        obj = minimal_scenario_dict()
        obj["agents"][0]["states"] = obj["agents"][0]["states"][:90]
        with pytest.raises(MalformedScenario):
            parse_scenario(json.dumps(obj))

    def test_unknown_field_ignored_by_default(self):
        obj = minimal_scenario_dict()
        obj["extra"] = 1
        parse_scenario(json.dumps(obj))

    def test_unknown_field_rejected_in_strict_mode(self):
        obj = minimal_scenario_dict()
        obj["extra"] = 1
        with pytest.raises(ParseError, match="extra"):
            parse_scenario(json.dumps(obj), strict=True)

    def test_grid_override_parsed(self):
        obj = minimal_scenario_dict()
        obj["grid"] = {"height_cells": 32, "width_cells": 16,
                       "cell_size_m": 0.25, "origin": [1.0, 2.0],
                       "rotation_rad": 0.5}
        sc = parse_scenario(json.dumps(obj))
        assert sc.grid_override == GridSpec(32, 16, 0.25, (1.0, 2.0), 0.5)
        assert sc.anchored_spec() == sc.grid_override


class TestTracks:
    def test_unknown_class_rejected(self):
        with pytest.raises(MalformedScenario):
            AgentTrack("a", "boat", 4.0, 2.0, *([np.zeros(N_TIMESTEPS)] * 5),
                       np.ones(N_TIMESTEPS, dtype=bool))

    def test_wrong_length_rejected(self):
        with pytest.raises(MalformedScenario):
            AgentTrack("a", "vehicle", 4.0, 2.0, *([np.zeros(90)] * 5),
                       np.ones(90, dtype=bool))

    def test_nonfinite_valid_state_rejected(self):
        x = np.zeros(N_TIMESTEPS)
        x[0] = np.nan
        with pytest.raises(MalformedScenario):
            AgentTrack("a", "vehicle", 4.0, 2.0, x,
                       *([np.zeros(N_TIMESTEPS)] * 4),
                       np.ones(N_TIMESTEPS, dtype=bool))

    def test_state_accessor(self):
        sc = make_synthetic_scenario(0, "linear")
        s = sc.agents[0].state(CURRENT_INDEX)
        assert isinstance(s, AgentState)
        assert s.valid
        assert s.x == sc.agents[0].x[CURRENT_INDEX]

    def test_duplicate_agent_ids_rejected(self):
        a = make_synthetic_scenario(0, "linear", n_agents=1).agents[0]
        with pytest.raises(MalformedScenario):
            Scenario("s", (a, a))


class TestAnchoredSpec:
    def test_anchor_at_first_valid_agent(self):
        sc = make_synthetic_scenario(0, "linear", n_agents=2)
        spec = sc.anchored_spec(64, 64)
        a0 = sc.agents[0]
        assert spec.origin == (a0.x[CURRENT_INDEX], a0.y[CURRENT_INDEX])
        assert spec.rotation_rad == a0.heading[CURRENT_INDEX]

    def test_skips_currently_invalid_agents(self):
        valid = np.zeros(N_TIMESTEPS, dtype=bool)
        valid[40:] = True
        ghost = AgentTrack("ghost", "vehicle", 4.0, 2.0,
                           np.full(N_TIMESTEPS, 9.0), np.zeros(N_TIMESTEPS),
                           np.zeros(N_TIMESTEPS), np.zeros(N_TIMESTEPS),
                           np.zeros(N_TIMESTEPS), valid)
        solid = make_synthetic_scenario(0, "linear", n_agents=1).agents[0]
        sc = Scenario("s", (ghost, solid))
        spec = sc.anchored_spec(32, 32)
        assert spec.origin == (solid.x[CURRENT_INDEX], solid.y[CURRENT_INDEX])


class TestSynthetic:
    def test_deterministic(self):
        a = scenario_to_json(make_synthetic_scenario(7, "turning"))
        b = scenario_to_json(make_synthetic_scenario(7, "turning"))
        assert a == b

    def test_kinds(self):
        static = make_synthetic_scenario(0, "static")
        assert np.all(static.agents[0].x == 0.0)
        linear = make_synthetic_scenario(0, "linear", speed=2.0)
        assert np.allclose(np.diff(linear.agents[0].x), 0.2)
        appearing = make_synthetic_scenario(0, "appearing")
        assert not appearing.agents[-1].valid[CURRENT_INDEX]
        assert appearing.agents[-1].valid[-1]

    def test_turning_is_exact_arc(self):
        sc = make_synthetic_scenario(5, "turning", n_agents=1, speed=2.0)
        a = sc.agents[0]
        # speed is constant along the arc
        speeds = np.hypot(a.vx, a.vy)
        assert np.allclose(speeds, 2.0, atol=1e-12)
        # heading rate is constant
        rates = np.diff(a.heading)
        assert np.allclose(rates, rates[0], atol=1e-12)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            make_synthetic_scenario(0, "teleporting")

    def test_agent_classes_constant(self):
        assert AGENT_CLASSES == ("vehicle", "pedestrian", "cyclist")
