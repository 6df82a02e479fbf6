"""Rasterization and waypoint ground truth, checked against independent
geometry oracles (shapely polygons and a closed-form rigid transform)."""

import numpy as np
import pytest
from shapely.geometry import LineString, Point, Polygon

from occuflow.grids import GridSpec, cell_centers_world
from occuflow.raster import (MAP_CHANNELS, N_HISTORY_FLOW, N_HISTORY_OCC,
                             assemble_input, build_history_flow,
                             build_waypoint_targets, rasterize_map,
                             rasterize_occupancy)
from occuflow.scenario import (CURRENT_INDEX, FREQ_HZ, N_TIMESTEPS,
                               N_WAYPOINTS, STEPS_PER_WAYPOINT, AgentTrack,
                               Polyline, Scenario, TrafficLight,
                               make_synthetic_scenario)


def box_polygon(cx, cy, heading, length, width):
    c, s = np.cos(heading), np.sin(heading)
    hl, hw = length / 2.0, width / 2.0
    corners = [(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)]
    return Polygon([(cx + c * x - s * y, cy + s * x + c * y)
                    for x, y in corners])


def constant_track(agent_id, x, y, heading=0.0, vx=0.0, vy=0.0,
                   length=4.5, width=2.0, valid=None):
    n = N_TIMESTEPS
    if valid is None:
        valid = np.ones(n, dtype=bool)
    return AgentTrack(agent_id, "vehicle", length, width,
                      np.full(n, float(x)), np.full(n, float(y)),
                      np.full(n, float(vx)), np.full(n, float(vy)),
                      np.full(n, float(heading)), valid)


def moving_track(agent_id, speed, heading=0.0, y=0.0, **kw):
    t_rel = (np.arange(N_TIMESTEPS) - CURRENT_INDEX) / FREQ_HZ
    c, s = np.cos(heading), np.sin(heading)
    n = N_TIMESTEPS
    return AgentTrack(agent_id, "vehicle", kw.get("length", 4.5),
                      kw.get("width", 2.0),
                      speed * c * t_rel, y + speed * s * t_rel,
                      np.full(n, speed * c), np.full(n, speed * s),
                      np.full(n, float(heading)),
                      kw.get("valid", np.ones(n, dtype=bool)))


class TestOccupancyRaster:
    @pytest.mark.parametrize("heading", [0.0, 0.35, -1.2, np.pi / 2])
    def test_matches_shapely_point_in_box(self, heading):
        spec = GridSpec(32, 32, 0.5)
        agent = constant_track("a", 1.3, -0.7, heading=heading,
                               length=5.0, width=2.2)
        occ = rasterize_occupancy(Scenario("s", (agent,)), CURRENT_INDEX, spec)
        poly = box_polygon(1.3, -0.7, heading, 5.0, 2.2)
        centers = cell_centers_world(spec)
        for r in range(32):
            for c in range(32):
                # boundary inclusive, hence covers() rather than contains()
                expected = 1.0 if poly.covers(Point(centers[r, c])) else 0.0
                assert occ.values[r, c] == expected, (r, c)

    def test_invalid_agent_not_drawn(self):
        spec = GridSpec(16, 16, 0.5)
        agent = constant_track("a", 0.0, 0.0,
                               valid=np.zeros(N_TIMESTEPS, dtype=bool))
        occ = rasterize_occupancy(Scenario("s", (agent,)), CURRENT_INDEX, spec)
        assert occ.values.sum() == 0.0

    def test_class_filter(self):
        spec = GridSpec(16, 16, 0.5)
        occ = rasterize_occupancy(Scenario("s", (constant_track("a", 0, 0),)),
                                  CURRENT_INDEX, spec, classes=("pedestrian",))
        assert occ.values.sum() == 0.0

    def test_off_grid_agent_is_empty(self):
        spec = GridSpec(16, 16, 0.5)
        occ = rasterize_occupancy(Scenario("s", (constant_track("a", 500, 500),)),
                                  CURRENT_INDEX, spec)
        assert occ.values.sum() == 0.0

    def test_timestep_bounds(self):
        spec = GridSpec(8, 8, 0.5)
        sc = Scenario("s", (constant_track("a", 0, 0),))
        with pytest.raises(ValueError):
            rasterize_occupancy(sc, N_TIMESTEPS, spec)
        with pytest.raises(ValueError):
            rasterize_occupancy(sc, -1, spec)

    def test_translation_covariance(self):
        # shifting the agent by exactly 3 cells shifts the raster by 3 cells
        spec = GridSpec(24, 24, 0.5)
        base = rasterize_occupancy(
            Scenario("s", (constant_track("a", 0.0, 0.0),)),
            CURRENT_INDEX, spec).values
        shifted = rasterize_occupancy(
            Scenario("s", (constant_track("a", 3 * 0.5, 0.0),)),
            CURRENT_INDEX, spec).values
        assert np.array_equal(shifted[:, 3:], base[:, :-3])


class TestMapRaster:
    def test_polyline_matches_shapely_distance(self):
        spec = GridSpec(24, 24, 0.5)
        pts = np.array([[-4.0, -3.0], [2.0, 1.0], [4.5, -2.0]])
        sc = Scenario("s", (constant_track("a", 100, 100),),
                      polylines=(Polyline("lane_edge", pts),))
        raster = rasterize_map(sc, spec)
        line = LineString(pts)
        centers = cell_centers_world(spec)
        ch = 1  # lane_edge channel
        for r in range(24):
            for c in range(24):
                expected = 1.0 if line.distance(Point(centers[r, c])) <= 0.25 \
                    else 0.0
                assert raster.data[r, c, ch] == expected, (r, c)

    def test_channel_count_and_separation(self):
        spec = GridSpec(16, 16, 0.5)
        sc = Scenario(
            "s", (constant_track("a", 100, 100),),
            polylines=(Polyline("road_line", np.array([[-2.0, 0.0], [2.0, 0.0]])),),
            traffic_lights=(TrafficLight(1.0, 1.0, ("green",) * N_TIMESTEPS),))
        raster = rasterize_map(sc, spec)
        assert raster.channels == MAP_CHANNELS == 7
        assert raster.data[:, :, 0].sum() > 0          # road_line
        assert raster.data[:, :, 1:3].sum() == 0.0     # other polyline types
        green = len(("road_line", "lane_edge", "crosswalk")) + 2
        assert raster.data[:, :, green].sum() == 1.0   # one light cell
        assert raster.data[:, :, 3:green].sum() == 0.0

    def test_light_state_follows_timestep(self):
        spec = GridSpec(16, 16, 0.5)
        states = ["red"] * N_TIMESTEPS
        states[20] = "yellow"
        sc = Scenario("s", (constant_track("a", 100, 100),),
                      traffic_lights=(TrafficLight(0.0, 0.0, tuple(states)),))
        at_current = rasterize_map(sc, spec, timestep=CURRENT_INDEX)
        at_20 = rasterize_map(sc, spec, timestep=20)
        assert at_current.data[:, :, 3].sum() == 1.0   # red channel
        assert at_20.data[:, :, 4].sum() == 1.0        # yellow channel


class TestWaypointTargets:
    def test_linear_flow_against_rigid_oracle(self):
        # 2 m/s along +x on 0.5 m cells: backward flow (-4, 0) everywhere
        spec = GridSpec(64, 64, 0.5)
        sc = Scenario("s", (moving_track("a", 2.0),))
        targets = build_waypoint_targets(sc, spec)
        for k in range(N_WAYPOINTS):
            occ = targets.observed_occ[k].values
            flow = targets.flow[k].data
            assert occ.sum() > 0
            assert np.allclose(flow[occ > 0.5, 0], -4.0, atol=1e-9)
            assert np.allclose(flow[occ > 0.5, 1], 0.0, atol=1e-9)
            assert np.array_equal(flow[occ <= 0.5],
                                  np.zeros_like(flow[occ <= 0.5]))

    def test_rotating_agent_flow_matches_pose_oracle(self):
        sc = make_synthetic_scenario(3, "turning", n_agents=1, speed=2.0)
        spec = sc.anchored_spec(48, 48, 0.5)
        targets = build_waypoint_targets(sc, spec)
        agent = sc.agents[0]
        from occuflow.grids import world_to_grid
        centers = cell_centers_world(spec)
        k = 4
        t_now = CURRENT_INDEX + STEPS_PER_WAYPOINT * k
        t_prev = t_now - STEPS_PER_WAYPOINT
        occ = targets.all_occupancy(k - 1).values
        flow = targets.flow[k - 1].data
        rr, cc = np.nonzero(occ > 0.5)
        assert rr.size > 0
        for r, c in zip(rr[:25], cc[:25]):
            # map the cell center into the body frame at t_now, out at t_prev
            w = centers[r, c]
            th = agent.heading[t_now]
            rot = np.array([[np.cos(th), -np.sin(th)],
                            [np.sin(th), np.cos(th)]])
            body = rot.T @ (w - np.array([agent.x[t_now], agent.y[t_now]]))
            thp = agent.heading[t_prev]
            rotp = np.array([[np.cos(thp), -np.sin(thp)],
                             [np.sin(thp), np.cos(thp)]])
            prev = rotp @ body + np.array([agent.x[t_prev], agent.y[t_prev]])
            r_now, c_now = world_to_grid(w, spec)
            r_prev, c_prev = world_to_grid(prev, spec)
            assert abs(flow[r, c, 0] - (c_prev - c_now)) < 1e-9
            assert abs(flow[r, c, 1] - (r_prev - r_now)) < 1e-9

    def test_observed_occluded_partition(self):
        sc = make_synthetic_scenario(1, "appearing", n_agents=3)
        spec = sc.anchored_spec(128, 128)
        targets = build_waypoint_targets(sc, spec)
        hidden = sc.agents[-1]
        assert not hidden.valid[CURRENT_INDEX]
        saw_occluded = False
        for k in range(N_WAYPOINTS):
            obs = targets.observed_occ[k].values
            occl = targets.occluded_occ[k].values
            assert np.all(obs * occl == 0.0)   # disjoint channels
            t_now = CURRENT_INDEX + STEPS_PER_WAYPOINT * (k + 1)
            if hidden.valid[t_now]:
                saw_occluded = occl.sum() > 0 or saw_occluded
        assert saw_occluded

    def test_flow_zero_without_earlier_pose(self):
        # valid only from the waypoint-3 step onward: first visible waypoint
        # has no valid pose one interval earlier, so its flow is zero
        t_first = CURRENT_INDEX + 3 * STEPS_PER_WAYPOINT
        valid = np.arange(N_TIMESTEPS) >= t_first
        sc = Scenario("s", (moving_track("a", 1.0, valid=valid),))
        spec = GridSpec(64, 64, 0.5)
        targets = build_waypoint_targets(sc, spec)
        occ3 = targets.all_occupancy(2).values
        assert occ3.sum() > 0
        assert np.all(targets.flow[2].data == 0.0)
        occ4 = targets.all_occupancy(3).values
        flow4 = targets.flow[3].data
        assert np.any(flow4[occ4 > 0.5] != 0.0)

    def test_flow_only_on_occupied_cells(self):
        sc = make_synthetic_scenario(0, "linear", n_agents=3)
        spec = sc.anchored_spec(128, 128)
        targets = build_waypoint_targets(sc, spec)
        for k in range(N_WAYPOINTS):
            occ = targets.all_occupancy(k).values
            nonzero = np.any(targets.flow[k].data != 0.0, axis=2)
            assert np.all(occ[nonzero] == 1.0)


class TestHistoryAndInput:
    def test_history_flow_per_frame_magnitude(self):
        # 2 m/s on 0.5 m cells at 10 Hz: 0.4 cells per consecutive frame
        spec = GridSpec(32, 32, 0.5)
        sc = Scenario("s", (moving_track("a", 2.0),))
        fields = build_history_flow(sc, spec)
        assert len(fields) == N_HISTORY_FLOW
        for f in fields:
            nz = np.any(f.data != 0.0, axis=2)
            assert nz.sum() > 0
            assert np.allclose(f.data[nz, 0], -0.4, atol=1e-9)

    def test_assemble_input_shapes(self):
        sc = make_synthetic_scenario(0, "linear", n_agents=3)
        spec = sc.anchored_spec(64, 64)
        feats = assemble_input(sc, spec)
        assert len(feats.history_occ) == N_HISTORY_OCC == 11
        assert len(feats.history_flow) == N_HISTORY_FLOW == 10
        assert feats.map_raster.channels == MAP_CHANNELS
        assert feats.agent_states.shape == (64, 11, 6)
        assert feats.agent_valid.shape == (64, 11)
        stacked = feats.stacked_channels()
        assert stacked.shape == (64, 64, 11 + MAP_CHANNELS + 20)

    def test_agent_state_padding(self):
        sc = make_synthetic_scenario(0, "linear", n_agents=2)
        feats = assemble_input(sc, sc.anchored_spec(32, 32))
        assert feats.agent_valid[:2].all()
        assert not feats.agent_valid[2:].any()
        assert np.all(feats.agent_states[2:] == 0.0)
