"""Grid containers, coordinate transforms, sampling, warping and the
binary container format."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occuflow.errors import SpecMismatch
from occuflow.grids import (FlowField, Grid, GridSpec, OccupancyGrid,
                            bilinear_sample, bilinear_sample_array,
                            cell_centers_world, combine_occupancy,
                            grid_to_world, warp, warp_array, world_to_grid,
                            zero_flow, zeros_like_occupancy)
from occuflow.ofgr import OfgrError, read_grids, read_ofgr, write_ofgr


def spec(h=16, w=16, cell=0.5, origin=(0.0, 0.0), rot=0.0):
    return GridSpec(h, w, cell, origin, rot)


class TestGridSpec:
    def test_defaults(self):
        s = GridSpec()
        assert (s.height_cells, s.width_cells) == (256, 256)
        assert s.cell_size_m == 0.3125
        assert s.extent_m == (80.0, 80.0)

    @pytest.mark.parametrize("kwargs", [
        {"height_cells": 0}, {"width_cells": -1}, {"cell_size_m": 0.0},
    ])
    def test_rejects_degenerate_geometry(self, kwargs):
        with pytest.raises(ValueError):
            GridSpec(**{"height_cells": 8, "width_cells": 8,
                        "cell_size_m": 0.5, **kwargs})


class TestContainers:
    def test_grid_is_immutable(self):
        g = Grid(spec(4, 4), np.zeros((4, 4, 2)))
        with pytest.raises(ValueError):
            g.data[0, 0, 0] = 1.0

    def test_grid_promotes_2d_data(self):
        g = Grid(spec(4, 4), np.zeros((4, 4)))
        assert g.data.shape == (4, 4, 1)
        assert g.channels == 1

    def test_grid_rejects_wrong_shape(self):
        with pytest.raises(ValueError):
            Grid(spec(4, 4), np.zeros((5, 4, 1)))

    def test_grid_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            Grid(spec(2, 2), np.full((2, 2, 1), np.nan))

    def test_occupancy_range_enforced(self):
        with pytest.raises(ValueError):
            OccupancyGrid(spec(2, 2), np.full((2, 2, 1), 1.5))
        with pytest.raises(ValueError):
            OccupancyGrid(spec(2, 2), np.full((2, 2, 1), -0.1))

    def test_occupancy_single_channel_only(self):
        with pytest.raises(ValueError):
            OccupancyGrid(spec(2, 2), np.zeros((2, 2, 2)))

    def test_flow_clamps_to_half_grid(self):
        f = FlowField(spec(8, 8), np.full((8, 8, 2), 100.0))
        assert f.dx.max() == 4.0
        assert f.dy.max() == 4.0

    def test_flow_two_channels_only(self):
        with pytest.raises(ValueError):
            FlowField(spec(2, 2), np.zeros((2, 2, 3)))

    def test_zero_constructors(self):
        s = spec(4, 4)
        assert zeros_like_occupancy(s).values.sum() == 0.0
        assert zero_flow(s).data.sum() == 0.0


class TestTransforms:
    def test_center_maps_to_grid_center(self):
        s = spec(9, 9, 0.5, origin=(3.0, -2.0), rot=0.7)
        row, col = world_to_grid((3.0, -2.0), s)
        assert (row, col) == (4.0, 4.0)

    def test_one_cell_along_heading_is_one_column(self):
        rot = 0.3
        s = spec(9, 9, 0.5, origin=(1.0, 1.0), rot=rot)
        p = (1.0 + 0.5 * np.cos(rot), 1.0 + 0.5 * np.sin(rot))
        row, col = world_to_grid(p, s)
        assert abs(col - 5.0) < 1e-12
        assert abs(row - 4.0) < 1e-12

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-40, 40), st.floats(-40, 40), st.floats(-3.2, 3.2),
           st.floats(-100, 100), st.floats(-100, 100))
    def test_round_trip(self, ox, oy, rot, x, y):
        s = spec(33, 17, 0.25, origin=(ox, oy), rot=rot)
        row, col = world_to_grid((x, y), s)
        x2, y2 = grid_to_world((row, col), s)
        assert abs(x2 - x) < 1e-9
        assert abs(y2 - y) < 1e-9

    def test_batched_round_trip(self):
        s = spec(16, 16, 0.3125, origin=(5.0, 6.0), rot=-1.1)
        rng = np.random.default_rng(0)
        pts = rng.uniform(-20, 20, (100, 2))
        back = grid_to_world(world_to_grid(pts, s), s)
        assert np.max(np.abs(back - pts)) < 1e-9

    def test_cell_centers_match_grid_to_world(self):
        s = spec(5, 7, 0.5, origin=(1.0, 2.0), rot=0.4)
        centers = cell_centers_world(s)
        assert centers.shape == (5, 7, 2)
        assert np.allclose(centers[2, 3], grid_to_world((2.0, 3.0), s))


class TestBilinearSampling:
    def test_exact_at_integer_coordinates(self):
        rng = np.random.default_rng(1)
        data = rng.random((6, 6, 2))
        rows, cols = np.meshgrid(np.arange(6.0), np.arange(6.0), indexing="ij")
        out = bilinear_sample_array(data, rows, cols)
        assert np.array_equal(out, data)

    def test_midpoint_average(self):
        data = np.zeros((2, 2, 1))
        data[0, 0, 0], data[0, 1, 0] = 1.0, 3.0
        out = bilinear_sample_array(data, np.array(0.0), np.array(0.5))
        assert out[0] == 2.0

    def test_out_of_bounds_is_zero(self):
        data = np.ones((4, 4, 1))
        out = bilinear_sample_array(data, np.array([-2.0, 10.0]),
                                    np.array([1.0, 1.0]))
        assert np.array_equal(out, np.zeros((2, 1)))

    def test_boundary_fades_linearly(self):
        # half a cell outside: one valid corner pair at weight 0.5
        data = np.ones((4, 4, 1))
        out = bilinear_sample_array(data, np.array(-0.5), np.array(1.0))
        assert abs(out[0] - 0.5) < 1e-12

    def test_grid_wrapper_matches_array_form(self):
        rng = np.random.default_rng(2)
        g = Grid(spec(8, 8), rng.random((8, 8, 3)))
        rc = rng.uniform(0, 7, (5, 2))
        out = bilinear_sample(g, rc)
        ref = bilinear_sample_array(g.data, rc[:, 0], rc[:, 1])
        assert np.array_equal(out, ref)


class TestWarp:
    def test_zero_flow_identity_bitwise(self):
        rng = np.random.default_rng(3)
        s = spec(12, 12)
        for _ in range(20):
            occ = OccupancyGrid(s, rng.random((12, 12, 1)))
            out = warp(occ, zero_flow(s))
            assert np.array_equal(out.values, occ.values)

    def test_integer_flow_is_a_shift(self):
        # backward flow (dx=+2, dy=0): each output cell reads 2 columns right
        s = spec(8, 8)
        occ = np.zeros((8, 8))
        occ[4, 5] = 1.0
        flow = np.zeros((8, 8, 2))
        flow[:, :, 0] = 2.0
        out = warp(OccupancyGrid(s, occ[:, :, None]), FlowField(s, flow))
        expected = np.zeros((8, 8))
        expected[4, 3] = 1.0
        assert np.array_equal(out.values, expected)

    def test_repeated_shift_moves_hot_cell(self):
        # constant flow (-1, 0) moves a one-hot peak one column right per step
        s = spec(9, 9)
        occ = np.zeros((9, 9))
        occ[4, 2] = 1.0
        flow = np.zeros((9, 9, 2))
        flow[:, :, 0] = -1.0
        g = OccupancyGrid(s, occ[:, :, None])
        f = FlowField(s, flow)
        for t in range(1, 4):
            g = warp(g, f)
            expected = np.zeros((9, 9))
            expected[4, 2 + t] = 1.0
            assert np.array_equal(g.values, expected)

    def test_linearity_in_input(self):
        rng = np.random.default_rng(4)
        a = rng.random((10, 10))
        b = rng.random((10, 10))
        flow = rng.uniform(-2, 2, (10, 10, 2))
        combo = warp_array(0.3 * a + 0.6 * b, flow)
        parts = 0.3 * warp_array(a, flow) + 0.6 * warp_array(b, flow)
        assert np.allclose(combo, parts, atol=1e-12)

    def test_fractional_flow_interpolates(self):
        s = spec(4, 4)
        occ = np.zeros((4, 4))
        occ[1, 2] = 1.0
        flow = np.zeros((4, 4, 2))
        flow[1, 1, 0] = 0.5
        out = warp(OccupancyGrid(s, occ[:, :, None]), FlowField(s, flow))
        assert abs(out.values[1, 1] - 0.5) < 1e-12

    def test_spec_mismatch_raises(self):
        with pytest.raises(SpecMismatch):
            warp(zeros_like_occupancy(spec(4, 4)), zero_flow(spec(5, 5)))

    def test_nearest_method(self):
        s = spec(6, 6)
        occ = np.zeros((6, 6))
        occ[2, 3] = 1.0
        flow = np.zeros((6, 6, 2))
        flow[2, 2, 0] = 0.6   # rounds to the occupied neighbor
        out = warp(OccupancyGrid(s, occ[:, :, None]), FlowField(s, flow),
                   method="nearest")
        assert out.values[2, 2] == 1.0


class TestCombine:
    def test_sum_below_one(self):
        s = spec(4, 4)
        a = OccupancyGrid(s, np.full((4, 4, 1), 0.25))
        b = OccupancyGrid(s, np.full((4, 4, 1), 0.5))
        assert np.allclose(combine_occupancy(a, b).values, 0.75)

    def test_clamped_at_one(self):
        s = spec(4, 4)
        a = OccupancyGrid(s, np.full((4, 4, 1), 0.75))
        b = OccupancyGrid(s, np.full((4, 4, 1), 0.75))
        assert np.allclose(combine_occupancy(a, b).values, 1.0)

    def test_spec_mismatch(self):
        with pytest.raises(SpecMismatch):
            combine_occupancy(zeros_like_occupancy(spec(4, 4)),
                              zeros_like_occupancy(spec(4, 5)))


class TestOfgrFormat:
    def test_round_trip_multi_grid(self, tmp_path):
        s = spec(6, 5, 0.25, origin=(1.5, -2.5), rot=0.9)
        rng = np.random.default_rng(5)
        grids = [Grid(s, rng.random((6, 5, 3)).astype(np.float32))
                 for _ in range(4)]
        path = tmp_path / "batch.ofgr"
        write_ofgr(path, grids)
        spec2, data = read_ofgr(path)
        assert spec2 == s
        assert data.shape == (4, 6, 5, 3)
        for i, g in enumerate(grids):
            assert np.array_equal(data[i], g.data)

    def test_round_trip_typed(self, tmp_path):
        s = spec(4, 4)
        occ = OccupancyGrid(s, np.eye(4).reshape(4, 4, 1))
        flow = FlowField(s, np.ones((4, 4, 2)))
        write_ofgr(tmp_path / "o.ofgr", occ)
        write_ofgr(tmp_path / "f.ofgr", flow)
        [occ2] = read_grids(tmp_path / "o.ofgr", "occupancy")
        [flow2] = read_grids(tmp_path / "f.ofgr", "flow")
        assert np.array_equal(occ2.values, occ.values)
        assert np.array_equal(flow2.data, flow.data)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.ofgr"
        p.write_bytes(b"NOPE" + b"\x00" * 100)
        with pytest.raises(OfgrError):
            read_ofgr(p)

    def test_truncated_header(self, tmp_path):
        p = tmp_path / "short.ofgr"
        p.write_bytes(b"OFGR\x01")
        with pytest.raises(OfgrError):
            read_ofgr(p)

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "cut.ofgr"
        write_ofgr(p, Grid(spec(4, 4), np.zeros((4, 4, 1))))
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(OfgrError):
            read_ofgr(p)

    def test_mixed_specs_rejected(self, tmp_path):
        with pytest.raises(OfgrError):
            write_ofgr(tmp_path / "x.ofgr",
                       [Grid(spec(4, 4), np.zeros((4, 4, 1))),
                        Grid(spec(4, 5), np.zeros((4, 5, 1)))])

    def test_empty_rejected(self, tmp_path):
        with pytest.raises(OfgrError):
            write_ofgr(tmp_path / "x.ofgr", [])
