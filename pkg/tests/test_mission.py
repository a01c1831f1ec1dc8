import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sonarsynth.errors import BoundsError, FormatError, ValidationError
from sonarsynth.mission import (AttitudeSeries, MissionSpec, TerrainLabel,
                                WorldMap, load_world_map, make_survey_route,
                                plan_pings, rasterize_rows, save_json,
                                slice_tiles, wrap_angle_deg)

BIG = WorldMap(width_m=30000, height_m=30000)


def straight_mission(length_m=29.0, **kw):
    return MissionSpec(map_id="m", waypoints=((5.0, 5.0), (5.0, 5.0 + length_m)), **kw)


class TestPlanPings:
    def test_straight_leg_count_and_yaw(self):
        pos, att = plan_pings(straight_mission(), BIG)
        assert len(att) == 464
        assert np.allclose(att.yaw_deg, 90.0)
        assert pos.shape == (464, 2)

    def test_l_route_yaw_steps_corner_angle(self):
        spec = MissionSpec(map_id="m",
                           waypoints=((5, 5), (5, 34), (34, 34)))
        pos, att = plan_pings(spec, BIG)
        assert len(att) == 928
        # Total change across the corner arc equals the 90-degree corner.
        assert att.yaw_deg[0] == pytest.approx(90.0)
        assert att.yaw_deg[-1] == pytest.approx(0.0)
        assert abs(att.yaw_deg[0] - att.yaw_deg[-1]) == pytest.approx(90.0, abs=1e-6)

    def test_standard_test_mission_300k_pings(self):
        spec = MissionSpec(map_id="m", waypoints=((5, 5), (5, 18755.0)))
        pos, att = plan_pings(spec, BIG)
        assert len(att) == 300_000

    def test_route_outside_map_raises(self):
        small = WorldMap(width_m=10, height_m=10)
        with pytest.raises(BoundsError):
            plan_pings(straight_mission(), small)

    def test_zero_length_route_raises(self):
        with pytest.raises(ValidationError):
            plan_pings(MissionSpec(map_id="m", waypoints=((1, 1), (1, 1))), BIG)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(min_value=2.0, max_value=400.0))
    def test_ping_count_linear_in_length(self, length):
        _, att1 = plan_pings(straight_mission(length))
        _, att2 = plan_pings(straight_mission(2 * length))
        assert abs(len(att2) - 2 * len(att1)) <= 1

    def test_corner_blend_is_monotone(self):
        spec = MissionSpec(map_id="m", waypoints=((5, 5), (5, 34), (34, 34)))
        _, att = plan_pings(spec, BIG)
        inside = att.yaw_deg[(att.yaw_deg > 0.5) & (att.yaw_deg < 89.5)]
        assert inside.size > 0
        assert np.all(np.diff(inside) <= 1e-9)


class TestRasterize:
    def test_flat_map_rows(self):
        world = WorldMap(width_m=100, height_m=100)
        spec = straight_mission(10)
        pos, att = plan_pings(spec, world)
        rows = rasterize_rows(world, pos, att, "port", swath_px=64, nadir_px=4)
        assert rows.shape == (160, 64)
        assert np.all(rows[:, :4] == int(TerrainLabel.NADIR))
        assert np.all(rows[:, 4:] == int(TerrainLabel.FLAT))

    def test_polygon_crossing_gives_contiguous_run(self):
        rock = np.array([[1.0, 7.0], [4.0, 7.0], [4.0, 9.0], [1.0, 9.0]])
        world = WorldMap(width_m=100, height_m=100,
                         regions=((rock, TerrainLabel.ROCKS),))
        spec = straight_mission(10)
        pos, att = plan_pings(spec, world)
        rows = rasterize_rows(world, pos, att, "port", swath_px=64, nadir_px=0)
        # Port side of a +y track looks toward -x; the rock sits x in [1, 4].
        hit = rows == int(TerrainLabel.ROCKS)
        assert hit.any()
        row = rows[int(2.5 * 16)]
        run = np.flatnonzero(row == int(TerrainLabel.ROCKS))
        assert np.array_equal(run, np.arange(run.min(), run.max() + 1))

    def test_port_starboard_mirror_on_symmetric_map(self):
        left = np.array([[30.0, 20.0], [45.0, 20.0], [45.0, 30.0], [30.0, 30.0]])
        right = 100.0 - left[:, 0]
        mirrored = np.stack([right, left[:, 1]], axis=1)
        world = WorldMap(width_m=100, height_m=100,
                         regions=((left, TerrainLabel.ROCKS),
                                  (mirrored, TerrainLabel.ROCKS)))
        spec = MissionSpec(map_id="m", waypoints=((50.0, 5.0), (50.0, 45.0)))
        pos, att = plan_pings(spec, world)
        port = rasterize_rows(world, pos, att, "port", swath_px=64, nadir_px=4)
        star = rasterize_rows(world, pos, att, "starboard", swath_px=64, nadir_px=4)
        assert np.array_equal(port, star)

    def test_deterministic(self):
        world = WorldMap(width_m=100, height_m=100)
        pos, att = plan_pings(straight_mission(10), world)
        a = rasterize_rows(world, pos, att, "port", swath_px=32)
        b = rasterize_rows(world, pos, att, "port", swath_px=32)
        assert np.array_equal(a, b)


class TestSliceTiles:
    def test_exact_fit(self):
        rows = np.zeros((464, 8), dtype=np.uint8)
        tiles = slice_tiles(rows)
        assert len(tiles) == 1 and tiles[0].valid_rows == 464

    def test_one_extra_row(self):
        rows = np.zeros((465, 8), dtype=np.uint8)
        tiles = slice_tiles(rows)
        assert len(tiles) == 2 and tiles[1].valid_rows == 1

    def test_300k_rows_make_647_tiles(self):
        rows = np.zeros((300_000, 4), dtype=np.uint8)
        tiles = slice_tiles(rows)
        assert len(tiles) == 647
        assert sum(t.valid_rows for t in tiles) == 300_000

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        rows = rng.integers(0, 4, size=(1000, 16)).astype(np.uint8)
        tiles = slice_tiles(rows, tile_rows=300)
        back = np.concatenate([t.labels[:t.valid_rows] for t in tiles])
        assert np.array_equal(back, rows)

    def test_padding_uses_background(self):
        rows = np.ones((10, 8), dtype=np.uint8)
        tiles = slice_tiles(rows, tile_rows=16, background_label=TerrainLabel.FLAT)
        assert np.all(tiles[0].labels[10:] == int(TerrainLabel.FLAT))

    def test_empty_raises(self):
        with pytest.raises(ValidationError):
            slice_tiles(np.zeros((0, 8), dtype=np.uint8))


class TestTypesAndJson:
    def test_yaw_wraps(self):
        att = AttitudeSeries(np.array([270.0, -541.0]))
        assert np.allclose(att.yaw_deg, [-90.0, 179.0])
        assert wrap_angle_deg(180.0) == -180.0

    def test_mission_invariants(self):
        with pytest.raises(ValidationError):
            MissionSpec(map_id="m", waypoints=((0, 0),))
        with pytest.raises(ValidationError):
            MissionSpec(map_id="m", waypoints=((0, 0), (1, 1)), speed_mps=0)
        with pytest.raises(ValidationError):
            MissionSpec(map_id="m", waypoints=((0, 0), (1, 1)), swath_px=510)

    def test_world_map_rejects_out_of_bounds_region(self):
        poly = np.array([[0.0, 0.0], [200.0, 0.0], [100.0, 50.0]])
        with pytest.raises(ValidationError):
            WorldMap(width_m=100, height_m=100, regions=((poly, TerrainLabel.ROCKS),))

    def test_json_round_trip(self, tmp_path):
        poly = np.array([[1.0, 1.0], [9.0, 1.0], [5.0, 8.0]])
        world = WorldMap(width_m=10, height_m=10,
                         regions=((poly, TerrainLabel.CLUTTER),),
                         background_label=TerrainLabel.FLAT)
        save_json(world, tmp_path / "w.json")
        back = load_world_map(tmp_path / "w.json")
        assert back.width_m == world.width_m
        assert np.array_equal(back.regions[0][0], poly)
        assert back.regions[0][1] == TerrainLabel.CLUTTER

    def test_version_check(self, tmp_path):
        (tmp_path / "bad.json").write_text(json.dumps({"format_version": 99}))
        with pytest.raises(FormatError):
            load_world_map(tmp_path / "bad.json")


def test_survey_route_turns_both_ways():
    pts = make_survey_route((10, 10), leg_len_m=50, spacing_m=10, n_legs=4)
    assert len(pts) >= 8
    spec = MissionSpec(map_id="m", waypoints=pts)
    _, att = plan_pings(spec, BIG)
    assert len(att) > 0
