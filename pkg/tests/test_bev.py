import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polytraj import bev
from polytraj.bev import (
    CH_COUNT,
    CH_STATE,
    CH_X,
    CH_Y,
    Detection,
    Snapshot,
    State,
    VehicleClass,
    accumulate,
    footprint_corners,
    pad_history,
    pool,
    rasterize_frame,
)
from polytraj.geometry import Pose2

# Ego at (10, 5) facing +y: ego-frame (u, v) sits at global (10 - v, 5 + u).
GOLDEN_EGO = Pose2(10.0, 5.0, math.pi / 2)


def golden_scene():
    car_pose = Pose2(10.0, 10.0, math.pi / 2)  # ego-frame (5, 0), aligned with the ego
    corners = np.array([[9.1, 12.25], [10.9, 12.25], [10.9, 7.75], [9.1, 7.75]])
    car = Detection(car_pose, corners, State.DYNAMIC, VehicleClass.CAR)
    points = np.array(
        [
            [9.7, 5.2, 1.0],  # ego-frame (0.2, 0.3)
            [9.8, 10.4, 1.5],  # ego-frame (5.4, 0.2): shares the car centre cell
            [9.9, 5.7, 0.1],  # ground return, ignored
        ]
    )
    return car, points


def golden_tensor():
    """Expected frame, written cell by cell."""
    g = np.zeros((121, 21, 5))
    g[60, 10] = [0.2, 0.3, 0, 0, 1]
    g[65, 10] = [5.0, 0.0, 3, 2, 1]  # centre overwrites the point mean but keeps its count
    for (u, v), (i, j) in {
        (7.25, 0.9): (67, 11),
        (7.25, -0.9): (67, 9),
        (2.75, -0.9): (63, 9),
        (2.75, 0.9): (63, 11),
    }.items():
        g[i, j] = [u, v, 3, 2, 0]
    return g


class TestRasterizeFrame:
    def test_golden_scene(self):
        car, points = golden_scene()
        got = rasterize_frame([car], points, GOLDEN_EGO)
        want = golden_tensor()
        assert got.shape == (121, 21, 5)
        np.testing.assert_array_equal(got[..., CH_STATE:], want[..., CH_STATE:])
        np.testing.assert_allclose(got[..., :CH_STATE], want[..., :CH_STATE], rtol=0, atol=1e-12)

    def test_golden_corners_from_footprint(self):
        car, _ = golden_scene()
        np.testing.assert_allclose(footprint_corners(car.pose, VehicleClass.CAR), car.corners, atol=1e-12)

    def test_single_point_cell(self):
        f = rasterize_frame([], [[0.2, 0.3, 1.0]], Pose2(0, 0, 0))
        assert f[60, 10, CH_COUNT] == 1
        assert (f[60, 10, CH_X], f[60, 10, CH_Y]) == (0.2, 0.3)

    def test_out_of_range_point(self):
        assert not rasterize_frame([], [[60.7, 0.0, 1.0]], Pose2(0, 0, 0)).any()

    def test_car_centre_cell(self):
        pose = Pose2(5.0, 0.0, 0.0)
        f = rasterize_frame([Detection(pose, footprint_corners(pose, 2), State.DYNAMIC, VehicleClass.CAR)], [], Pose2(0, 0, 0))
        assert list(f[65, 10]) == [5.0, 0.0, 3, 2, 0]

    def test_point_mean(self):
        f = rasterize_frame([], [[0.1, 0.1, 1], [-0.4, 0.3, 2], [0.3, -0.2, 1]], Pose2(0, 0, 0))
        assert f[60, 10, CH_COUNT] == 3
        assert f[60, 10, CH_X] == pytest.approx(0.0, abs=1e-15)
        assert f[60, 10, CH_Y] == pytest.approx(0.2 / 3, abs=1e-15)

    def test_grid_edges(self):
        f = rasterize_frame([], [[-60.5, -10.5, 1], [60.4999, 10.4999, 1], [60.5, 0, 1], [0, 10.5, 1]], Pose2(0, 0, 0))
        assert f[0, 0, CH_COUNT] == 1 and f[120, 20, CH_COUNT] == 1
        assert f[..., CH_COUNT].sum() == 2

    @given(st.integers(0, 2**32 - 1))
    def test_count_equals_in_range_points(self, seed):
        rng = np.random.default_rng(seed)
        pts = np.column_stack([rng.uniform(-80, 80, 200), rng.uniform(-15, 15, 200), rng.uniform(-1, 2, 200)])
        f = rasterize_frame([], pts, Pose2(0, 0, 0))
        inside = (np.abs(pts[:, 0]) < 60.5) & (np.abs(pts[:, 1]) < 10.5) & (pts[:, 2] >= bev.GROUND_Z)
        assert f[..., CH_COUNT].sum() == inside.sum()


class TestAccumulate:
    def test_shape(self):
        t = accumulate([Snapshot()] * 20, Pose2(0, 0, 0))
        assert t.shape == (20, 121, 21, 5)
        assert not t.any()

    def test_wrong_length(self):
        with pytest.raises(ValueError, match="pad"):
            accumulate([Snapshot()] * 19, Pose2(0, 0, 0))

    def test_static_world_static_ego(self):
        car, points = golden_scene()
        t = accumulate([Snapshot([car], points)] * 20, GOLDEN_EGO)
        assert all(np.array_equal(t[0], t[k]) for k in range(20))

    def test_static_obstacle_fixed_cell_while_ego_moves(self):
        """Rasterizing in the current frame keeps a fixed obstacle in one cell across the stack."""
        obstacle = np.array([[30.3, 2.2, 1.0]])
        snaps = [Snapshot([], obstacle) for _ in range(20)]
        t = accumulate(snaps, Pose2(19.0, 0.0, 0.0))
        for k in range(20):
            assert t[k, 71, 12, CH_COUNT] == 1

    def test_pad_history(self):
        snaps = [Snapshot(points=np.array([[i, 0.0, 1.0]])) for i in range(5)]
        padded, flag = pad_history(snaps)
        assert flag and len(padded) == 20
        assert all(s is snaps[0] for s in padded[:16])
        full, flag = pad_history(snaps * 5)
        assert not flag and len(full) == 20

    def test_pad_empty(self):
        with pytest.raises(ValueError):
            pad_history([])


def _shift_detection(d, dx, dy):
    return Detection(Pose2(d.pose.x + dx, d.pose.y + dy, d.pose.yaw), d.corners + [dx, dy], d.state, d.cls)


class TestEquivariance:
    @settings(max_examples=30)
    @given(st.floats(-500, 500), st.floats(-500, 500), st.integers(0, 2**32 - 1))
    def test_translation(self, dx, dy, seed):
        rng = np.random.default_rng(seed)
        ego = Pose2(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-math.pi, math.pi))
        dets = []
        for _ in range(3):
            p = Pose2(ego.x + rng.uniform(-40, 40), ego.y + rng.uniform(-8, 8), rng.uniform(-3, 3))
            dets.append(Detection(p, footprint_corners(p, 2), State.DYNAMIC, VehicleClass.CAR))
        pts = np.column_stack([ego.x + rng.uniform(-50, 50, 50), ego.y + rng.uniform(-12, 12, 50), rng.uniform(0, 2, 50)])
        a = rasterize_frame(dets, pts, ego)
        b = rasterize_frame([_shift_detection(d, dx, dy) for d in dets], pts + [dx, dy, 0.0], Pose2(ego.x + dx, ego.y + dy, ego.yaw))
        # cells are identical unless a point sits within rounding of a cell border
        same = (a[..., CH_COUNT] == b[..., CH_COUNT]).all()
        if same:
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-12 * max(1.0, abs(dx) + abs(dy)))

    def test_translation_exact_grid(self):
        car, points = golden_scene()
        a = rasterize_frame([car], points, GOLDEN_EGO)
        for dx, dy in [(1.0, 0.0), (-3.0, 8.0), (128.0, -64.0)]:
            b = rasterize_frame([_shift_detection(car, dx, dy)], points + [dx, dy, 0.0], Pose2(GOLDEN_EGO.x + dx, GOLDEN_EGO.y + dy, GOLDEN_EGO.yaw))
            assert np.abs(a - b).max() <= 1e-12


class TestPoolAndDump:
    def test_pool_mean_preserving(self, rng):
        t = rng.normal(size=(20, 121, 21, 5))
        p = pool(t)
        assert p.shape == (20, 12, 7, 5)
        # bins are near-equal, so the weighted mean of the pooled grid equals the full mean
        bx = [len(b) for b in np.array_split(np.arange(121), 12)]
        by = [len(b) for b in np.array_split(np.arange(21), 7)]
        w = np.outer(bx, by)[None, :, :, None]
        np.testing.assert_allclose((p * w).sum((1, 2)) / w.sum(), t.mean((1, 2)), atol=1e-12)

    def test_pool_constant(self):
        assert np.all(pool(np.full((20, 121, 21, 5), 2.5)) == 2.5)

    def test_dump_load(self, tmp_path, rng):
        t = rng.normal(size=(20, 121, 21, 5)).astype(np.float32)
        path = tmp_path / "x.bev"
        bev.dump(t, path)
        raw = path.read_bytes()
        assert raw[:4] == b"BEV1" and len(raw) == 16 + t.size * 4
        assert np.frombuffer(raw[4:16], "<u4").tolist() == [20, 121, 21]
        np.testing.assert_array_equal(bev.load(path), t)

    def test_dump_wrong_shape(self, tmp_path):
        with pytest.raises(ValueError):
            bev.dump(np.zeros((19, 121, 21, 5)), tmp_path / "x")

    def test_load_truncated(self, tmp_path):
        (tmp_path / "bad").write_bytes(b"BEV1" + b"\0" * 20)
        with pytest.raises(ValueError, match="bytes"):
            bev.load(tmp_path / "bad")
