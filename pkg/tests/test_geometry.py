"""Lifting, projection, and percentile behavior against hand and brute-force oracles."""

import numpy as np
import pytest

from worldseed.camera import Camera, CameraPose
from worldseed.geometry import (
    WorldCloud,
    lift_rgbd,
    percentile,
    project_cloud,
)
from worldseed.validation import INVALID_DEPTH

from conftest import make_intrinsics, random_frame, random_pose


def identity_camera(width=8, height=8, **kw):
    return Camera(make_intrinsics(width, height, **kw), CameraPose.identity())


def oracle_unproject(frame, intr, pose):
    """Per-pixel loop unprojection, independent of the vectorized path."""
    inv_rot = np.asarray(pose.rotation).T
    center = -inv_rot @ np.asarray(pose.translation)
    points = []
    for v in range(frame.shape[0]):
        for u in range(frame.shape[1]):
            if not frame.mask[v, u]:
                continue
            d = frame.depth[v, u]
            cam = np.array([d * (u - intr.cx) / intr.fx,
                            d * (v - intr.cy) / intr.fy,
                            d])
            points.append(inv_rot @ cam + center)
    return np.array(points)


def oracle_zbuffer(cloud, camera):
    """Brute-force per-point projection with min-depth, lowest-index ties.

    Uses the shared rigid transform so the comparison isolates the pixel
    rounding, culling, and winner-selection rules.
    """
    intr = camera.intrinsics
    in_cam = camera.pose.to_camera(cloud.positions)
    depth = np.full(intr.shape(), np.inf)
    winner = np.full(intr.shape(), -1, dtype=int)
    for i, cam in enumerate(in_cam):
        if cam[2] <= 1e-4:
            continue
        u = int(np.rint(intr.fx * cam[0] / cam[2] + intr.cx))
        v = int(np.rint(intr.fy * cam[1] / cam[2] + intr.cy))
        if not (0 <= u < intr.width and 0 <= v < intr.height):
            continue
        if cam[2] < depth[v, u]:
            depth[v, u] = cam[2]
            winner[v, u] = i
    depth[winner < 0] = INVALID_DEPTH
    return depth, winner


class TestLift:
    def test_principal_ray(self):
        cam = identity_camera(cx=4.0, cy=4.0)
        image = np.zeros((8, 8, 3))
        depth = np.zeros((8, 8))
        mask = np.zeros((8, 8), dtype=bool)
        image[4, 4] = (0.2, 0.4, 0.6)
        depth[4, 4] = 1.0
        mask[4, 4] = True
        from worldseed.geometry import RgbdFrame
        cloud = lift_rgbd(RgbdFrame(image, depth, mask), cam)
        assert len(cloud) == 1
        np.testing.assert_allclose(cloud.positions[0], [0.0, 0.0, 1.0])
        np.testing.assert_array_equal(cloud.colors[0], [0.2, 0.4, 0.6])

    def test_45_degree_ray(self):
        # One focal length right of the principal point at depth 2 lands at
        # x = 2 by similar triangles.
        cam = identity_camera(width=16, height=8, fx=4.0, cx=4.0, cy=4.0)
        image = np.zeros((8, 16, 3))
        depth = np.zeros((8, 16))
        mask = np.zeros((8, 16), dtype=bool)
        depth[4, 8] = 2.0   # u = cx + fx = 8
        mask[4, 8] = True
        from worldseed.geometry import RgbdFrame
        cloud = lift_rgbd(RgbdFrame(image, depth, mask), cam)
        np.testing.assert_allclose(cloud.positions[0], [2.0, 0.0, 2.0])

    def test_full_frame_matches_unprojection_oracle(self, rng):
        intr = make_intrinsics(8, 8)
        pose = random_pose(rng)
        frame = random_frame(rng, 8, 8)
        cloud = lift_rgbd(frame, Camera(intr, pose))
        assert len(cloud) == 64
        expected = oracle_unproject(frame, intr, pose)
        np.testing.assert_allclose(cloud.positions, expected, atol=1e-12)

    def test_select_restricts_points(self, rng):
        frame = random_frame(rng, 8, 8)
        cam = identity_camera()
        select = np.zeros((8, 8), dtype=bool)
        select[2, 3] = True
        cloud = lift_rgbd(frame, cam, select=select, origin_step=7)
        assert len(cloud) == 1
        assert cloud.origin_steps[0] == 7

    def test_select_invalid_depth_rejected(self, rng):
        frame = random_frame(rng, 8, 8, valid_fraction=0.5)
        cam = identity_camera()
        select = ~frame.mask
        with pytest.raises(ValueError, match="without valid depth"):
            lift_rgbd(frame, cam, select=select)

    def test_dimension_mismatch_rejected(self, rng):
        frame = random_frame(rng, 8, 8)
        cam = identity_camera(width=16, height=16)
        with pytest.raises(ValueError, match="does not match"):
            lift_rgbd(frame, cam)

    def test_pose_invariance(self, rng):
        # Lifting under pose P then mapping through P again must equal the
        # identity lift.
        intr = make_intrinsics(8, 8)
        frame = random_frame(rng, 8, 8)
        pose = random_pose(rng)
        lifted = lift_rgbd(frame, Camera(intr, pose))
        back_in_cam = pose.to_camera(lifted.positions)
        reference = lift_rgbd(frame, Camera(intr, CameraPose.identity()))
        np.testing.assert_allclose(back_in_cam, reference.positions, atol=1e-9)


class TestProject:
    def test_single_point_on_principal_ray(self):
        cam = identity_camera(cx=4.0, cy=4.0)
        cloud = WorldCloud(np.array([[0.0, 0.0, 2.0]]),
                           np.array([[1.0, 0.5, 0.25]]),
                           np.array([0]))
        frame = project_cloud(cloud, cam)
        assert frame.mask.sum() == 1
        assert frame.mask[4, 4]
        assert frame.depth[4, 4] == 2.0
        np.testing.assert_array_equal(frame.image[4, 4], [1.0, 0.5, 0.25])

    def test_zbuffer_keeps_nearest(self):
        cam = identity_camera(cx=4.0, cy=4.0)
        cloud = WorldCloud(np.array([[0.0, 0.0, 3.0], [0.0, 0.0, 1.0]]),
                           np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
                           np.array([0, 0]))
        frame = project_cloud(cloud, cam)
        assert frame.depth[4, 4] == 1.0
        np.testing.assert_array_equal(frame.image[4, 4], [0.0, 1.0, 0.0])

    def test_depth_tie_goes_to_lower_index(self):
        cam = identity_camera(cx=4.0, cy=4.0)
        cloud = WorldCloud(np.array([[0.0, 0.0, 2.0], [0.0, 0.0, 2.0]]),
                           np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]),
                           np.array([0, 0]))
        frame = project_cloud(cloud, cam)
        np.testing.assert_array_equal(frame.image[4, 4], [1.0, 0.0, 0.0])

    def test_empty_cloud_gives_empty_mask(self):
        frame = project_cloud(WorldCloud(), identity_camera())
        assert not frame.mask.any()

    def test_points_behind_camera_culled(self):
        cam = identity_camera()
        cloud = WorldCloud(np.array([[0.0, 0.0, -1.0]]),
                           np.array([[1.0, 1.0, 1.0]]),
                           np.array([0]))
        assert not project_cloud(cloud, cam).mask.any()

    def test_round_trip(self, rng):
        intr = make_intrinsics(8, 8)
        pose = random_pose(rng)
        frame = random_frame(rng, 8, 8, valid_fraction=0.8)
        camera = Camera(intr, pose)
        back = project_cloud(lift_rgbd(frame, camera), camera)
        covered = frame.mask
        assert (back.mask | ~covered).all()   # mask superset of the original
        np.testing.assert_array_equal(back.image[covered], frame.image[covered])
        np.testing.assert_allclose(back.depth[covered], frame.depth[covered],
                                   atol=1e-9)

    def test_matches_brute_force_zbuffer(self, rng):
        for _ in range(5):
            n = int(rng.integers(1, 1000))
            positions = rng.normal(scale=2.0, size=(n, 3)) + [0, 0, 3.0]
            cloud = WorldCloud(positions, rng.uniform(size=(n, 3)),
                               np.zeros(n, dtype=np.int32))
            camera = Camera(make_intrinsics(12, 10), random_pose(rng, 0.3))
            frame = project_cloud(cloud, camera)
            depth, winner = oracle_zbuffer(cloud, camera)
            np.testing.assert_array_equal(frame.depth, depth)
            covered = winner >= 0
            np.testing.assert_array_equal(frame.mask, covered)
            np.testing.assert_array_equal(frame.image[covered],
                                          cloud.colors[winner[covered]])

    def test_mask_validity_coupling(self, rng):
        cloud = WorldCloud(rng.normal(size=(50, 3)) + [0, 0, 3.0],
                           rng.uniform(size=(50, 3)), np.zeros(50, dtype=np.int32))
        frame = project_cloud(cloud, identity_camera())
        assert ((frame.depth > 0) == frame.mask).all()


class TestPercentile:
    def test_nearest_rank_small_set(self):
        depth = np.array([[1.0, 2.0, 3.0, 4.0, 5.0]])
        # ceil(0.35 * 5) = 2, so the 2nd smallest value.
        assert percentile(depth, 0.35) == 2.0

    def test_extremes(self):
        depth = np.array([[4.0, 1.0, 3.0, 2.0]])
        assert percentile(depth, 0.0) == 1.0
        assert percentile(depth, 1.0) == 4.0

    def test_uniform_map(self):
        depth = np.full((6, 6), 2.5)
        for p in (0.0, 0.35, 0.7, 1.0):
            assert percentile(depth, p) == 2.5

    def test_ignores_invalid(self):
        depth = np.array([[0.0, 0.0, 7.0]])
        assert percentile(depth, 0.5) == 7.0

    def test_all_invalid_raises(self):
        with pytest.raises(ValueError, match="no valid"):
            percentile(np.zeros((4, 4)), 0.5)

    def test_matches_numpy_on_sorted_rank(self, rng):
        values = rng.uniform(0.1, 9.0, size=64)
        depth = values.reshape(8, 8)
        for p in rng.uniform(size=20):
            got = percentile(depth, p)
            srt = np.sort(values)
            rank = max(1, int(np.ceil(p * srt.size)))
            assert got == srt[rank - 1]
