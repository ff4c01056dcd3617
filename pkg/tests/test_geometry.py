"""Pinhole cameras, bilinear heatmap sampling, and voxel aggregation.

The aggregation test compares the vectorized multi-camera average
against a scalar triple loop built only from project_point and
sample_heatmap, which is the semantic definition of a feature volume.
"""

import numpy as np
import pytest

from gridpose import (
    CameraCalib,
    ConfigError,
    GridSpec,
    Heatmap,
    aggregate_feature_volume,
    camera_ring,
    cameras_to_json,
    load_cameras_json,
    project_point,
    sample_heatmap,
)


def identity_camera(fx=1000.0, fy=1000.0, cx=500.0, cy=500.0, size=(1000, 1000)):
    return CameraCalib(
        fx=fx, fy=fy, cx=cx, cy=cy,
        rotation=np.eye(3), translation=np.zeros(3),
        image_width=size[0], image_height=size[1],
    )


def aggregate_oracle(cams, heatmaps, grid):
    """Scalar reference: project every voxel into every camera, sample,
    and average over the cameras that observe it."""
    n_joints = heatmaps[0].n_joints
    rx, ry, rz = grid.resolution
    vol = np.zeros((n_joints, rx, ry, rz))
    for x in range(rx):
        for y in range(ry):
            for z in range(rz):
                center = grid.voxel_center((x, y, z))
                scores = np.zeros(n_joints)
                observed = 0
                for cam, hm in zip(cams, heatmaps):
                    uv = project_point(cam, center)
                    if uv is None:
                        continue
                    u, v = uv
                    if not (0.0 <= u <= hm.width - 1 and 0.0 <= v <= hm.height - 1):
                        continue
                    observed += 1
                    for j in range(n_joints):
                        scores[j] += sample_heatmap(hm, j, (u, v))
                if observed:
                    vol[:, x, y, z] = scores / observed
    return vol


class TestCameraCalib:
    def test_non_orthonormal_rotation_rejected(self):
        with pytest.raises(ConfigError):
            CameraCalib(fx=1, fy=1, cx=0, cy=0, rotation=np.eye(3) * 2,
                        translation=np.zeros(3), image_width=8, image_height=8)

    def test_non_positive_focal_rejected(self):
        with pytest.raises(ConfigError):
            CameraCalib(fx=0, fy=1, cx=0, cy=0, rotation=np.eye(3),
                        translation=np.zeros(3), image_width=8, image_height=8)

    def test_json_round_trip(self):
        cams = camera_ring(3, radius=4000, height=1000, target=(0, 0, 0),
                           image_size=(128, 96), focal_px=100)
        back = load_cameras_json(cameras_to_json(cams))
        for a, b in zip(cams, back):
            np.testing.assert_array_equal(a.rotation, b.rotation)
            np.testing.assert_array_equal(a.translation, b.translation)
            assert (a.fx, a.fy, a.cx, a.cy) == (b.fx, b.fy, b.cx, b.cy)
            assert (a.image_width, a.image_height) == (b.image_width, b.image_height)

    def test_missing_field_rejected(self):
        with pytest.raises(ConfigError):
            CameraCalib.from_json({"fx": 1.0})


class TestProjectPoint:
    def test_principal_point_ray(self):
        cam = identity_camera()
        assert project_point(cam, (0, 0, 2000)) == (500.0, 500.0)

    def test_offset_point(self):
        cam = identity_camera()
        assert project_point(cam, (200, 0, 2000)) == (600.0, 500.0)

    def test_behind_camera_returns_none(self):
        cam = identity_camera()
        assert project_point(cam, (0, 0, -10)) is None
        assert project_point(cam, (0, 0, 0)) is None  # on the camera plane

    def test_out_of_image_still_projects(self):
        # bounds are the sampler's concern, not the projector's
        cam = identity_camera()
        u, v = project_point(cam, (10000, 0, 1000))
        assert u > cam.image_width

    def test_non_finite_point_rejected(self):
        with pytest.raises(ValueError):
            project_point(identity_camera(), (np.nan, 0, 1))


class TestSampleHeatmap:
    def make_delta(self, u=10, v=20, size=(32, 32)):
        values = np.zeros((1, size[1], size[0]))
        values[0, v, u] = 1.0
        return Heatmap(values=values)

    def test_exact_grid_point(self):
        assert sample_heatmap(self.make_delta(), 0, (10.0, 20.0)) == 1.0

    def test_bilinear_midpoint(self):
        assert sample_heatmap(self.make_delta(), 0, (10.5, 20.0)) == 0.5

    def test_out_of_bounds_is_zero(self):
        hm = self.make_delta()
        assert sample_heatmap(hm, 0, (-3.0, 5.0)) == 0.0
        assert sample_heatmap(hm, 0, (31.5, 5.0)) == 0.0

    def test_corner_pixel_in_bounds(self):
        values = np.ones((1, 4, 4))
        assert sample_heatmap(Heatmap(values=values), 0, (3.0, 3.0)) == 1.0

    def test_matches_scalar_bilinear_formula(self):
        rng = np.random.default_rng(0)
        hm = Heatmap(values=rng.uniform(0, 1, size=(2, 8, 8)))
        for _ in range(50):
            u = rng.uniform(0, 7)
            v = rng.uniform(0, 7)
            j = int(rng.integers(0, 2))
            x0, y0 = int(np.floor(u)), int(np.floor(v))
            x1, y1 = min(x0 + 1, 7), min(y0 + 1, 7)
            wx, wy = u - x0, v - y0
            plane = hm.values[j]
            expect = (
                (1 - wy) * ((1 - wx) * plane[y0, x0] + wx * plane[y0, x1])
                + wy * ((1 - wx) * plane[y1, x0] + wx * plane[y1, x1])
            )
            assert sample_heatmap(hm, j, (u, v)) == pytest.approx(expect, abs=1e-14)

    def test_bad_joint_index_rejected(self):
        with pytest.raises(IndexError):
            sample_heatmap(self.make_delta(), 5, (0.0, 0.0))

    def test_heatmap_value_range_enforced(self):
        with pytest.raises(ValueError):
            Heatmap(values=np.full((1, 4, 4), 1.5))
        with pytest.raises(ValueError):
            Heatmap(values=np.full((1, 4, 4), np.nan))


class TestAggregateFeatureVolume:
    def test_delta_heatmap_marks_projected_voxel(self):
        grid = GridSpec(center=(0, 0, 3000), extent=400.0, resolution=4)
        cam = identity_camera(size=(1024, 1024))
        target_idx = (1, 2, 3)
        uv = project_point(cam, grid.voxel_center(target_idx))
        values = np.zeros((1, 1024, 1024))
        # delta at the nearest integer pixel of that voxel's projection
        values[0, round(uv[1]), round(uv[0])] = 1.0
        vol = aggregate_feature_volume([cam], [Heatmap(values=values)], grid)
        oracle = aggregate_oracle([cam], [Heatmap(values=values)], grid)
        np.testing.assert_allclose(vol, oracle, atol=1e-12)
        assert vol[0][target_idx] == pytest.approx(
            sample_heatmap(Heatmap(values=values), 0, uv), abs=1e-12
        )
        assert vol[0][target_idx] > 0.9 * vol[0].max()

    def test_two_view_mean(self):
        # one camera scores 1.0 everywhere, the other 0.0: mean is 0.5
        grid = GridSpec(center=(0, 0, 0), extent=200.0, resolution=2)
        cams = camera_ring(2, radius=3000, height=0, target=(0, 0, 0),
                           image_size=(256, 256), focal_px=200)
        ones = Heatmap(values=np.ones((1, 256, 256)))
        zeros = Heatmap(values=np.zeros((1, 256, 256)))
        vol = aggregate_feature_volume(cams, [ones, zeros], grid)
        np.testing.assert_allclose(vol, 0.5)

    def test_unobserved_voxels_are_zero_without_nan(self):
        # both cameras look along +x from the origin; the grid sits behind them
        rot = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
        cam = CameraCalib(fx=100, fy=100, cx=32, cy=32, rotation=rot,
                          translation=np.zeros(3), image_width=64, image_height=64)
        grid = GridSpec(center=(-5000, 0, 0), extent=100.0, resolution=2)
        vol = aggregate_feature_volume([cam, cam], [Heatmap(values=np.ones((1, 64, 64)))] * 2, grid)
        assert np.all(vol == 0.0)
        assert np.all(np.isfinite(vol))

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(11)
        grid = GridSpec(center=(0, 0, 0), extent=1000.0, resolution=8)
        cams = camera_ring(2, radius=2500, height=600, target=(0, 0, 0),
                           image_size=(64, 48), focal_px=60)
        heatmaps = [Heatmap(values=rng.uniform(0, 1, size=(3, 48, 64))) for _ in cams]
        vol = aggregate_feature_volume(cams, heatmaps, grid)
        oracle = aggregate_oracle(cams, heatmaps, grid)
        assert np.abs(vol - oracle).max() <= 1e-12

    def test_partial_visibility_divisor(self):
        # voxels seen by one camera only must divide by 1, not 2
        grid = GridSpec(center=(0, 0, 0), extent=3000.0, resolution=6)
        cams = camera_ring(2, radius=2000, height=0, target=(0, 0, 0),
                           image_size=(32, 32), focal_px=40)
        rng = np.random.default_rng(5)
        heatmaps = [Heatmap(values=rng.uniform(0, 1, size=(2, 32, 32))) for _ in cams]
        vol = aggregate_feature_volume(cams, heatmaps, grid)
        oracle = aggregate_oracle(cams, heatmaps, grid)
        assert np.abs(vol - oracle).max() <= 1e-12

    def test_camera_heatmap_count_mismatch(self):
        grid = GridSpec(center=0.0, extent=10.0, resolution=2)
        cam = identity_camera()
        with pytest.raises(ValueError):
            aggregate_feature_volume([cam], [], grid)

    def test_translated_grid_equivariance(self):
        # moving grid and scene content together leaves the volume unchanged
        rng = np.random.default_rng(8)
        hm = Heatmap(values=rng.uniform(0, 1, size=(2, 64, 64)))
        cam = identity_camera(fx=80, fy=80, cx=32, cy=32, size=(64, 64))
        grid = GridSpec(center=(0, 0, 2000), extent=500.0, resolution=4)
        delta = np.array([40.0, -30.0, 100.0])
        moved_cam = CameraCalib(
            fx=cam.fx, fy=cam.fy, cx=cam.cx, cy=cam.cy,
            rotation=cam.rotation,
            translation=cam.translation - cam.rotation @ delta,
            image_width=64, image_height=64,
        )
        vol = aggregate_feature_volume([cam], [hm], grid)
        moved = aggregate_feature_volume([moved_cam], [hm], grid.translated(delta))
        np.testing.assert_allclose(moved, vol, atol=1e-9)
