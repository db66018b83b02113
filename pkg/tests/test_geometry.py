import math
import sys
import unittest
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from src.config import deg_to_rad
from src.errors import BehindCamera, DegenerateInput, InsufficientPoints, ShapeMismatch
from src.geometry import (
    CameraIntrinsics,
    PointSet3,
    RigidPose,
    Rotation3,
    procrustes_align,
    project_points,
    relative_rotation_error,
    relative_translation_error,
    reprojection_error,
    solve_pnp_epnp,
    svd3,
)
from src.synthetic import DEFAULT_INTRINSICS, box_corners, random_rotation


class TestRotationErrors(unittest.TestCase):
    def test_identity_has_zero_error(self):
        self.assertEqual(relative_rotation_error(Rotation3.identity(), Rotation3.identity()), 0.0)

    def test_single_axis_rotation_error_equals_angle(self):
        rz = Rotation3.about_axis("z", deg_to_rad(5.0))
        self.assertAlmostEqual(relative_rotation_error(Rotation3.identity(), rz), 0.08726646259971647, places=12)
        self.assertAlmostEqual(relative_rotation_error(rz, Rotation3.identity()), 0.08726646259971647, places=12)

    def test_half_turn_is_pi(self):
        rx = Rotation3.about_axis("x", math.pi)
        self.assertAlmostEqual(relative_rotation_error(rx, Rotation3.identity()), math.pi, places=7)

    def test_translation_error(self):
        self.assertEqual(relative_translation_error([0, 0, 0], [3, 4, 0]), 5.0)
        self.assertEqual(relative_translation_error([1, 2, 3], [1, 2, 3]), 0.0)
        with self.assertRaises(ShapeMismatch):
            relative_translation_error([1, 2], [1, 2])

    def test_invalid_rotations_rejected(self):
        with self.assertRaises(DegenerateInput):
            Rotation3(np.eye(3) * 2.0)
        with self.assertRaises(DegenerateInput):
            Rotation3(np.diag([1.0, 1.0, -1.0]))
        with self.assertRaises(ShapeMismatch):
            Rotation3(np.eye(2))

    def test_nearest_projects_noisy_matrix(self):
        r = Rotation3.about_axis([1.0, 2.0, 3.0], 0.7)
        noisy = r.m + 1e-4 * np.random.default_rng(0).normal(size=(3, 3))
        self.assertLess(relative_rotation_error(Rotation3.nearest(noisy), r), 1e-3)

    def test_pose_compose_matches_sequential_apply(self):
        rng = np.random.default_rng(3)
        a = RigidPose(random_rotation(rng), rng.normal(size=3))
        b = RigidPose(random_rotation(rng), rng.normal(size=3))
        pts = rng.normal(size=(5, 3))
        np.testing.assert_allclose(a.compose(b).apply(pts), a.apply(b.apply(pts)), atol=1e-12)


class TestSvd3(unittest.TestCase):
    def test_random_matrices_reconstruct(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            m = rng.normal(size=(3, 3))
            u, s, vt = svd3(m)
            np.testing.assert_allclose(u @ np.diag(s) @ vt, m, atol=1e-10)
            np.testing.assert_allclose(u.T @ u, np.eye(3), atol=1e-10)
            np.testing.assert_allclose(vt @ vt.T, np.eye(3), atol=1e-10)
            self.assertTrue(np.all(np.diff(s) <= 0))
            np.testing.assert_allclose(s, np.linalg.svd(m, compute_uv=False), atol=1e-10)

    def test_rank_deficient_matrix(self):
        m = np.outer([1.0, 2.0, 3.0], [4.0, 5.0, 6.0])
        u, s, vt = svd3(m)
        np.testing.assert_allclose(u @ np.diag(s) @ vt, m, atol=1e-9)
        np.testing.assert_allclose(u.T @ u, np.eye(3), atol=1e-10)
        self.assertAlmostEqual(s[1], 0.0, places=9)

    def test_zero_matrix(self):
        u, s, vt = svd3(np.zeros((3, 3)))
        np.testing.assert_array_equal(s, np.zeros(3))
        np.testing.assert_allclose(u.T @ u, np.eye(3), atol=1e-12)


class TestProcrustes(unittest.TestCase):
    def test_recovers_similarity_transform(self):
        rng = np.random.default_rng(1)
        x = rng.normal(scale=50.0, size=(21, 3))
        r = random_rotation(rng)
        y = 1.7 * r.apply(x) + np.array([10.0, -20.0, 300.0])
        fit = procrustes_align(x, y)
        self.assertAlmostEqual(fit.scale, 1.7, places=10)
        np.testing.assert_allclose(fit.rotation.m, r.m, atol=1e-10)
        np.testing.assert_allclose(fit.translation, [10.0, -20.0, 300.0], atol=1e-8)
        np.testing.assert_allclose(fit.apply(x), y, atol=1e-8)

    def test_rigid_mode_keeps_unit_scale(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(10, 3))
        fit = procrustes_align(x, 3.0 * x, with_scale=False)
        self.assertEqual(fit.scale, 1.0)
        np.testing.assert_allclose(fit.rotation.m, np.eye(3), atol=1e-10)

    def test_reflected_target_still_gives_rotation(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(10, 3))
        y = x * np.array([1.0, 1.0, -1.0])
        fit = procrustes_align(PointSet3(x), PointSet3(y))
        self.assertAlmostEqual(float(np.linalg.det(fit.rotation.m)), 1.0, places=9)

    def test_degenerate_inputs(self):
        with self.assertRaises(DegenerateInput):
            procrustes_align(np.zeros((2, 3)), np.zeros((2, 3)))
        with self.assertRaises(DegenerateInput):
            procrustes_align(np.ones((5, 3)), np.random.default_rng(0).normal(size=(5, 3)))
        line = np.outer(np.arange(5.0), [1.0, 2.0, 3.0])
        with self.assertRaises(DegenerateInput):
            procrustes_align(line, line + 1.0)
        with self.assertRaises(ShapeMismatch):
            procrustes_align(np.zeros((4, 3)), np.zeros((5, 3)))


class TestProjection(unittest.TestCase):
    def test_principal_point(self):
        uv = project_points(np.array([[0.0, 0.0, 1000.0]]), RigidPose.identity(), DEFAULT_INTRINSICS)
        np.testing.assert_allclose(uv, [[320.0, 240.0]])

    def test_off_axis_point(self):
        cam = CameraIntrinsics(fx=500.0, fy=400.0, cx=0.0, cy=0.0)
        uv = project_points(np.array([[10.0, 20.0, 100.0]]), RigidPose.identity(), cam)
        np.testing.assert_allclose(uv, [[50.0, 80.0]])

    def test_behind_camera(self):
        with self.assertRaises(BehindCamera):
            project_points(np.array([[0.0, 0.0, -5.0]]), RigidPose.identity(), DEFAULT_INTRINSICS)
        self.assertEqual(
            reprojection_error(np.array([[0.0, 0.0, -5.0]]), np.zeros((1, 2)), RigidPose.identity(), DEFAULT_INTRINSICS),
            math.inf,
        )

    def test_intrinsics_validation(self):
        with self.assertRaises(DegenerateInput):
            CameraIntrinsics(fx=0.0, fy=1.0, cx=0.0, cy=0.0)


class TestEpnp(unittest.TestCase):
    def _pose(self, rng, depth=800.0):
        return RigidPose(random_rotation(rng), np.array([rng.uniform(-50, 50), rng.uniform(-50, 50), depth]))

    def test_noise_free_box_corners(self):
        rng = np.random.default_rng(7)
        corners = box_corners((120.0, 90.0, 60.0))
        for depth in (500.0, 1000.0, 2000.0):
            pose = self._pose(rng, depth)
            image = project_points(corners, pose, DEFAULT_INTRINSICS)
            est = solve_pnp_epnp(corners, image, DEFAULT_INTRINSICS)
            self.assertLess(relative_rotation_error(est.rotation, pose.rotation), 1e-6)
            self.assertLess(relative_translation_error(est.translation, pose.translation), 1e-3)

    def test_without_refinement(self):
        rng = np.random.default_rng(8)
        corners = box_corners()
        pose = self._pose(rng)
        est = solve_pnp_epnp(corners, project_points(corners, pose, DEFAULT_INTRINSICS), DEFAULT_INTRINSICS, refine=False)
        self.assertLess(relative_translation_error(est.translation, pose.translation), 1e-3)

    def test_planar_points(self):
        rng = np.random.default_rng(9)
        grid = np.array([[x, y, 0.0] for x in (-50.0, 0.0, 50.0) for y in (-40.0, 40.0)])
        pose = self._pose(rng)
        est = solve_pnp_epnp(grid, project_points(grid, pose, DEFAULT_INTRINSICS), DEFAULT_INTRINSICS)
        self.assertLess(relative_rotation_error(est.rotation, pose.rotation), 1e-5)
        self.assertLess(relative_translation_error(est.translation, pose.translation), 1e-2)

    def test_pixel_noise_keeps_pose_close(self):
        rng = np.random.default_rng(10)
        corners = box_corners()
        pose = self._pose(rng, 600.0)
        image = project_points(corners, pose, DEFAULT_INTRINSICS) + rng.normal(scale=1.0, size=(8, 2))
        est = solve_pnp_epnp(corners, image, DEFAULT_INTRINSICS)
        self.assertLess(relative_translation_error(est.translation, pose.translation), 20.0)

    def test_too_few_points(self):
        corners = box_corners()[:3]
        with self.assertRaises(InsufficientPoints):
            solve_pnp_epnp(corners, np.zeros((3, 2)), DEFAULT_INTRINSICS)

    def test_image_shape_mismatch(self):
        with self.assertRaises(ShapeMismatch):
            solve_pnp_epnp(box_corners(), np.zeros((7, 2)), DEFAULT_INTRINSICS)


if __name__ == "__main__":
    unittest.main()
