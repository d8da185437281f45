"""Тесты для геометрии камеры и поз."""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from src import geometry
from src.errors import InvalidIntrinsics, InvalidPose, NonPositiveDepth
from src.geometry import EulerTriple, Intrinsics, PoseSE3, UnitQuaternion


def _random_pose(rng: np.random.Generator) -> PoseSE3:
    rotation = Rotation.random(random_state=int(rng.integers(1 << 31))).as_matrix()
    return PoseSE3(rotation, rng.uniform(-5.0, 5.0, size=3))


def test_project_backproject_round_trip(intrinsics, rng):
    for _ in range(1000):
        pose = _random_pose(rng)
        camera_point = np.array(
            [rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(1.0, 50.0)]
        )
        world_point = geometry.invert(pose).apply(camera_point[None])[0]

        pixel = geometry.project(intrinsics, pose, world_point)
        depth = pose.apply(world_point[None])[0, 2]
        restored = geometry.backproject(intrinsics, pixel, depth)

        assert np.allclose(restored, pose.apply(world_point[None])[0], atol=1e-9)


def test_project_rejects_point_behind_camera(intrinsics):
    with pytest.raises(NonPositiveDepth):
        geometry.project(intrinsics, PoseSE3.identity(), np.array([0.0, 0.0, -1.0]))
    with pytest.raises(NonPositiveDepth):
        geometry.backproject(intrinsics, np.array([10.0, 10.0]), 0.0)


def test_project_principal_point(intrinsics):
    pixel = geometry.project(intrinsics, PoseSE3.identity(), np.array([0.0, 0.0, 7.0]))
    assert pixel == pytest.approx([intrinsics.cx, intrinsics.cy])


def test_project_points_marks_points_behind_with_nan(intrinsics):
    points = np.array([[0.0, 0.0, 2.0], [0.0, 0.0, -2.0]])
    pixels, depths = geometry.project_points(intrinsics, PoseSE3.identity(), points)
    assert np.allclose(pixels[0], [intrinsics.cx, intrinsics.cy])
    assert np.all(np.isnan(pixels[1]))
    assert depths.tolist() == [2.0, -2.0]


def test_inverse_matrix_with_skew():
    camera = Intrinsics(fx=120.0, fy=110.0, cx=60.0, cy=45.0, skew=0.7)
    assert np.allclose(camera.inverse_matrix @ camera.matrix, np.eye(3), atol=1e-12)


def test_intrinsics_validation():
    with pytest.raises(InvalidIntrinsics):
        Intrinsics(fx=0.0, fy=1.0, cx=0.0, cy=0.0)
    with pytest.raises(InvalidIntrinsics):
        Intrinsics(fx=1.0, fy=1.0, cx=float("nan"), cy=0.0)


def test_group_axioms(rng):
    for _ in range(200):
        a, b, c = (_random_pose(rng) for _ in range(3))
        identity = geometry.compose(a, geometry.invert(a))
        assert np.allclose(identity.matrix, np.eye(4), atol=1e-9)

        left = geometry.compose(geometry.compose(a, b), c)
        right = geometry.compose(a, geometry.compose(b, c))
        assert np.allclose(left.matrix, right.matrix, atol=1e-9)

        twice = geometry.invert(geometry.invert(a))
        assert np.allclose(twice.matrix, a.matrix, atol=1e-12)


def test_compose_applies_second_first(rng):
    a, b = _random_pose(rng), _random_pose(rng)
    points = rng.normal(size=(5, 3))
    assert np.allclose(geometry.compose(a, b).apply(points), a.apply(b.apply(points)))


def test_pose_center_is_camera_origin(rng):
    pose = _random_pose(rng)
    assert np.allclose(pose.apply(pose.center[None])[0], 0.0, atol=1e-12)


def test_pose_rejects_non_orthonormal_rotation():
    with pytest.raises(InvalidPose):
        PoseSE3(np.diag([1.0, 1.0, 1.01]), np.zeros(3))
    with pytest.raises(InvalidPose):
        PoseSE3(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_from_approximate_projects_to_rotation():
    noisy = geometry.axis_rotation(2, 30.0) + 1e-4
    pose = PoseSE3.from_approximate(noisy, np.zeros(3))
    assert np.allclose(pose.rotation.T @ pose.rotation, np.eye(3), atol=1e-12)


def test_pose_arrays_are_read_only():
    pose = PoseSE3.identity()
    with pytest.raises(ValueError):
        pose.translation[0] = 1.0


def test_euler_round_trip(rng):
    for _ in range(100):
        euler = EulerTriple(*rng.uniform([-170, -80, -170], [170, 80, 170]))
        restored = geometry.rotation_to_euler(geometry.euler_to_rotation(euler))
        assert np.allclose(restored.as_array(), euler.as_array(), atol=1e-9)
        assert not restored.gimbal_lock


def test_single_axis_rotation_gives_single_angle():
    euler = geometry.rotation_to_euler(geometry.axis_rotation(2, 10.0))
    assert euler.yaw == pytest.approx(10.0)
    assert euler.max_abs() == pytest.approx(10.0)


def test_gimbal_lock_is_flagged():
    rotation = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
    euler = geometry.rotation_to_euler(rotation)
    assert euler.gimbal_lock
    assert abs(euler.pitch) == pytest.approx(90.0, abs=1e-4)


def test_gimbal_flag_follows_pitch_tolerance():
    near = geometry.euler_to_rotation(EulerTriple(0.0, 90.0 - 1e-3, 0.0))
    assert not geometry.rotation_to_euler(near).gimbal_lock
    exact = geometry.euler_to_rotation(EulerTriple(30.0, -90.0, 0.0))
    assert geometry.rotation_to_euler(exact).gimbal_lock


def test_euler_conversion_in_threads_keeps_warning_hooks():
    locked = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
    free = geometry.axis_rotation(0, 20.0)
    hook = warnings.showwarning
    with ThreadPoolExecutor(max_workers=8) as pool:
        flags = list(
            pool.map(
                lambda i: geometry.rotation_to_euler(
                    locked if i % 2 else free
                ).gimbal_lock,
                range(400),
            )
        )
    assert flags == [bool(i % 2) for i in range(400)]
    assert warnings.showwarning is hook


def test_quaternion_sign_invariance(rng):
    for _ in range(50):
        q = UnitQuaternion.from_array(rng.normal(size=4))
        negated = UnitQuaternion.from_array(-q.as_array())
        assert np.array_equal(
            geometry.quaternion_to_rotation(q), geometry.quaternion_to_rotation(negated)
        )


def test_quaternion_round_trip(rng):
    pose = _random_pose(rng)
    q = geometry.rotation_to_quaternion(pose.rotation)
    assert np.allclose(q.to_rotation(), pose.rotation, atol=1e-12)


def test_quaternion_must_be_unit():
    with pytest.raises(InvalidPose):
        UnitQuaternion(1.0, 1.0, 0.0, 0.0)


def test_bearings_are_unit(intrinsics, rng):
    rays = geometry.bearings(intrinsics, rng.uniform(0, 90, size=(20, 2)))
    assert np.allclose(np.linalg.norm(rays, axis=1), 1.0)
