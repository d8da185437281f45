"""Тесты для P3P, выбора решения и цикла MLESAC."""

from __future__ import annotations

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from src import geometry, robust_pnp
from src.errors import ConfigError, DegenerateConfiguration
from src.geometry import PoseSE3
from src.robust_pnp import (
    CorrespondenceSet2D3D,
    EstimateStatus,
    FailureReason,
    PoseEstimate,
    RansacConfig,
)


def _random_pose(rng: np.random.Generator) -> PoseSE3:
    rotation = Rotation.from_rotvec(rng.uniform(-0.4, 0.4, size=3)).as_matrix()
    return PoseSE3(rotation, rng.uniform(-2.0, 2.0, size=3))


def _scene(intrinsics, rng, count=20):
    """Точки перед камерой и их точные проекции."""

    pose = _random_pose(rng)
    pixels = rng.uniform([5.0, 5.0], [90.0, 66.0], size=(count, 2))
    depths = rng.uniform(4.0, 20.0, size=count)
    camera_points = geometry.backproject_points(intrinsics, pixels, depths)
    world_points = geometry.invert(pose).apply(camera_points)
    return pose, pixels, world_points


def test_p3p_contains_true_pose(intrinsics, rng):
    for _ in range(50):
        pose, pixels, points = _scene(intrinsics, rng, count=4)
        candidates = robust_pnp.p3p_solve(pixels[:3], points[:3], intrinsics)
        assert 1 <= len(candidates) <= 4
        chosen = robust_pnp.disambiguate(candidates, pixels[3], points[3], intrinsics)
        assert np.linalg.norm(chosen.center - pose.center) < 1e-4


def test_p3p_rejects_collinear_points(intrinsics):
    points = np.array([[0.0, 0.0, 5.0], [1.0, 0.0, 5.0], [2.0, 0.0, 5.0]])
    pixels, _ = geometry.project_points(intrinsics, PoseSE3.identity(), points)
    with pytest.raises(DegenerateConfiguration):
        robust_pnp.p3p_solve(pixels, points, intrinsics)


def test_disambiguate_requires_candidates(intrinsics):
    with pytest.raises(ValueError):
        robust_pnp.disambiguate([], np.zeros(2), np.ones(3), intrinsics)


def test_reprojection_errors_behind_camera_is_inf(intrinsics):
    points = np.array([[0.0, 0.0, 5.0], [0.0, 0.0, -5.0]])
    pixels = np.array([[intrinsics.cx + 3.0, intrinsics.cy + 4.0], [0.0, 0.0]])
    errors = robust_pnp.reprojection_errors(
        intrinsics, PoseSE3.identity(), pixels, points
    )
    assert errors[0] == pytest.approx(5.0)
    assert np.isinf(errors[1])


def test_truncated_score_caps_each_residual():
    errors = np.array([0.0, 1.0, 3.0, np.inf])
    assert robust_pnp.truncated_score(errors, 2.0) == pytest.approx(0 + 1 + 4 + 4)


def test_mlesac_noiseless_is_exact(intrinsics, rng):
    cfg = RansacConfig(seed=11)
    for _ in range(30):
        pose, pixels, points = _scene(intrinsics, rng)
        estimate = robust_pnp.mlesac_pnp(
            CorrespondenceSet2D3D(pixels, points), intrinsics, cfg
        )
        assert estimate.succeeded
        assert np.linalg.norm(estimate.pose.center - pose.center) < 1e-4
        difference = estimate.pose.rotation @ pose.rotation.T
        assert geometry.rotation_to_euler(difference).max_abs() < 1e-3
        assert estimate.inlier_count == 20


def test_mlesac_tolerates_outliers(intrinsics, rng):
    cfg = RansacConfig(seed=5, max_iterations=500)
    failures = 0
    for _ in range(20):
        pose, pixels, points = _scene(intrinsics, rng, count=40)
        noisy = pixels + rng.normal(scale=0.5, size=pixels.shape)
        outliers = rng.choice(40, size=12, replace=False)
        noisy[outliers] = rng.uniform([0.0, 0.0], [95.0, 71.0], size=(12, 2))
        estimate = robust_pnp.mlesac_pnp(
            CorrespondenceSet2D3D(noisy, points), intrinsics, cfg
        )
        if not estimate.succeeded:
            failures += 1
            continue
        if np.linalg.norm(estimate.pose.center - pose.center) > 0.5:
            failures += 1
    assert failures <= 1


def test_mlesac_is_deterministic(intrinsics, rng):
    _, pixels, points = _scene(intrinsics, rng)
    pixels = pixels + rng.normal(scale=1.0, size=pixels.shape)
    corrs = CorrespondenceSet2D3D(pixels, points)
    first = robust_pnp.mlesac_pnp(corrs, intrinsics, RansacConfig(seed=3))
    second = robust_pnp.mlesac_pnp(corrs, intrinsics, RansacConfig(seed=3))
    assert np.array_equal(first.pose.matrix, second.pose.matrix)
    assert first.final_cost == second.final_cost


def test_mlesac_needs_four_correspondences(intrinsics, rng):
    _, pixels, points = _scene(intrinsics, rng, count=3)
    estimate = robust_pnp.mlesac_pnp(
        CorrespondenceSet2D3D(pixels, points), intrinsics, RansacConfig()
    )
    assert estimate.status is EstimateStatus.FAILURE
    assert estimate.reason is FailureReason.INSUFFICIENT_CORRESPONDENCES


def test_mlesac_without_consensus(intrinsics, rng):
    _, _, points = _scene(intrinsics, rng, count=30)
    garbage = rng.uniform([0.0, 0.0], [95.0, 71.0], size=(30, 2))
    cfg = RansacConfig(seed=1, max_iterations=50, min_inliers=25)
    estimate = robust_pnp.mlesac_pnp(
        CorrespondenceSet2D3D(garbage, points), intrinsics, cfg
    )
    assert estimate.reason is FailureReason.NO_CONSENSUS


def test_ransac_config_validation():
    with pytest.raises(ConfigError):
        RansacConfig(inlier_threshold=0.0)
    with pytest.raises(ConfigError):
        RansacConfig(confidence=1.0)
    with pytest.raises(ConfigError):
        RansacConfig(min_inliers=3)


def test_pose_estimate_invariants():
    with pytest.raises(ValueError):
        PoseEstimate(robust_pnp.Method.FB, EstimateStatus.SUCCESS)
    with pytest.raises(ValueError):
        PoseEstimate(robust_pnp.Method.FB, EstimateStatus.FAILURE)
    failure = PoseEstimate.failure(
        robust_pnp.Method.PM, FailureReason.SEARCH_DIVERGED, match_count=7
    )
    assert failure.match_count == 7
    assert not failure.succeeded
