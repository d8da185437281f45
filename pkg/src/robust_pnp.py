"""P3P с выбором решения по четвёртой точке внутри цикла MLESAC."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.polynomial import Polynomial
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from .errors import ConfigError, DegenerateConfiguration
from .geometry import Intrinsics, PoseSE3, bearings
from .logger import get_logger

logger = get_logger(__name__)

COLLINEAR_TOLERANCE = 1e-9
ROOT_IMAG_TOLERANCE = 1e-6
P3P_REPROJECTION_TOLERANCE = 1e-6
NEWTON_STEPS = 3
MIN_DEPTH = 1e-9
MIN_SAMPLE = 4


class Method(str, enum.Enum):
    FB = "FB"
    PM = "PM"
    MI = "MI"
    HY = "HY"


class EstimateStatus(str, enum.Enum):
    SUCCESS = "Success"
    FAILURE = "Failure"


class FailureReason(str, enum.Enum):
    INSUFFICIENT_CORRESPONDENCES = "InsufficientCorrespondences"
    NO_CONSENSUS = "NoConsensus"
    SEARCH_DIVERGED = "SearchDiverged"
    NO_SUCCESSFUL_ESTIMATES = "NoSuccessfulEstimates"


@dataclass(slots=True, frozen=True, eq=False)
class CorrespondenceSet2D3D:
    """Пары (пиксель запроса, 3D-точка в системе опорной камеры)."""

    query_pixels: np.ndarray
    points: np.ndarray

    def __post_init__(self) -> None:
        pixels = np.array(self.query_pixels, dtype=np.float64).reshape(-1, 2)
        points = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        if len(pixels) != len(points):
            raise ValueError("Число пикселей и 3D-точек должно совпадать")
        if not (np.all(np.isfinite(pixels)) and np.all(np.isfinite(points))):
            raise ValueError("Соответствия содержат нечисловые координаты")
        pixels.setflags(write=False)
        points.setflags(write=False)
        object.__setattr__(self, "query_pixels", pixels)
        object.__setattr__(self, "points", points)

    def __len__(self) -> int:
        return int(len(self.points))

    def subset(self, indices: np.ndarray) -> CorrespondenceSet2D3D:
        return CorrespondenceSet2D3D(self.query_pixels[indices], self.points[indices])


@dataclass(slots=True, frozen=True)
class RansacConfig:
    """Параметры MLESAC; ``min_inliers`` задаёт порог успешного консенсуса."""

    max_iterations: int = 1000
    inlier_threshold: float = 2.0
    confidence: float = 0.99
    seed: int = 0
    min_inliers: int = MIN_SAMPLE
    refine_iterations: int = 10

    def __post_init__(self) -> None:
        if self.inlier_threshold <= 0:
            raise ConfigError("inlier_threshold должен быть положительным")
        if not 0.0 < self.confidence < 1.0:
            raise ConfigError("confidence должна лежать в (0, 1)")
        if self.max_iterations < 1 or self.refine_iterations < 0:
            raise ConfigError("Некорректное число итераций")
        if self.min_inliers < MIN_SAMPLE:
            raise ConfigError(f"min_inliers не может быть меньше {MIN_SAMPLE}")


@dataclass(slots=True, frozen=True, eq=False)
class PoseEstimate:
    """Результат оценки позы: поза мир -> камера запроса и диагностика."""

    method: Method
    status: EstimateStatus
    pose: PoseSE3 | None = None
    reason: FailureReason | None = None
    inlier_count: int = 0
    final_cost: float = math.inf
    match_count: int = 0
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.status is EstimateStatus.SUCCESS and self.pose is None:
            raise ValueError("Успешная оценка обязана содержать позу")
        if self.status is EstimateStatus.FAILURE and self.reason is None:
            raise ValueError("Неуспешная оценка обязана содержать причину")

    @classmethod
    def failure(
        cls, method: Method, reason: FailureReason, **diagnostics: Any
    ) -> PoseEstimate:
        match_count = int(diagnostics.pop("match_count", 0))
        return cls(
            method=method,
            status=EstimateStatus.FAILURE,
            reason=reason,
            match_count=match_count,
            diagnostics=diagnostics,
        )

    @property
    def succeeded(self) -> bool:
        return self.status is EstimateStatus.SUCCESS


def reprojection_errors(
    intrinsics: Intrinsics, pose: PoseSE3, pixels: np.ndarray, points: np.ndarray
) -> np.ndarray:
    """Евклидовы ошибки репроекции; для точек позади камеры inf."""

    camera_points = pose.apply(points)
    depths = camera_points[:, 2]
    errors = np.full(len(points), np.inf)
    in_front = depths > MIN_DEPTH
    if np.any(in_front):
        projected = camera_points[in_front] @ intrinsics.matrix.T
        projected = projected[:, :2] / projected[:, 2:3]
        errors[in_front] = np.linalg.norm(projected - pixels[in_front], axis=1)
    return errors


def _is_collinear(points: np.ndarray) -> bool:
    first, second = points[1] - points[0], points[2] - points[0]
    scale = max(np.dot(first, first), np.dot(second, second), 1e-300)
    return float(np.linalg.norm(np.cross(first, second))) <= COLLINEAR_TOLERANCE * scale


def _real_roots(polynomial: Polynomial) -> list[float]:
    polynomial = polynomial.trim()
    if polynomial.degree() < 1:
        return []
    derivative = polynomial.deriv()
    roots = []
    for root in polynomial.roots():
        tolerance = ROOT_IMAG_TOLERANCE * max(1.0, abs(root.real))
        if not np.isfinite(root) or abs(root.imag) > tolerance:
            continue
        value = float(root.real)
        for _ in range(NEWTON_STEPS):
            slope = derivative(value)
            if slope == 0.0:
                break
            candidate = value - polynomial(value) / slope
            if abs(polynomial(candidate)) > abs(polynomial(value)):
                break
            value = candidate
        roots.append(value)
    return roots


def _rigid_fit(camera_points: np.ndarray, world_points: np.ndarray) -> PoseSE3:
    camera_mean = camera_points.mean(axis=0)
    world_mean = world_points.mean(axis=0)
    rotation, _ = Rotation.align_vectors(
        camera_points - camera_mean, world_points - world_mean
    )
    matrix = rotation.as_matrix()
    return PoseSE3(matrix, camera_mean - matrix @ world_mean)


def p3p_solve(
    pixels: np.ndarray, points: np.ndarray, intrinsics: Intrinsics
) -> list[PoseSE3]:
    """Решение Грюнерта: до четырёх поз по трём соответствиям.

    Расстояния вдоль лучей записываются как s2 = u s1, s3 = v s1;
    исключение u даёт многочлен четвёртой степени по v.
    """

    pixels = np.asarray(pixels, dtype=np.float64).reshape(3, 2)
    points = np.asarray(points, dtype=np.float64).reshape(3, 3)
    if _is_collinear(points):
        raise DegenerateConfiguration("Три точки выборки лежат на одной прямой")

    rays = bearings(intrinsics, pixels)
    a = np.linalg.norm(points[1] - points[2])
    b = np.linalg.norm(points[0] - points[2])
    c = np.linalg.norm(points[0] - points[1])
    cos_alpha = float(rays[1] @ rays[2])
    cos_beta = float(rays[0] @ rays[2])
    cos_gamma = float(rays[0] @ rays[1])

    k = (c * c - a * a) / (b * b)
    ratio_cb = (c * c) / (b * b)
    v = Polynomial([0.0, 1.0])
    span = 1.0 + v**2 - 2.0 * cos_beta * v
    numerator = v**2 - 1.0 + k * span
    denominator = 2.0 * (cos_alpha * v - cos_gamma)
    quartic = (
        numerator**2
        - 2.0 * cos_gamma * numerator * denominator
        + denominator**2 * (1.0 - ratio_cb * span)
    )

    candidates: list[PoseSE3] = []
    for root in _real_roots(quartic):
        if root <= 0:
            continue
        scale_d = float(denominator(root))
        if abs(scale_d) < 1e-12:
            continue
        u = float(numerator(root)) / scale_d
        base = float(span(root))
        if u <= 0 or base <= 0:
            continue
        s1 = math.sqrt(b * b / base)
        distances = np.array([s1, u * s1, root * s1])
        camera_points = rays * distances[:, None]
        try:
            pose = _rigid_fit(camera_points, points)
        except (ValueError, np.linalg.LinAlgError):
            continue
        errors = reprojection_errors(intrinsics, pose, pixels, points)
        if np.all(errors <= P3P_REPROJECTION_TOLERANCE):
            candidates.append(pose)

    if not candidates:
        raise DegenerateConfiguration("P3P не имеет вещественных решений")
    return candidates


def disambiguate(
    candidates: list[PoseSE3],
    pixel: np.ndarray,
    point: np.ndarray,
    intrinsics: Intrinsics,
) -> PoseSE3:
    """Выбирает кандидата с минимальной ошибкой репроекции четвёртой точки."""

    if not candidates:
        raise ValueError("Список кандидатов пуст")
    pixel = np.asarray(pixel, dtype=np.float64).reshape(1, 2)
    point = np.asarray(point, dtype=np.float64).reshape(1, 3)
    errors = [
        float(reprojection_errors(intrinsics, pose, pixel, point)[0]) ** 2
        for pose in candidates
    ]
    return candidates[int(np.argmin(errors))]


def truncated_score(errors: np.ndarray, threshold: float) -> float:
    """Сумма min(r^2, T^2); точки позади камеры вносят T^2."""

    squared = np.minimum(np.nan_to_num(errors, posinf=threshold) ** 2, threshold**2)
    return float(squared.sum())


def _required_iterations(inlier_ratio: float, confidence: float, cap: int) -> int:
    sample_success = inlier_ratio**MIN_SAMPLE
    if sample_success >= 1.0 - 1e-12:
        return 1
    if sample_success <= 0.0:
        return cap
    needed = math.log(1.0 - confidence) / math.log(1.0 - sample_success)
    return min(cap, max(1, math.ceil(needed)))


def _refine(
    pose: PoseSE3, corrs: CorrespondenceSet2D3D, intrinsics: Intrinsics, iterations: int
) -> PoseSE3 | None:
    """Минимизация суммарной квадратичной ошибки репроекции по инлаерам."""

    if iterations == 0 or 2 * len(corrs) < 6:
        return None
    base_rotation = Rotation.from_matrix(pose.rotation)
    matrix = intrinsics.matrix

    def residuals(params: np.ndarray) -> np.ndarray:
        rotation = (Rotation.from_rotvec(params[:3]) * base_rotation).as_matrix()
        camera_points = corrs.points @ rotation.T + pose.translation + params[3:]
        depths = np.maximum(camera_points[:, 2], MIN_DEPTH)
        projected = camera_points @ matrix.T
        projected = projected[:, :2] / depths[:, None]
        return (projected - corrs.query_pixels).ravel()

    try:
        result = least_squares(
            residuals, np.zeros(6), method="lm", max_nfev=iterations * 7
        )
    except ValueError:
        return None
    if not np.all(np.isfinite(result.x)):
        return None
    rotation = (Rotation.from_rotvec(result.x[:3]) * base_rotation).as_matrix()
    return PoseSE3.from_approximate(rotation, pose.translation + result.x[3:])


def mlesac_pnp(
    corrs: CorrespondenceSet2D3D, intrinsics: Intrinsics, cfg: RansacConfig
) -> PoseEstimate:
    """Робастная оценка позы: выборки по 4, оценка усечённой квадратичной функцией."""

    count = len(corrs)
    if count < MIN_SAMPLE:
        return PoseEstimate.failure(
            Method.FB, FailureReason.INSUFFICIENT_CORRESPONDENCES, correspondences=count
        )

    rng = np.random.default_rng(cfg.seed)
    threshold = cfg.inlier_threshold
    best_pose: PoseSE3 | None = None
    best_score = math.inf
    needed = cfg.max_iterations
    iterations = 0
    for iteration in range(cfg.max_iterations):
        if iteration >= needed:
            break
        iterations = iteration + 1
        sample = rng.choice(count, size=MIN_SAMPLE, replace=False)
        try:
            candidates = p3p_solve(
                corrs.query_pixels[sample[:3]], corrs.points[sample[:3]], intrinsics
            )
        except DegenerateConfiguration:
            continue
        pose = disambiguate(
            candidates,
            corrs.query_pixels[sample[3]],
            corrs.points[sample[3]],
            intrinsics,
        )
        errors = reprojection_errors(intrinsics, pose, corrs.query_pixels, corrs.points)
        score = truncated_score(errors, threshold)
        if score < best_score:
            best_score, best_pose = score, pose
            inlier_ratio = float(np.count_nonzero(errors <= threshold)) / count
            needed = _required_iterations(
                inlier_ratio, cfg.confidence, cfg.max_iterations
            )

    if best_pose is None:
        return PoseEstimate.failure(
            Method.FB,
            FailureReason.NO_CONSENSUS,
            correspondences=count,
            iterations=iterations,
        )

    errors = reprojection_errors(
        intrinsics, best_pose, corrs.query_pixels, corrs.points
    )
    inliers = np.flatnonzero(errors <= threshold)
    if len(inliers) < cfg.min_inliers:
        logger.debug(
            "MLESAC: недостаточно инлаеров",
            context={"inliers": len(inliers), "required": cfg.min_inliers},
        )
        return PoseEstimate.failure(
            Method.FB,
            FailureReason.NO_CONSENSUS,
            correspondences=count,
            inliers=int(len(inliers)),
            iterations=iterations,
        )

    final_pose, final_score, refined = best_pose, best_score, False
    candidate = _refine(
        best_pose, corrs.subset(inliers), intrinsics, cfg.refine_iterations
    )
    if candidate is not None:
        candidate_errors = reprojection_errors(
            intrinsics, candidate, corrs.query_pixels, corrs.points
        )
        candidate_score = truncated_score(candidate_errors, threshold)
        candidate_inliers = int(np.count_nonzero(candidate_errors <= threshold))
        if candidate_score <= best_score and candidate_inliers >= cfg.min_inliers:
            final_pose, final_score, refined = candidate, candidate_score, True

    final_errors = reprojection_errors(
        intrinsics, final_pose, corrs.query_pixels, corrs.points
    )
    inlier_count = int(np.count_nonzero(final_errors <= threshold))
    logger.debug(
        "MLESAC завершён",
        context={
            "correspondences": count,
            "inliers": inlier_count,
            "iterations": iterations,
            "score": final_score,
            "refined": refined,
        },
    )
    return PoseEstimate(
        method=Method.FB,
        status=EstimateStatus.SUCCESS,
        pose=final_pose,
        inlier_count=inlier_count,
        final_cost=final_score,
        diagnostics={"iterations": iterations, "refined": refined},
    )
