"""Слияние оценок позы по нескольким опорным кадрам: maxf, avg, wavg, rwavg."""

from __future__ import annotations

import enum
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .errors import AllZeroWeights, NoSuccessfulEstimates
from .geometry import (
    PoseSE3,
    UnitQuaternion,
    quaternion_to_rotation,
    rotation_to_quaternion,
)
from .logger import get_logger
from .robust_pnp import EstimateStatus, FailureReason, Method, PoseEstimate

logger = get_logger(__name__)


class FusionStrategy(str, enum.Enum):
    MAXF = "maxf"
    AVG = "avg"
    WAVG = "wavg"
    RWAVG = "rwavg"


@dataclass(slots=True, frozen=True, eq=False)
class WeightedPose:
    """Оценка по одному опорному кадру и её вес (число сопоставлений)."""

    estimate: PoseEstimate
    weight: float
    source_id: int

    def __post_init__(self) -> None:
        if not self.weight >= 0:
            raise ValueError(f"Вес должен быть неотрицательным, получено {self.weight}")


def _canonical(vector: np.ndarray) -> np.ndarray:
    nonzero = np.flatnonzero(np.abs(vector) > 0)
    if len(nonzero) and vector[nonzero[0]] < 0:
        return -vector
    return vector


def average_rotations(
    quaternions: Sequence[UnitQuaternion], weights: Sequence[float]
) -> UnitQuaternion:
    """Взвешенное хордовое среднее: главный собственный вектор суммы w q q^T."""

    if len(quaternions) == 0 or len(quaternions) != len(weights):
        raise ValueError("Нужен хотя бы один кватернион и по весу на каждый")
    weights = np.asarray(weights, dtype=np.float64)
    if np.any(weights < 0):
        raise ValueError("Веса должны быть неотрицательными")
    total = weights.sum()
    if total == 0:
        raise AllZeroWeights("Все веса усреднения поворотов равны нулю")
    normalized = weights / total
    stacked = np.array([q.as_array() for q in quaternions])
    accumulation = np.einsum("i,ij,ik->jk", normalized, stacked, stacked)
    _, vectors = np.linalg.eigh(accumulation)
    return UnitQuaternion.from_array(_canonical(vectors[:, -1]))


def _successful(weighted: Sequence[WeightedPose]) -> list[WeightedPose]:
    successes = [item for item in weighted if item.estimate.succeeded]
    if not successes:
        raise NoSuccessfulEstimates("Нет успешных оценок для слияния")
    return successes


def _weighted_mean(items: Sequence[WeightedPose]) -> PoseSE3:
    weights = np.array([item.weight for item in items], dtype=np.float64)
    poses = [item.estimate.pose for item in items]
    first = poses[0].matrix
    if all(np.array_equal(pose.matrix, first) for pose in poses[1:]):
        return poses[0]
    rotation = quaternion_to_rotation(
        average_rotations(
            [rotation_to_quaternion(pose.rotation) for pose in poses], weights
        )
    )
    normalized = weights / weights.sum()
    translations = np.array([pose.translation for pose in poses])
    translation = np.einsum("i,ij->j", normalized, translations)
    return PoseSE3.from_approximate(rotation, translation)


def fuse_wavg(weighted: Sequence[WeightedPose]) -> PoseSE3:
    """Взвешенное среднее успешных оценок; поворот через среднее кватернионов."""

    successes = _successful(weighted)
    if len(successes) == 1:
        return successes[0].estimate.pose
    contributing = [item for item in successes if item.weight > 0]
    if not contributing:
        raise AllZeroWeights("Все успешные оценки имеют нулевой вес")
    if len(contributing) == 1:
        return contributing[0].estimate.pose
    return _weighted_mean(contributing)


def fuse_avg(estimates: Sequence[PoseEstimate]) -> PoseSE3:
    """Простое среднее; совпадает с wavg при единичных весах."""

    return fuse_wavg(
        [
            WeightedPose(estimate, 1.0, source)
            for source, estimate in enumerate(estimates)
        ]
    )


def fuse_maxf(weighted: Sequence[WeightedPose]) -> PoseEstimate:
    """Оценка по кадру с наибольшим числом сопоставлений; при равенстве меньший id."""

    if not weighted:
        raise ValueError("Нужен хотя бы один опорный кадр")
    best = min(weighted, key=lambda item: (-item.weight, item.source_id))
    return best.estimate


def select_rwavg(weighted: Sequence[WeightedPose]) -> list[WeightedPose]:
    """Успешные оценки с числом сопоставлений не меньше половины максимального."""

    successes = _successful(weighted)
    k_max = max(item.weight for item in successes)
    return [item for item in successes if item.weight >= k_max / 2.0]


def fuse_rwavg(weighted: Sequence[WeightedPose]) -> PoseSE3:
    return fuse_wavg(select_rwavg(weighted))


def fuse(
    strategy: FusionStrategy, weighted: Sequence[WeightedPose], method: Method
) -> PoseEstimate:
    """Применяет стратегию; ошибки слияния превращаются в статус оценки."""

    sources = [item.source_id for item in weighted]
    if strategy is FusionStrategy.MAXF:
        chosen = fuse_maxf(weighted)
        logger.debug(
            "Слияние maxf",
            context={"sources": sources, "status": chosen.status},
        )
        return chosen

    try:
        if strategy is FusionStrategy.AVG:
            pose = fuse_avg([item.estimate for item in weighted])
            used = [item for item in weighted if item.estimate.succeeded]
        elif strategy is FusionStrategy.WAVG:
            pose = fuse_wavg(weighted)
            used = [item for item in weighted if item.estimate.succeeded]
        else:
            used = select_rwavg(weighted)
            pose = fuse_wavg(used)
    except (NoSuccessfulEstimates, AllZeroWeights) as error:
        return PoseEstimate.failure(
            method,
            FailureReason.NO_SUCCESSFUL_ESTIMATES,
            sources=sources,
            strategy=strategy.value,
            error=str(error),
        )

    logger.debug(
        "Слияние оценок",
        context={
            "strategy": strategy,
            "sources": sources,
            "used": [item.source_id for item in used],
        },
    )
    return PoseEstimate(
        method=method,
        status=EstimateStatus.SUCCESS,
        pose=pose,
        inlier_count=sum(item.estimate.inlier_count for item in used),
        final_cost=min(item.estimate.final_cost for item in used),
        match_count=int(sum(item.weight for item in used)),
        diagnostics={
            "strategy": strategy.value,
            "used": [item.source_id for item in used],
        },
    )
