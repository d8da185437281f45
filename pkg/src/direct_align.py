"""Прямая оценка позы перебором по сетке: фотометрическая ошибка или 1 - NMI.

Сначала ищется смещение камеры по двум осям (вправо и вперёд) грубым, а
затем мелким шагом, после чего так же перебирается рыскание вокруг оси y
камеры. Смещения и углы отсчитываются от исходной позы, поэтому узлы
сетки воспроизводимы бит в бит.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AllInfiniteCost,
    ConfigError,
    DegenerateImage,
    EmptyOverlap,
    EmptyResult,
)
from .geometry import Intrinsics, PoseSE3, axis_rotation
from .imaging import DEFAULT_BINS, GrayImage, gaussian_smooth, nmi, robust_rse
from .logger import get_logger
from .robust_pnp import EstimateStatus, FailureReason, Method, PoseEstimate
from .scene import (
    DEFAULT_SPLAT_RADIUS,
    ColoredPointCloud,
    ReferenceTuple,
    colorize,
    render,
)

logger = get_logger(__name__)

LATTICE_EPSILON = 1e-9


class CostKind(str, enum.Enum):
    PHOTOMETRIC = "Photometric"
    MUTUAL_INFORMATION = "MutualInformation"

    @property
    def method(self) -> Method:
        return Method.PM if self is CostKind.PHOTOMETRIC else Method.MI


@dataclass(slots=True, frozen=True)
class GridSearchConfig:
    """Форма поиска: сетка смещений, диапазоны рыскания и параметры стоимости."""

    extent: float = 15.0
    step1: float = 1.0
    step2: float = 0.2
    yaw_range: float = 10.0
    fine_yaw_range: float = 2.0
    steps_per_side: int = 5
    translation_axes: tuple[int, int] = (0, 2)
    yaw_axis: int = 1
    smoothing_sigma: float = 1.0
    bins: int = DEFAULT_BINS
    splat_radius: int = DEFAULT_SPLAT_RADIUS
    rse_ceiling: float = 0.05
    mi_ceiling: float = 0.5
    workers: int = 1

    def __post_init__(self) -> None:
        if not 0 < self.step2 < self.step1 <= self.extent:
            raise ConfigError("Требуется 0 < step2 < step1 <= extent")
        if not 0 < self.fine_yaw_range < self.yaw_range:
            raise ConfigError("Требуется 0 < fine_yaw_range < yaw_range")
        if self.steps_per_side < 2:
            raise ConfigError("steps_per_side должен быть не меньше 2")
        axes = set(self.translation_axes)
        if len(axes) != 2 or not axes <= {0, 1, 2} or self.yaw_axis not in {0, 1, 2}:
            raise ConfigError(
                "Оси сетки должны быть двумя различными осями из {0, 1, 2}"
            )
        if self.smoothing_sigma < 0 or self.bins < 2 or self.splat_radius < 0:
            raise ConfigError("Некорректные smoothing_sigma, bins или splat_radius")
        if self.workers < 1:
            raise ConfigError("workers должен быть не меньше 1")

    def ceiling(self, kind: CostKind) -> float:
        return self.rse_ceiling if kind is CostKind.PHOTOMETRIC else self.mi_ceiling


@dataclass(slots=True)
class SearchTrace:
    """Журнал вычислений стоимости: проход, две координаты узла и стоимость."""

    entries: list[tuple[str, float, float, float]] = field(default_factory=list)

    def record(self, stage: str, first: float, second: float, cost: float) -> None:
        self.entries.append((stage, first, second, cost))

    def stage(self, name: str) -> list[tuple[float, float, float]]:
        return [(a, b, c) for stage, a, b, c in self.entries if stage == name]


class PoseCost:
    """Стоимость гипотезы позы при фиксированном запросе и облаке.

    Сглаженный запрос вычисляется один раз; значения кешируются по позе.
    """

    def __init__(
        self,
        kind: CostKind,
        query: GrayImage,
        cloud: ColoredPointCloud,
        intrinsics: Intrinsics,
        cfg: GridSearchConfig,
    ) -> None:
        self.kind = kind
        self.cloud = cloud
        self.intrinsics = intrinsics
        self.cfg = cfg
        self.query = gaussian_smooth(query, cfg.smoothing_sigma)
        self._cache: dict[bytes, float] = {}

    def __call__(self, pose: PoseSE3) -> float:
        key = pose.matrix.tobytes()
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        view = render(
            self.cloud,
            self.intrinsics,
            pose,
            self.query.width,
            self.query.height,
            self.cfg.splat_radius,
        )
        try:
            if self.kind is CostKind.PHOTOMETRIC:
                value = robust_rse(self.query, view.image)
            else:
                value = 1.0 - nmi(self.query, view.image, self.cfg.bins)
        except (EmptyOverlap, DegenerateImage):
            value = math.inf
        self._cache[key] = value
        return value

    def evaluate_many(self, poses: list[PoseSE3]) -> np.ndarray:
        if self.cfg.workers > 1 and len(poses) > 1:
            with ThreadPoolExecutor(max_workers=self.cfg.workers) as pool:
                return np.array(list(pool.map(self, poses)), dtype=np.float64)
        return np.array([self(pose) for pose in poses], dtype=np.float64)


def evaluate_cost(
    kind: CostKind,
    query: GrayImage,
    cloud: ColoredPointCloud,
    intrinsics: Intrinsics,
    pose: PoseSE3,
    cfg: GridSearchConfig,
) -> float:
    """Стоимость позы; вырожденная гипотеза даёт +inf."""

    return PoseCost(kind, query, cloud, intrinsics, cfg)(pose)


def translated_pose(
    pose: PoseSE3, offsets: tuple[float, float], axes: tuple[int, int]
) -> PoseSE3:
    """Сдвигает центр камеры на ``offsets`` вдоль её собственных осей ``axes``."""

    shift = np.zeros(3)
    shift[axes[0]] = offsets[0]
    shift[axes[1]] = offsets[1]
    return PoseSE3(pose.rotation, pose.translation - shift)


def rotated_pose(pose: PoseSE3, degrees: float, axis: int) -> PoseSE3:
    """Поворачивает камеру вокруг её собственной оси, центр не меняется."""

    rotation = axis_rotation(axis, degrees)
    return PoseSE3(rotation @ pose.rotation, rotation @ pose.translation)


def coarse_lattice(extent: float, step: float) -> np.ndarray:
    count = int(math.floor(extent / step + LATTICE_EPSILON))
    return np.arange(-count, count + 1) * step


def fine_lattice(center: float, half_width: float, step: float) -> np.ndarray:
    count = int(math.floor(half_width / step + LATTICE_EPSILON))
    return center + np.arange(-count, count + 1) * step


def _argmin_or_raise(costs: np.ndarray, stage: str) -> int:
    if not np.any(np.isfinite(costs)):
        raise AllInfiniteCost(f"Все узлы прохода {stage} отклонены")
    # np.argmin возвращает первый минимум, то есть лексикографически меньший узел
    return int(np.argmin(costs))


def _translation_pass(
    cost: PoseCost,
    origin: PoseSE3,
    first_axis: np.ndarray,
    second_axis: np.ndarray,
    stage: str,
    trace: SearchTrace | None,
) -> tuple[float, float, float]:
    axes = cost.cfg.translation_axes
    grid = [(float(a), float(b)) for a in first_axis for b in second_axis]
    costs = cost.evaluate_many([translated_pose(origin, node, axes) for node in grid])
    if trace is not None:
        for (a, b), value in zip(grid, costs, strict=True):
            trace.record(stage, a, b, float(value))
    best = _argmin_or_raise(costs, stage)
    logger.debug(
        "Проход по смещению завершён",
        context={"stage": stage, "offset": grid[best], "cost": float(costs[best])},
    )
    return grid[best][0], grid[best][1], float(costs[best])


def coarse_to_fine_translation(
    kind: CostKind,
    query: GrayImage,
    cloud: ColoredPointCloud,
    intrinsics: Intrinsics,
    initial: PoseSE3,
    cfg: GridSearchConfig,
    *,
    cost: PoseCost | None = None,
    trace: SearchTrace | None = None,
) -> PoseSE3:
    """Грубый проход с шагом step1 по квадрату extent, затем мелкий с шагом step2."""

    cost = cost or PoseCost(kind, query, cloud, intrinsics, cfg)
    lattice = coarse_lattice(cfg.extent, cfg.step1)
    coarse_a, coarse_b, _ = _translation_pass(
        cost, initial, lattice, lattice, "coarse", trace
    )
    fine_a = fine_lattice(coarse_a, cfg.step1, cfg.step2)
    fine_b = fine_lattice(coarse_b, cfg.step1, cfg.step2)
    best_a, best_b, _ = _translation_pass(cost, initial, fine_a, fine_b, "fine", trace)
    return translated_pose(initial, (best_a, best_b), cfg.translation_axes)


def _yaw_pass(
    cost: PoseCost,
    origin: PoseSE3,
    angles: np.ndarray,
    stage: str,
    trace: SearchTrace | None,
) -> tuple[float, float]:
    axis = cost.cfg.yaw_axis
    candidates = [rotated_pose(origin, float(angle), axis) for angle in angles]
    costs = cost.evaluate_many(candidates)
    if trace is not None:
        for angle, value in zip(angles, costs, strict=True):
            trace.record(stage, float(angle), 0.0, float(value))
    best = _argmin_or_raise(costs, stage)
    logger.debug(
        "Проход по рысканию завершён",
        context={
            "stage": stage,
            "yaw": float(angles[best]),
            "cost": float(costs[best]),
        },
    )
    return float(angles[best]), float(costs[best])


def coarse_to_fine_yaw(
    kind: CostKind,
    query: GrayImage,
    cloud: ColoredPointCloud,
    intrinsics: Intrinsics,
    initial: PoseSE3,
    cfg: GridSearchConfig,
    *,
    cost: PoseCost | None = None,
    trace: SearchTrace | None = None,
) -> PoseSE3:
    """Перебор рыскания: 2N-1 углов в ±yaw_range, затем 2N-1 углов в ±fine_yaw_range."""

    cost = cost or PoseCost(kind, query, cloud, intrinsics, cfg)
    samples = 2 * cfg.steps_per_side - 1
    coarse = np.linspace(-cfg.yaw_range, cfg.yaw_range, samples)
    coarse_best, _ = _yaw_pass(cost, initial, coarse, "yaw_coarse", trace)
    fine = np.linspace(
        coarse_best - cfg.fine_yaw_range, coarse_best + cfg.fine_yaw_range, samples
    )
    # узел с нулевым смещением от грубого минимума обязан присутствовать
    fine[cfg.steps_per_side - 1] = coarse_best
    best, _ = _yaw_pass(cost, initial, fine, "yaw_fine", trace)
    return rotated_pose(initial, best, cfg.yaw_axis)


def estimate_direct(
    kind: CostKind,
    query: GrayImage,
    ref: ReferenceTuple,
    intrinsics: Intrinsics,
    cfg: GridSearchConfig,
    *,
    trace: SearchTrace | None = None,
) -> PoseEstimate:
    """Раскраска облака, поиск смещения, затем рыскания от позы опорного кадра."""

    method = kind.method
    try:
        cloud = colorize(ref, intrinsics)
    except EmptyResult as error:
        return PoseEstimate.failure(
            method,
            FailureReason.SEARCH_DIVERGED,
            reference=ref.frame_id,
            error=str(error),
        )

    cost = PoseCost(kind, query, cloud, intrinsics, cfg)
    initial_cost = cost(ref.pose)
    try:
        translated = coarse_to_fine_translation(
            kind, query, cloud, intrinsics, ref.pose, cfg, cost=cost, trace=trace
        )
        final_pose = coarse_to_fine_yaw(
            kind, query, cloud, intrinsics, translated, cfg, cost=cost, trace=trace
        )
    except AllInfiniteCost as error:
        return PoseEstimate.failure(
            method,
            FailureReason.SEARCH_DIVERGED,
            reference=ref.frame_id,
            error=str(error),
        )

    final_cost = cost(final_pose)
    diagnostics = {"reference": ref.frame_id, "initial_cost": initial_cost}
    if final_cost > cfg.ceiling(kind):
        return PoseEstimate.failure(
            method,
            FailureReason.SEARCH_DIVERGED,
            final_cost=final_cost,
            ceiling=cfg.ceiling(kind),
            **diagnostics,
        )
    return PoseEstimate(
        method=method,
        status=EstimateStatus.SUCCESS,
        pose=final_pose,
        final_cost=final_cost,
        diagnostics=diagnostics,
    )
