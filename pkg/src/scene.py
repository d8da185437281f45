"""Раскраска облака точек, синтез видов и связь пикселей с 3D-точками."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyResult, InvalidImage, NoProjections
from .geometry import Intrinsics, PoseSE3, backproject_points, project_points
from .imaging import GrayImage, sample_bicubic_points

DEFAULT_SPLAT_RADIUS = 1
DEFAULT_DEPTH_GATE_PX = 3.0


def _readonly(values: np.ndarray, dtype: type = np.float64) -> np.ndarray:
    values = np.array(values, dtype=dtype, copy=True)
    values.setflags(write=False)
    return values


@dataclass(slots=True, frozen=True, eq=False)
class PointCloud:
    """Точки в мировой системе координат, массив N x 3."""

    points: np.ndarray

    def __post_init__(self) -> None:
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(points)):
            raise InvalidImage("Облако содержит нечисловые координаты")
        object.__setattr__(self, "points", _readonly(points))

    def __len__(self) -> int:
        return int(self.points.shape[0])


@dataclass(slots=True, frozen=True, eq=False)
class ColoredPointCloud:
    """Облако с интенсивностью в [0, 1] для каждой точки."""

    points: np.ndarray
    intensities: np.ndarray

    def __post_init__(self) -> None:
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        intensities = np.asarray(self.intensities, dtype=np.float64).reshape(-1)
        if len(points) != len(intensities):
            raise InvalidImage("Число интенсивностей не совпадает с числом точек")
        if intensities.size and (intensities.min() < 0.0 or intensities.max() > 1.0):
            raise InvalidImage("Интенсивности точек должны лежать в [0, 1]")
        object.__setattr__(self, "points", _readonly(points))
        object.__setattr__(self, "intensities", _readonly(intensities))

    def __len__(self) -> int:
        return int(self.points.shape[0])


@dataclass(slots=True, frozen=True, eq=False)
class ReferenceTuple:
    """Опорный кадр: изображение, облако в мировой системе и поза мир -> камера."""

    image: GrayImage
    cloud: PointCloud
    pose: PoseSE3
    frame_id: int = 0


@dataclass(slots=True, frozen=True, eq=False)
class ProjectionSet:
    """Проекции облака: пиксели, глубины и индексы исходных точек."""

    pixels: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    depths: np.ndarray = field(default_factory=lambda: np.zeros(0))
    indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return int(len(self.indices))


@dataclass(slots=True, frozen=True, eq=False)
class SyntheticView:
    """Синтезированный вид: изображение с маской, z-буфер и индексы точек."""

    image: GrayImage
    depth: np.ndarray
    point_index: np.ndarray

    @property
    def valid_count(self) -> int:
        return int(np.count_nonzero(self.image.valid))


@dataclass(slots=True, frozen=True, eq=False)
class LiftedFeatures:
    """Поднятые в 3D признаки в системе камеры и индексы сохранённых признаков."""

    points: np.ndarray
    kept: np.ndarray

    def __len__(self) -> int:
        return int(len(self.kept))


def _pixel_cells(pixels: np.ndarray) -> np.ndarray:
    return np.floor(pixels + 0.5).astype(np.int64)


def project_cloud(
    cloud: PointCloud,
    intrinsics: Intrinsics,
    pose: PoseSE3,
    width: int,
    height: int,
    *,
    zbuffer: bool = False,
) -> ProjectionSet:
    """Проецирует облако и оставляет попавшие в кадр точки с положительной глубиной.

    При ``zbuffer=True`` на каждый пиксель остаётся одна ближайшая точка.
    """

    if len(cloud) == 0:
        return ProjectionSet()
    pixels, depths = project_points(intrinsics, pose, cloud.points)
    in_front = depths > 0
    cells = np.zeros_like(pixels, dtype=np.int64)
    cells[in_front] = _pixel_cells(pixels[in_front])
    inside = (
        in_front
        & (cells[:, 0] >= 0)
        & (cells[:, 0] < width)
        & (cells[:, 1] >= 0)
        & (cells[:, 1] < height)
    )
    indices = np.flatnonzero(inside)
    if zbuffer and len(indices):
        linear = cells[indices, 1] * width + cells[indices, 0]
        order = np.lexsort((indices, depths[indices], linear))
        _, first = np.unique(linear[order], return_index=True)
        indices = np.sort(indices[order[first]])
    return ProjectionSet(
        pixels=pixels[indices],
        depths=depths[indices],
        indices=indices.astype(np.int64),
    )


def colorize(ref: ReferenceTuple, intrinsics: Intrinsics) -> ColoredPointCloud:
    """Назначает точкам облака интенсивность опорного изображения."""

    projections = project_cloud(
        ref.cloud, intrinsics, ref.pose, ref.image.width, ref.image.height
    )
    if len(projections) == 0:
        raise EmptyResult(
            f"Ни одна точка облака кадра {ref.frame_id} не попала в изображение"
        )
    intensities = sample_bicubic_points(ref.image, projections.pixels)
    return ColoredPointCloud(ref.cloud.points[projections.indices], intensities)


def _disc_offsets(radius: int) -> np.ndarray:
    span = np.arange(-radius, radius + 1)
    dx, dy = np.meshgrid(span, span)
    inside = dx**2 + dy**2 <= radius**2
    offsets = np.column_stack([dx[inside], dy[inside]])
    ring = (offsets != 0).any(axis=1)
    # центр диска первым
    return offsets[np.argsort(ring, kind="stable")]


def render(
    cloud: ColoredPointCloud,
    intrinsics: Intrinsics,
    pose: PoseSE3,
    width: int,
    height: int,
    splat_radius: int = DEFAULT_SPLAT_RADIUS,
) -> SyntheticView:
    """Рендер облака дисками радиуса ``splat_radius`` с z-буфером.

    Пиксель, в который попал центр хотя бы одной точки, получает ближайшую
    из таких точек; диски заполняют только оставшиеся пиксели, тоже по
    минимальной глубине. Равные глубины разрешаются в пользу меньшего индекса.
    """

    intensities = np.zeros((height, width))
    depth = np.full((height, width), np.nan)
    point_index = np.full((height, width), -1, dtype=np.int64)
    mask = np.zeros((height, width), dtype=bool)

    if len(cloud):
        pixels, depths = project_points(intrinsics, pose, cloud.points)
        visible = np.flatnonzero(depths > 0)
        centers = _pixel_cells(pixels[visible])
        offsets = _disc_offsets(max(int(splat_radius), 0))

        target = centers[:, None, :] + offsets[None, :, :]
        point_ids = np.broadcast_to(visible[:, None], target.shape[:2])
        rings = np.broadcast_to(
            (offsets != 0).any(axis=1)[None, :], target.shape[:2]
        ).astype(np.int8)
        target = target.reshape(-1, 2)
        point_ids = point_ids.reshape(-1)
        rings = rings.reshape(-1)
        inside = (
            (target[:, 0] >= 0)
            & (target[:, 0] < width)
            & (target[:, 1] >= 0)
            & (target[:, 1] < height)
        )
        target, point_ids, rings = target[inside], point_ids[inside], rings[inside]
        if len(point_ids):
            linear = target[:, 1] * width + target[:, 0]
            order = np.lexsort((point_ids, depths[point_ids], rings, linear))
            winners_linear, first = np.unique(linear[order], return_index=True)
            winners = point_ids[order[first]]
            rows, cols = np.divmod(winners_linear, width)
            intensities[rows, cols] = cloud.intensities[winners]
            depth[rows, cols] = depths[winners]
            point_index[rows, cols] = winners
            mask[rows, cols] = True

    depth.setflags(write=False)
    point_index.setflags(write=False)
    return SyntheticView(
        image=GrayImage(intensities, mask), depth=depth, point_index=point_index
    )


def lift_features(
    feature_pixels: np.ndarray,
    projections: ProjectionSet,
    intrinsics: Intrinsics,
    gate: float = DEFAULT_DEPTH_GATE_PX,
) -> LiftedFeatures:
    """Поднимает пиксели признаков в 3D по глубине ближайшей проекции."""

    if len(projections) == 0:
        raise NoProjections("Нет проекций облака для поиска глубины")
    feature_pixels = np.asarray(feature_pixels, dtype=np.float64).reshape(-1, 2)
    if len(feature_pixels) == 0:
        return LiftedFeatures(np.zeros((0, 3)), np.zeros(0, dtype=np.int64))
    tree = cKDTree(projections.pixels)
    distances, nearest = tree.query(feature_pixels, k=1)
    kept = np.flatnonzero(distances <= gate)
    points = backproject_points(
        intrinsics, feature_pixels[kept], projections.depths[nearest[kept]]
    )
    return LiftedFeatures(points=points, kept=kept.astype(np.int64))
