"""Детекторы и дескрипторы, сопоставление по тесту отношения, построение 2D-3D пар."""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from skimage.feature import SIFT, corner_harris, corner_peaks

from .errors import ConfigError, NoCorrespondences, NoProjections
from .geometry import Intrinsics
from .imaging import GrayImage
from .logger import get_logger
from .robust_pnp import CorrespondenceSet2D3D
from .scene import DEFAULT_DEPTH_GATE_PX, ReferenceTuple, lift_features, project_cloud

logger = get_logger(__name__)

DESCRIPTOR_CELLS = 4
DESCRIPTOR_CELL_SIZE = 4
ORIENTATION_BINS = 8
DESCRIPTOR_CLIP = 0.2
RESPONSE_FLOOR = 1e-12


@dataclass(slots=True, frozen=True)
class DetectorConfig:
    """Параметры детектора, дескриптора и сопоставления."""

    name: str = "harris"
    max_keypoints: int = 500
    harris_k: float = 0.05
    harris_sigma: float = 1.0
    min_distance: int = 3
    threshold_rel: float = 0.01
    ratio: float = 0.8
    depth_gate: float = DEFAULT_DEPTH_GATE_PX

    def __post_init__(self) -> None:
        if not 0.0 < self.ratio < 1.0:
            raise ConfigError(f"ratio должен лежать в (0, 1), получено {self.ratio}")
        if self.max_keypoints < 1 or self.min_distance < 1:
            raise ConfigError("max_keypoints и min_distance должны быть положительными")
        if self.harris_sigma <= 0 or self.depth_gate <= 0:
            raise ConfigError("harris_sigma и depth_gate должны быть положительными")
        if self.name not in DETECTORS:
            raise ConfigError(
                f"Неизвестный детектор {self.name!r}, доступны: {sorted(DETECTORS)}"
            )


@dataclass(slots=True, frozen=True)
class Keypoint:
    x: float
    y: float
    scale: float
    response: float


@dataclass(slots=True, frozen=True, eq=False)
class FeatureSet:
    """Особые точки (x, y), масштабы, отклики и дескрипторы одного изображения."""

    locations: np.ndarray
    scales: np.ndarray
    responses: np.ndarray
    descriptors: np.ndarray

    @classmethod
    def empty(cls, length: int) -> FeatureSet:
        return cls(np.zeros((0, 2)), np.zeros(0), np.zeros(0), np.zeros((0, length)))

    def __len__(self) -> int:
        return int(len(self.locations))

    def keypoint(self, index: int) -> Keypoint:
        x, y = self.locations[index]
        return Keypoint(
            float(x),
            float(y),
            float(self.scales[index]),
            float(self.responses[index]),
        )


@dataclass(slots=True, frozen=True, eq=False)
class RatioMatches:
    """Индексы принятых пар и расстояния между дескрипторами."""

    query_indices: np.ndarray
    reference_indices: np.ndarray
    distances: np.ndarray

    def __len__(self) -> int:
        return int(len(self.query_indices))


@dataclass(slots=True, frozen=True, eq=False)
class MatchSet2D2D:
    """Пары пикселей запроса и опорного изображения с расстояниями."""

    query_pixels: np.ndarray
    reference_pixels: np.ndarray
    distances: np.ndarray

    def __len__(self) -> int:
        return int(len(self.distances))


Detector = Callable[[GrayImage, DetectorConfig], FeatureSet]
DETECTORS: dict[str, Detector] = {}


def register_detector(name: str) -> Callable[[Detector], Detector]:
    """Регистрирует функцию ``image, config -> FeatureSet`` под именем."""

    def decorator(function: Detector) -> Detector:
        DETECTORS[name] = function
        return function

    return decorator


def _descriptor_radius() -> int:
    return DESCRIPTOR_CELLS * DESCRIPTOR_CELL_SIZE // 2


def _quadratic_offset(
    minus: np.ndarray, center: np.ndarray, plus: np.ndarray
) -> np.ndarray:
    curvature = minus - 2.0 * center + plus
    offset = np.zeros_like(center)
    usable = curvature < 0
    offset[usable] = 0.5 * (minus[usable] - plus[usable]) / curvature[usable]
    return np.clip(offset, -0.5, 0.5)


def _unit_rows(values: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(values, axis=1, keepdims=True)
    return np.divide(values, norms, out=np.zeros_like(values), where=norms > 0)


def _gradient_histograms(
    image: np.ndarray, rows: np.ndarray, cols: np.ndarray
) -> np.ndarray:
    """Дескриптор со знаковой ориентацией градиента: 4x4 ячейки по 8 корзин."""

    grad_y, grad_x = np.gradient(image)
    magnitude = np.hypot(grad_x, grad_y)
    orientation = np.arctan2(grad_y, grad_x)

    radius = _descriptor_radius()
    span = np.arange(-radius, radius)
    patch_rows = rows[:, None, None] + span[None, :, None]
    patch_cols = cols[:, None, None] + span[None, None, :]
    patch_magnitude = magnitude[patch_rows, patch_cols]
    patch_orientation = orientation[patch_rows, patch_cols]

    centered = span + 0.5
    squared = centered[:, None] ** 2 + centered[None, :] ** 2
    weights = np.exp(-squared / (2.0 * radius**2))
    contributions = patch_magnitude * weights

    orientation_bin = np.floor(
        (patch_orientation + np.pi) / (2.0 * np.pi) * ORIENTATION_BINS
    ).astype(np.int64) % ORIENTATION_BINS
    cell = (span + radius) // DESCRIPTOR_CELL_SIZE
    cell_index = cell[:, None] * DESCRIPTOR_CELLS + cell[None, :]
    length = DESCRIPTOR_CELLS * DESCRIPTOR_CELLS * ORIENTATION_BINS
    flat = (
        np.arange(len(rows))[:, None, None] * length
        + cell_index[None, :, :] * ORIENTATION_BINS
        + orientation_bin
    )
    descriptors = np.bincount(
        flat.ravel(), weights=contributions.ravel(), minlength=len(rows) * length
    ).reshape(len(rows), length)

    clipped = np.minimum(_unit_rows(descriptors), DESCRIPTOR_CLIP)
    return _unit_rows(clipped)


@register_detector("harris")
def detect_harris(image: GrayImage, config: DetectorConfig) -> FeatureSet:
    """Углы Харриса с субпиксельным уточнением и градиентным дескриптором."""

    length = DESCRIPTOR_CELLS * DESCRIPTOR_CELLS * ORIENTATION_BINS
    pixels = image.intensities
    response = corner_harris(
        pixels, method="k", k=config.harris_k, sigma=config.harris_sigma
    )
    if response.max() <= RESPONSE_FLOOR:
        return FeatureSet.empty(length)

    radius = _descriptor_radius()
    peaks = corner_peaks(
        response,
        min_distance=config.min_distance,
        threshold_rel=config.threshold_rel,
        exclude_border=radius,
    )
    if len(peaks) == 0:
        return FeatureSet.empty(length)
    rows, cols = peaks[:, 0], peaks[:, 1]
    scores = response[rows, cols]

    order = np.lexsort((cols, rows, -scores))[: config.max_keypoints]
    rows, cols, scores = rows[order], cols[order], scores[order]

    offset_x = _quadratic_offset(
        response[rows, cols - 1], scores, response[rows, cols + 1]
    )
    offset_y = _quadratic_offset(
        response[rows - 1, cols], scores, response[rows + 1, cols]
    )
    locations = np.column_stack([cols + offset_x, rows + offset_y]).astype(np.float64)

    descriptors = _gradient_histograms(pixels, rows, cols)
    return FeatureSet(
        locations=locations,
        scales=np.full(len(rows), float(config.harris_sigma)),
        responses=scores.astype(np.float64),
        descriptors=descriptors,
    )


@register_detector("sift")
def detect_sift(image: GrayImage, config: DetectorConfig) -> FeatureSet:
    """SIFT из scikit-image; отклик берётся из карты Харриса в точке."""

    extractor = SIFT()
    try:
        extractor.detect_and_extract(image.intensities)
    except RuntimeError as error:
        logger.debug("SIFT не нашёл особых точек", context={"error": str(error)})
        return FeatureSet.empty(128)
    positions = np.asarray(extractor.positions, dtype=np.float64)
    if len(positions) == 0:
        return FeatureSet.empty(128)
    response = corner_harris(
        image.intensities, method="k", k=config.harris_k, sigma=config.harris_sigma
    )
    rows = np.clip(np.round(positions[:, 0]).astype(np.int64), 0, image.height - 1)
    cols = np.clip(np.round(positions[:, 1]).astype(np.int64), 0, image.width - 1)
    scores = response[rows, cols]
    order = np.lexsort((positions[:, 1], positions[:, 0], -scores))
    order = order[: config.max_keypoints]
    return FeatureSet(
        locations=positions[order][:, ::-1].copy(),
        scales=np.asarray(extractor.sigmas, dtype=np.float64)[order],
        responses=scores[order].astype(np.float64),
        descriptors=np.asarray(extractor.descriptors, dtype=np.float64)[order],
    )


def detect_and_describe(
    image: GrayImage, config: DetectorConfig | None = None
) -> FeatureSet:
    """Находит особые точки, отсортированные по убыванию отклика, и их дескрипторы."""

    config = config or DetectorConfig()
    return DETECTORS[config.name](image, config)


def match_ratio(
    query_descriptors: np.ndarray, reference_descriptors: np.ndarray, ratio: float
) -> RatioMatches:
    """Полный перебор с тестом отношения d1 < ratio * d2.

    При равных расстояниях ближайшим считается опорный дескриптор с меньшим индексом.
    """

    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio должен лежать в (0, 1), получено {ratio}")
    query_descriptors = np.asarray(query_descriptors, dtype=np.float64)
    reference_descriptors = np.asarray(reference_descriptors, dtype=np.float64)
    empty = RatioMatches(
        np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0)
    )
    if len(query_descriptors) == 0 or len(reference_descriptors) < 2:
        return empty

    distances = cdist(query_descriptors, reference_descriptors, metric="euclidean")
    order = np.argsort(distances, axis=1, kind="stable")[:, :2]
    rows = np.arange(len(distances))
    nearest = distances[rows, order[:, 0]]
    second = distances[rows, order[:, 1]]
    accepted = np.flatnonzero(nearest < ratio * second)
    return RatioMatches(
        query_indices=accepted.astype(np.int64),
        reference_indices=order[accepted, 0].astype(np.int64),
        distances=nearest[accepted],
    )


def match_features(
    query: FeatureSet, reference: FeatureSet, ratio: float
) -> MatchSet2D2D:
    matches = match_ratio(query.descriptors, reference.descriptors, ratio)
    return MatchSet2D2D(
        query_pixels=query.locations[matches.query_indices],
        reference_pixels=reference.locations[matches.reference_indices],
        distances=matches.distances,
    )


def build_2d3d(
    matches: MatchSet2D2D,
    ref: ReferenceTuple,
    intrinsics: Intrinsics,
    gate: float = DEFAULT_DEPTH_GATE_PX,
) -> CorrespondenceSet2D3D:
    """Поднимает опорные пиксели пар в 3D в системе опорной камеры."""

    if len(matches) == 0:
        raise NoCorrespondences("Нет 2D-2D пар для построения 2D-3D соответствий")
    projections = project_cloud(
        ref.cloud,
        intrinsics,
        ref.pose,
        ref.image.width,
        ref.image.height,
        zbuffer=True,
    )
    try:
        lifted = lift_features(matches.reference_pixels, projections, intrinsics, gate)
    except NoProjections as error:
        raise NoCorrespondences(
            f"Облако кадра {ref.frame_id} не проецируется в опорное изображение"
        ) from error
    if len(lifted) == 0:
        raise NoCorrespondences(
            f"Все {len(matches)} пар отброшены порогом глубины {gate} px"
        )
    return CorrespondenceSet2D3D(matches.query_pixels[lifted.kept], lifted.points)
