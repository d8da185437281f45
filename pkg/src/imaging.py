"""Полутоновые изображения и статистические ядра прямых методов.

Сглаживание, бикубическая интерполяция, совместная гистограмма, NMI и
робастная RSE с отсечением по медиане.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.stats import entropy

from .errors import (
    DegenerateImage,
    EmptyOverlap,
    InvalidImage,
    OutOfBounds,
    SizeMismatch,
)

DEFAULT_BINS = 64
BICUBIC_MARGIN = 2
KEYS_A = -0.5
INTENSITY_TOLERANCE = 1e-12


@dataclass(slots=True, frozen=True, eq=False)
class GrayImage:
    """Изображение с интенсивностями в [0, 1] и маской валидности."""

    intensities: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self) -> None:
        values = np.array(self.intensities, dtype=np.float64, copy=True)
        if values.ndim != 2 or values.size == 0:
            raise InvalidImage(
                f"Ожидается непустой двумерный массив, получено {values.shape}"
            )
        mask = None
        if self.mask is not None:
            mask = np.array(self.mask, dtype=bool, copy=True)
            if mask.shape != values.shape:
                raise SizeMismatch("Размер маски не совпадает с размером изображения")
        checked = values if mask is None else values[mask]
        if checked.size and (
            not np.all(np.isfinite(checked))
            or checked.min() < -INTENSITY_TOLERANCE
            or checked.max() > 1.0 + INTENSITY_TOLERANCE
        ):
            raise InvalidImage("Интенсивности валидных пикселей должны лежать в [0, 1]")
        values.setflags(write=False)
        if mask is not None:
            mask.setflags(write=False)
        object.__setattr__(self, "intensities", values)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def from_uint8(cls, pixels: np.ndarray) -> GrayImage:
        return cls(np.asarray(pixels, dtype=np.float64) / 255.0)

    @property
    def height(self) -> int:
        return int(self.intensities.shape[0])

    @property
    def width(self) -> int:
        return int(self.intensities.shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def valid(self) -> np.ndarray:
        if self.mask is None:
            return np.ones(self.shape, dtype=bool)
        return self.mask

    def to_uint8(self) -> np.ndarray:
        return np.round(np.clip(self.intensities, 0.0, 1.0) * 255.0).astype(np.uint8)


@dataclass(slots=True, frozen=True, eq=False)
class JointHistogram:
    """Совместная гистограмма B x B по совместно валидным пикселям."""

    counts: np.ndarray
    bins: int

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def gaussian_smooth(img: GrayImage, sigma: float) -> GrayImage:
    """Гауссово сглаживание с сохранением среднего.

    Границы замыкаются по периодическому правилу, поэтому среднее полностью
    валидного изображения не меняется. Для маскированных изображений
    используется нормированная свёртка по валидным пикселям.
    """

    if sigma < 0:
        raise ValueError(f"sigma должна быть неотрицательной, получено {sigma}")
    if sigma == 0:
        return img

    if img.mask is None:
        smoothed = ndimage.gaussian_filter(img.intensities, sigma, mode="wrap")
        return GrayImage(np.clip(smoothed, 0.0, 1.0))

    weights = img.mask.astype(np.float64)
    numerator = ndimage.gaussian_filter(img.intensities * weights, sigma, mode="wrap")
    denominator = ndimage.gaussian_filter(weights, sigma, mode="wrap")
    smoothed = np.zeros_like(numerator)
    usable = img.mask & (denominator > 0)
    smoothed[usable] = numerator[usable] / denominator[usable]
    return GrayImage(np.clip(smoothed, 0.0, 1.0), img.mask)


def _keys_weights(fraction: np.ndarray) -> np.ndarray:
    """Веса кубической свёртки Кейса для смещений -1, 0, 1, 2."""

    offsets = np.arange(-1, 3, dtype=np.float64)
    distance = np.abs(fraction[..., None] - offsets)
    near = (KEYS_A + 2.0) * distance**3 - (KEYS_A + 3.0) * distance**2 + 1.0
    far = KEYS_A * (distance**3 - 5.0 * distance**2 + 8.0 * distance - 4.0)
    return np.where(distance <= 1.0, near, np.where(distance < 2.0, far, 0.0))


def sample_bicubic_points(img: GrayImage, pixels: np.ndarray) -> np.ndarray:
    """Векторная бикубическая выборка (x, y) с зажатием индексов у границ."""

    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    if len(pixels) == 0:
        return np.zeros(0)
    xs, ys = pixels[:, 0], pixels[:, 1]
    base_x = np.floor(xs)
    base_y = np.floor(ys)
    weights_x = _keys_weights(xs - base_x)
    weights_y = _keys_weights(ys - base_y)
    offsets = np.arange(-1, 3)
    cols = np.clip(base_x.astype(np.int64)[:, None] + offsets, 0, img.width - 1)
    rows = np.clip(base_y.astype(np.int64)[:, None] + offsets, 0, img.height - 1)
    patches = img.intensities[rows[:, :, None], cols[:, None, :]]
    values = np.einsum("nj,njk,nk->n", weights_y, patches, weights_x)
    return np.clip(values, 0.0, 1.0)


def sample_bicubic(img: GrayImage, point: np.ndarray) -> float:
    """Бикубическая интерполяция в точке (x, y) с проверкой границ."""

    x, y = (float(v) for v in np.asarray(point, dtype=np.float64).reshape(2))
    inside_x = BICUBIC_MARGIN <= x <= img.width - 1 - BICUBIC_MARGIN
    inside_y = BICUBIC_MARGIN <= y <= img.height - 1 - BICUBIC_MARGIN
    if not (inside_x and inside_y):
        raise OutOfBounds(
            f"Точка ({x:.3f}, {y:.3f}) вне области {img.width}x{img.height} "
            f"с отступом {BICUBIC_MARGIN}"
        )
    return float(sample_bicubic_points(img, np.array([[x, y]]))[0])


def _joint_valid(a: GrayImage, b: GrayImage) -> np.ndarray:
    if a.shape != b.shape:
        raise SizeMismatch(f"Размеры изображений различаются: {a.shape} и {b.shape}")
    valid = a.valid & b.valid
    if not np.any(valid):
        raise EmptyOverlap("Нет совместно валидных пикселей")
    return valid


def joint_histogram(
    a: GrayImage, b: GrayImage, bins: int = DEFAULT_BINS
) -> JointHistogram:
    """Гистограмма по равномерным корзинам на [0, 1], последняя закрыта справа."""

    valid = _joint_valid(a, b)
    counts, _, _ = np.histogram2d(
        a.intensities[valid],
        b.intensities[valid],
        bins=bins,
        range=[[0.0, 1.0], [0.0, 1.0]],
    )
    return JointHistogram(counts=counts.astype(np.int64), bins=bins)


def _entropy_bits(counts: np.ndarray) -> float:
    # сортировка делает сумму независимой от порядка корзин
    occupied = np.sort(counts[counts > 0].ravel())
    return float(entropy(occupied, base=2))


def nmi(a: GrayImage, b: GrayImage, bins: int = DEFAULT_BINS) -> float:
    """Нормированная взаимная информация MI / max(H(a), H(b))."""

    histogram = joint_histogram(a, b, bins)
    h_a = _entropy_bits(histogram.counts.sum(axis=1))
    h_b = _entropy_bits(histogram.counts.sum(axis=0))
    h_ab = _entropy_bits(histogram.counts)
    denominator = max(h_a, h_b)
    if denominator == 0.0:
        raise DegenerateImage(
            "Нулевая энтропия: изображение постоянно на области перекрытия"
        )
    mutual = h_a + h_b - h_ab
    return float(np.clip(mutual / denominator, 0.0, 1.0))


def squared_residuals(q: GrayImage, s: GrayImage) -> np.ndarray:
    """Квадраты разностей интенсивностей по совместно валидным пикселям."""

    valid = _joint_valid(q, s)
    return (q.intensities[valid] - s.intensities[valid]) ** 2


def robust_rse(q: GrayImage, s: GrayImage, *, trim: bool = True) -> float:
    """Средняя взвешенная RSE; остатки выше медианы получают нулевой вес."""

    residuals = squared_residuals(q, s)
    if not trim:
        return float(np.mean(residuals))
    threshold = np.median(residuals)
    kept = residuals[residuals <= threshold]
    return float(np.mean(kept))


def photometric_rse(q: GrayImage, s: GrayImage) -> float:
    """RSE без весов, нормированная на число валидных пикселей."""

    return robust_rse(q, s, trim=False)
