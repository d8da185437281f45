"""Тесты для изображений, NMI и робастной фотометрической ошибки."""

from __future__ import annotations

import numpy as np
import pytest

from src import imaging
from src.errors import (
    DegenerateImage,
    EmptyOverlap,
    InvalidImage,
    OutOfBounds,
    SizeMismatch,
)
from src.imaging import GrayImage


def _random_image(rng: np.random.Generator, shape=(24, 32)) -> GrayImage:
    return GrayImage(rng.random(shape))


def test_gray_image_validation():
    with pytest.raises(InvalidImage):
        GrayImage(np.full((4, 4), 1.5))
    with pytest.raises(SizeMismatch):
        GrayImage(np.zeros((4, 4)), np.ones((3, 4), dtype=bool))
    # невалидные пиксели не проверяются
    masked = GrayImage(np.full((2, 2), 7.0), np.zeros((2, 2), dtype=bool))
    assert not masked.valid.any()


def test_from_uint8_round_trip(rng):
    pixels = rng.integers(0, 256, size=(10, 12), dtype=np.uint8)
    assert np.array_equal(GrayImage.from_uint8(pixels).to_uint8(), pixels)


def test_gaussian_smooth_zero_sigma_is_identity(rng):
    image = _random_image(rng)
    assert imaging.gaussian_smooth(image, 0.0) is image


def test_gaussian_smooth_preserves_mean_and_constant(rng):
    image = _random_image(rng)
    smoothed = imaging.gaussian_smooth(image, 1.5)
    expected = image.intensities.mean()
    assert smoothed.intensities.mean() == pytest.approx(expected, abs=1e-12)

    constant = GrayImage(np.full((16, 16), 0.4))
    assert np.allclose(imaging.gaussian_smooth(constant, 2.0).intensities, 0.4)


def test_gaussian_smooth_impulse_gives_sampled_kernel():
    impulse = np.zeros((21, 21))
    impulse[10, 10] = 1.0
    smoothed = imaging.gaussian_smooth(GrayImage(impulse), 1.0).intensities

    offsets = np.arange(-4, 5)
    kernel = np.exp(-(offsets**2) / 2.0)
    kernel /= kernel.sum()
    expected = np.zeros((21, 21))
    expected[6:15, 6:15] = np.outer(kernel, kernel)
    assert np.allclose(smoothed, expected, atol=1e-12)
    assert smoothed.sum() == pytest.approx(1.0)


def test_gaussian_smooth_ignores_invalid_pixels():
    values = np.full((12, 12), 0.3)
    values[:, 6:] = 1.0
    mask = np.zeros((12, 12), dtype=bool)
    mask[:, :6] = True
    smoothed = imaging.gaussian_smooth(GrayImage(values, mask), 1.0)
    assert np.allclose(smoothed.intensities[mask], 0.3)


def test_bicubic_reproduces_grid_values(rng):
    image = _random_image(rng)
    for x, y in [(2, 2), (5, 7), (29, 21)]:
        assert imaging.sample_bicubic(image, np.array([x, y])) == pytest.approx(
            image.intensities[y, x], abs=1e-12
        )


def test_bicubic_reproduces_linear_ramp():
    cols = np.arange(20) / 40.0
    image = GrayImage(np.tile(cols, (16, 1)))
    assert imaging.sample_bicubic(image, np.array([7.25, 6.5])) == pytest.approx(
        7.25 / 40.0, abs=1e-12
    )


def test_bicubic_out_of_bounds(rng):
    image = _random_image(rng)
    with pytest.raises(OutOfBounds):
        imaging.sample_bicubic(image, np.array([1.5, 10.0]))
    with pytest.raises(OutOfBounds):
        imaging.sample_bicubic(image, np.array([10.0, image.height - 2.5]))


def test_nmi_properties(rng):
    for _ in range(100):
        a, b = _random_image(rng), _random_image(rng)
        forward = imaging.nmi(a, b)
        assert forward == imaging.nmi(b, a)
        assert 0.0 <= forward <= 1.0
        assert imaging.nmi(a, a) == pytest.approx(1.0, abs=1e-9)


def test_nmi_hand_computed_cases():
    a = GrayImage(np.array([[0.0, 0.0], [1.0, 1.0]]))
    same = GrayImage(np.array([[0.0, 0.0], [1.0, 1.0]]))
    independent = GrayImage(np.array([[0.0, 1.0], [0.0, 1.0]]))
    assert imaging.nmi(a, same, bins=2) == 1.0
    assert imaging.nmi(a, independent, bins=2) == 0.0


def test_nmi_is_invariant_to_bin_bijection(rng):
    pixels = rng.integers(0, 4, size=(20, 20)) / 4.0 + 0.125
    a = GrayImage(pixels)
    inverted = GrayImage(1.0 - pixels)
    b = _random_image(rng, (20, 20))
    assert imaging.nmi(inverted, b, bins=4) == pytest.approx(imaging.nmi(a, b, bins=4))


def test_joint_histogram_counts_only_joint_valid(rng):
    mask = np.zeros((6, 6), dtype=bool)
    mask[:3] = True
    a = GrayImage(rng.random((6, 6)), mask)
    b = _random_image(rng, (6, 6))
    assert imaging.joint_histogram(a, b, bins=8).total == 18


def test_nmi_errors(rng):
    with pytest.raises(DegenerateImage):
        imaging.nmi(GrayImage(np.full((4, 4), 0.5)), GrayImage(np.full((4, 4), 0.2)))
    with pytest.raises(SizeMismatch):
        imaging.nmi(_random_image(rng, (4, 4)), _random_image(rng, (4, 5)))
    empty = GrayImage(np.zeros((4, 4)), np.zeros((4, 4), dtype=bool))
    with pytest.raises(EmptyOverlap):
        imaging.nmi(empty, _random_image(rng, (4, 4)))


def test_robust_rse_median_trim_hand_case():
    query = GrayImage(np.array([[0.0, 0.1, 0.2, 0.3]]))
    synthetic = GrayImage(np.zeros((1, 4)))
    # остатки {0, 0.01, 0.04, 0.09}: медиана 0.025, остаются первые два
    assert imaging.robust_rse(query, synthetic) == pytest.approx(0.005, abs=1e-15)
    assert imaging.photometric_rse(query, synthetic) == pytest.approx(0.035, abs=1e-15)
    assert imaging.robust_rse(query, synthetic, trim=False) == imaging.photometric_rse(
        query, synthetic
    )


def test_robust_rse_ignores_minority_corruption(rng):
    clean = rng.random((20, 20)) * 0.5
    synthetic = GrayImage(clean + 0.01)
    reference_cost = imaging.robust_rse(GrayImage(clean), synthetic)

    corrupted = clean.copy()
    flat = corrupted.ravel()
    chosen = rng.choice(flat.size, size=flat.size // 2 - 20, replace=False)
    flat[chosen] = 1.0
    assert imaging.robust_rse(GrayImage(corrupted), synthetic) == pytest.approx(
        reference_cost, abs=1e-9
    )


def test_robust_rse_identical_images_is_zero(rng):
    image = _random_image(rng)
    assert imaging.robust_rse(image, image) == 0.0
