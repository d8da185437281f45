"""Конфигурация pytest и общие фикстуры."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from src.dataset import write_dataset  # noqa: E402
from src.geometry import Intrinsics  # noqa: E402
from src.synthetic import SceneSpec, generate_synthetic_scene  # noqa: E402

SMALL_SPEC = SceneSpec(
    width=96,
    height=72,
    focal=80.0,
    trajectory_length=6.0,
    box_count=6,
    max_range=30.0,
)


@pytest.fixture
def scene_spec() -> SceneSpec:
    return SMALL_SPEC


@pytest.fixture
def intrinsics() -> Intrinsics:
    return Intrinsics(fx=80.0, fy=80.0, cx=47.5, cy=35.5)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_scene():
    return generate_synthetic_scene(SMALL_SPEC, seed=3)


@pytest.fixture
def written_dataset(tmp_path, small_scene) -> Path:
    return write_dataset(small_scene.index, tmp_path / "dataset")
