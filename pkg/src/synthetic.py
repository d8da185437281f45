"""Процедурная сцена-оракул и искажения изображений для кросс-условных запросов.

Мир задан аналитически: земля ``y = ground_y`` (ось y направлена вниз),
стены коридора, задняя стена и набор прямоугольных блоков. Текстура
объёмная: таблица случайных ячеек плюс низкочастотная волна, поэтому
интенсивность точки поверхности не зависит от ракурса.

Изображения кадров получаются трассировкой лучей до аналитической
геометрии, а не проекцией сгенерированного облака: облако лишь
сохраняет точки попадания лучей (с прореживанием ``cloud_stride``),
поэтому его плотность не влияет на изображение.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import DatasetIndex, Frame
from .errors import ConfigError
from .geometry import Intrinsics, PoseSE3, axis_rotation
from .imaging import GrayImage
from .logger import get_logger
from .scene import PointCloud

logger = get_logger(__name__)

TEXTURE_TABLE_SIZE = 64
TEXTURE_OFFSET = 0.1234
SKY_INTENSITY = 0.85
GROUND_Y = 1.6
CORRIDOR_HALF_WIDTH = 5.0
BOX_GRID = 0.25
HIT_EPSILON = 1e-9


@dataclass(slots=True, frozen=True)
class SceneSpec:
    """Параметры синтетической сцены и траектории."""

    width: int = 160
    height: int = 120
    focal: float = 140.0
    trajectory_length: float = 20.0
    frame_spacing: float = 1.0
    lateral_wobble: float = 0.3
    yaw_wobble_deg: float = 2.0
    box_count: int = 10
    cloud_stride: int = 1
    max_range: float = 40.0
    texture_cell: float = 0.5

    def __post_init__(self) -> None:
        if self.width < 8 or self.height < 8:
            raise ConfigError("Размер изображения сцены должен быть не меньше 8x8")
        if self.focal <= 0 or self.frame_spacing <= 0 or self.max_range <= 0:
            raise ConfigError(
                "focal, frame_spacing и max_range должны быть положительными"
            )
        if self.trajectory_length < 0:
            raise ConfigError("Длина траектории не может быть отрицательной")
        if self.cloud_stride < 1 or self.box_count < 0 or self.texture_cell <= 0:
            raise ConfigError("Некорректные cloud_stride, box_count или texture_cell")

    @property
    def intrinsics(self) -> Intrinsics:
        return Intrinsics(
            fx=self.focal,
            fy=self.focal,
            cx=(self.width - 1) / 2.0,
            cy=(self.height - 1) / 2.0,
        )

    @property
    def frame_count(self) -> int:
        return int(np.floor(self.trajectory_length / self.frame_spacing + 1e-9)) + 1


@dataclass(slots=True, frozen=True, eq=False)
class SyntheticWorld:
    """Аналитическая геометрия и текстура сцены."""

    boxes: np.ndarray
    texture: np.ndarray
    texture_cell: float
    ground_y: float = GROUND_Y

    def raycast(self, origin: np.ndarray, directions: np.ndarray) -> np.ndarray:
        """Параметр t ближайшего пересечения лучей ``origin + t d``, inf при промахе."""

        origin = np.asarray(origin, dtype=np.float64)
        directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
        nearest = np.full(len(directions), np.inf)

        down = directions[:, 1] > 0
        nearest[down] = (self.ground_y - origin[1]) / directions[down, 1]

        if len(self.boxes):
            with np.errstate(divide="ignore", invalid="ignore"):
                inverse = 1.0 / directions
                near_planes = (self.boxes[None, :, 0, :] - origin) * inverse[:, None, :]
                far_planes = (self.boxes[None, :, 1, :] - origin) * inverse[:, None, :]
            t_enter = np.fmax.reduce(np.fmin(near_planes, far_planes), axis=2)
            t_exit = np.fmin.reduce(np.fmax(near_planes, far_planes), axis=2)
            hit = (t_exit >= t_enter) & (t_enter > HIT_EPSILON)
            t_box = np.where(hit, t_enter, np.inf).min(axis=1)
            nearest = np.minimum(nearest, t_box)
        return nearest

    def intensity(self, points: np.ndarray) -> np.ndarray:
        """Объёмная текстура в точках мира, значения в [0.1, 0.9]."""

        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        cells = np.floor((points + TEXTURE_OFFSET) / self.texture_cell).astype(np.int64)
        cells %= TEXTURE_TABLE_SIZE
        lookup = self.texture[cells[:, 0], cells[:, 1], cells[:, 2]]
        x, y, z = points[:, 0], points[:, 1], points[:, 2]
        wave = np.sin(0.9 * x + 0.35 * z + 1.3 * y) * np.cos(0.45 * z - 0.7 * x)
        wave = 0.5 + 0.5 * wave
        return 0.1 + 0.8 * (0.65 * lookup + 0.35 * wave)

    def capture(
        self,
        intrinsics: Intrinsics,
        camera_to_world: PoseSE3,
        width: int,
        height: int,
        *,
        max_range: float = 40.0,
        cloud_stride: int = 1,
    ) -> tuple[GrayImage, PointCloud, np.ndarray]:
        """Снимок камеры: изображение, облако видимых точек и карта глубины."""

        cols, rows = np.meshgrid(np.arange(width), np.arange(height))
        pixels = np.column_stack([cols.ravel(), rows.ravel()]).astype(np.float64)
        homogeneous = np.column_stack([pixels, np.ones(len(pixels))])
        rays = homogeneous @ intrinsics.inverse_matrix.T
        directions = rays @ camera_to_world.rotation.T
        origin = camera_to_world.translation
        depth = self.raycast(origin, directions)
        hit = depth <= max_range

        values = np.full(len(pixels), SKY_INTENSITY)
        world_points = origin + directions[hit] * depth[hit, None]
        values[hit] = self.intensity(world_points)
        quantized = np.round(values * 255.0).astype(np.uint8).reshape(height, width)

        depth_map = np.where(hit, depth, np.nan).reshape(height, width)
        strided = np.zeros((height, width), dtype=bool)
        strided[::cloud_stride, ::cloud_stride] = True
        keep = hit & strided.ravel()
        cloud_points = origin + directions[keep] * depth[keep, None]
        # облака хранятся в float32, держим в памяти те же значения
        cloud = PointCloud(cloud_points.astype(np.float32).astype(np.float64))
        return GrayImage.from_uint8(quantized), cloud, depth_map


@dataclass(slots=True, frozen=True, eq=False)
class SyntheticScene:
    """Сгенерированный набор данных вместе с аналитическим миром-оракулом."""

    spec: SceneSpec
    world: SyntheticWorld
    index: DatasetIndex
    seed: int

    def capture(
        self, camera_to_world: PoseSE3
    ) -> tuple[GrayImage, PointCloud, np.ndarray]:
        return self.world.capture(
            self.index.intrinsics,
            camera_to_world,
            self.spec.width,
            self.spec.height,
            max_range=self.spec.max_range,
            cloud_stride=self.spec.cloud_stride,
        )


def _snap(values: np.ndarray) -> np.ndarray:
    return np.round(values / BOX_GRID) * BOX_GRID


def _build_boxes(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    far_z = spec.trajectory_length + spec.max_range
    top = GROUND_Y - 4.0
    half = CORRIDOR_HALF_WIDTH
    walls = [
        [[-half - 0.5, top, -10.0], [-half, GROUND_Y, far_z]],
        [[half, top, -10.0], [half + 0.5, GROUND_Y, far_z]],
        [[-half, top, far_z - 10.0], [half, GROUND_Y, far_z - 9.5]],
    ]
    boxes = []
    for _ in range(spec.box_count):
        side = rng.choice([-1.0, 1.0])
        inner = rng.uniform(1.5, 3.0)
        width = rng.uniform(0.75, 1.5)
        depth = rng.uniform(1.0, 3.0)
        height = rng.uniform(0.75, 3.0)
        z_start = rng.uniform(0.0, spec.trajectory_length + 20.0)
        x_lo, x_hi = sorted([side * inner, side * (inner + width)])
        boxes.append(
            [
                [x_lo, GROUND_Y - height, z_start + 2.0],
                [x_hi, GROUND_Y, z_start + 2.0 + depth],
            ]
        )
    all_boxes = np.array(walls + boxes, dtype=np.float64)
    snapped = _snap(all_boxes)
    # земля не должна совпадать с гранью ящика
    snapped[:, 1, 1] = GROUND_Y
    snapped[:, 0, 1] = np.minimum(snapped[:, 0, 1], GROUND_Y - BOX_GRID)
    return snapped


def trajectory(spec: SceneSpec) -> list[PoseSE3]:
    """Позы камера -> мир вдоль +z с небольшим боковым и угловым покачиванием."""

    poses = []
    for index in range(spec.frame_count):
        z = index * spec.frame_spacing
        x = spec.lateral_wobble * np.sin(0.7 * index)
        yaw = spec.yaw_wobble_deg * np.sin(0.5 * index)
        poses.append(PoseSE3(axis_rotation(1, yaw), np.array([x, 0.0, z])))
    return poses


def build_world(spec: SceneSpec, seed: int) -> SyntheticWorld:
    rng = np.random.default_rng(seed)
    texture = rng.random((TEXTURE_TABLE_SIZE,) * 3)
    boxes = _build_boxes(spec, rng)
    return SyntheticWorld(boxes=boxes, texture=texture, texture_cell=spec.texture_cell)


def generate_synthetic_scene(spec: SceneSpec, seed: int) -> SyntheticScene:
    """Строит мир, траекторию и кадры; одинаковый seed даёт одинаковый набор."""

    world = build_world(spec, seed)
    intrinsics = spec.intrinsics
    frames = []
    for frame_id, camera_to_world in enumerate(trajectory(spec)):
        image, cloud, _ = world.capture(
            intrinsics,
            camera_to_world,
            spec.width,
            spec.height,
            max_range=spec.max_range,
            cloud_stride=spec.cloud_stride,
        )
        center = camera_to_world.translation
        frames.append(
            Frame(
                frame_id=frame_id,
                image=image,
                cloud=cloud,
                camera_to_world=camera_to_world,
                position=np.array([center[0], center[2]]),
            )
        )
    index = DatasetIndex(
        sequence_id=f"synthetic-{seed}", intrinsics=intrinsics, frames=tuple(frames)
    )
    logger.info(
        "Синтетическая сцена сгенерирована",
        context={"seed": seed, "frames": len(frames), "boxes": len(world.boxes)},
    )
    return SyntheticScene(spec=spec, world=world, index=index, seed=seed)


def parse_corruption(text: str) -> tuple[str, float]:
    """Разбирает строку вида ``gamma:1.3``; у ``invert`` параметра нет."""

    name, _, raw = text.strip().partition(":")
    name = name.lower()
    if name == "invert":
        return name, 0.0
    if name not in {"gamma", "brightness", "contrast", "noise"}:
        raise ConfigError(f"Неизвестное искажение: {text}")
    try:
        value = float(raw)
    except ValueError as error:
        raise ConfigError(f"Искажение {name} требует числовой параметр") from error
    if name in {"gamma", "contrast"} and value <= 0:
        raise ConfigError(f"Параметр {name} должен быть положительным")
    if name == "noise" and value < 0:
        raise ConfigError("Уровень шума не может быть отрицательным")
    return name, value


def apply_corruption(
    image: GrayImage, corruption: str, rng: np.random.Generator | None = None
) -> GrayImage:
    """Изменяет внешний вид изображения, имитируя съёмку в других условиях."""

    name, value = parse_corruption(corruption)
    pixels = image.intensities
    if name == "invert":
        result = 1.0 - pixels
    elif name == "gamma":
        result = np.power(pixels, value)
    elif name == "brightness":
        result = pixels + value
    elif name == "contrast":
        result = 0.5 + value * (pixels - 0.5)
    else:
        generator = rng if rng is not None else np.random.default_rng(0)
        result = pixels + generator.normal(0.0, value, size=pixels.shape)
    return GrayImage(np.clip(result, 0.0, 1.0), image.mask)
