"""Чтение и запись наборов данных в KITTI-подобной раскладке.

Раскладка каталога:
- ``intrinsics.txt``: fx fy cx cy skew;
- ``poses.txt``: 12 чисел на строку, матрица 3x4 камера -> мир построчно;
- ``images/%06d.png``: 8-битные полутоновые изображения;
- ``clouds/%06d.bin``: тройки float32 little-endian в мировой системе;
- ``positions.txt`` (необязательно): 2D-метки положения на земле;
- ``frames.txt`` (необязательно): номер кадра на строку, иначе 0, 1, 2, ...
"""

from __future__ import annotations

import dataclasses
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from skimage import io as skio
from skimage.color import rgb2gray
from skimage.util import img_as_float

from .errors import CountMismatch, MalformedPose, MissingFile
from .geometry import Intrinsics, PoseSE3, invert
from .imaging import GrayImage
from .logger import get_logger
from .scene import PointCloud, ReferenceTuple

logger = get_logger(__name__)

INTRINSICS_FILE = "intrinsics.txt"
POSES_FILE = "poses.txt"
POSITIONS_FILE = "positions.txt"
FRAMES_FILE = "frames.txt"
IMAGES_DIR = "images"
CLOUDS_DIR = "clouds"
CLOUD_DTYPE = np.dtype("<f4")
POSE_REJECT_DEVIATION = 1e-3
POSE_PROJECT_DEVIATION = 1e-6


@dataclass(slots=True, frozen=True, eq=False)
class Frame:
    """Кадр набора: изображение, облако и поза камера -> мир."""

    frame_id: int
    image: GrayImage
    cloud: PointCloud
    camera_to_world: PoseSE3
    position: np.ndarray | None = None
    image_path: Path | None = None
    cloud_path: Path | None = None
    pose: PoseSE3 = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "pose", invert(self.camera_to_world))

    @property
    def center(self) -> np.ndarray:
        return self.camera_to_world.translation

    def reference(self) -> ReferenceTuple:
        return ReferenceTuple(
            image=self.image, cloud=self.cloud, pose=self.pose, frame_id=self.frame_id
        )


@dataclass(slots=True, frozen=True, eq=False)
class DatasetIndex:
    """Неизменяемый индекс набора данных с общими внутренними параметрами."""

    sequence_id: str
    intrinsics: Intrinsics
    frames: tuple[Frame, ...]
    root: Path | None = None

    def __len__(self) -> int:
        return len(self.frames)

    def frame(self, frame_id: int) -> Frame:
        for frame in self.frames:
            if frame.frame_id == frame_id:
                return frame
        raise KeyError(f"Кадр {frame_id} отсутствует в наборе {self.sequence_id}")

    def subset(self, frame_ids: Iterable[int]) -> DatasetIndex:
        """Индекс из части кадров с исходными номерами."""

        wanted = set(frame_ids)
        return dataclasses.replace(
            self, frames=tuple(f for f in self.frames if f.frame_id in wanted)
        )

    @property
    def has_positions(self) -> bool:
        return bool(self.frames) and all(f.position is not None for f in self.frames)

    def centers(self) -> np.ndarray:
        return np.array([frame.center for frame in self.frames]).reshape(-1, 3)

    def distances_from(self, frame: Frame) -> np.ndarray:
        """Расстояния до всех кадров: по 2D-меткам, если они есть, иначе по центрам."""

        if self.has_positions and frame.position is not None:
            positions = np.array([f.position for f in self.frames])
            return np.linalg.norm(positions - frame.position, axis=1)
        return np.linalg.norm(self.centers() - frame.center, axis=1)


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingFile(f"Не найден обязательный путь: {path}")
    return path


def _read_intrinsics(path: Path) -> Intrinsics:
    values = [float(token) for token in path.read_text(encoding="utf-8").split()]
    if len(values) not in (4, 5):
        raise MalformedPose(
            f"Ожидается 4 или 5 чисел в {path.name}, получено {len(values)}"
        )
    return Intrinsics(*values)


def _parse_pose(line: str, line_no: int) -> PoseSE3:
    try:
        values = np.array([float(token) for token in line.split()])
    except ValueError as error:
        raise MalformedPose(f"Строка {line_no}: нечисловое значение") from error
    if values.shape != (12,):
        raise MalformedPose(
            f"Строка {line_no}: ожидается 12 чисел, получено {values.size}"
        )
    matrix = values.reshape(3, 4)
    rotation, translation = matrix[:, :3], matrix[:, 3]
    deviation = float(np.linalg.norm(rotation.T @ rotation - np.eye(3)))
    if deviation > POSE_REJECT_DEVIATION or np.linalg.det(rotation) <= 0:
        raise MalformedPose(
            f"Строка {line_no}: поворот не ортонормирован (отклонение {deviation:.3e})"
        )
    if deviation > POSE_PROJECT_DEVIATION:
        return PoseSE3.from_approximate(rotation, translation)
    return PoseSE3(rotation, translation)


def _read_poses(path: Path) -> list[PoseSE3]:
    text = path.read_text(encoding="utf-8")
    lines = [line for line in text.splitlines() if line.strip()]
    return [_parse_pose(line, number) for number, line in enumerate(lines, start=1)]


def _read_positions(path: Path) -> np.ndarray | None:
    if not path.exists():
        return None
    positions = np.loadtxt(path, dtype=np.float64, ndmin=2)
    return positions[:, :2]


def _read_frame_ids(path: Path) -> list[int] | None:
    if not path.exists():
        return None
    try:
        frame_ids = [int(token) for token in path.read_text(encoding="utf-8").split()]
    except ValueError as error:
        raise CountMismatch(f"Нечисловой номер кадра в {path.name}") from error
    if len(set(frame_ids)) != len(frame_ids):
        raise CountMismatch(f"Повторяющиеся номера кадров в {path.name}")
    return frame_ids


def read_image(path: Path) -> GrayImage:
    pixels = skio.imread(path)
    if pixels.ndim == 3:
        return GrayImage(np.clip(rgb2gray(pixels[..., :3]), 0.0, 1.0))
    if pixels.dtype == np.uint8:
        return GrayImage.from_uint8(pixels)
    return GrayImage(img_as_float(pixels))


def read_cloud(path: Path) -> PointCloud:
    raw = np.fromfile(path, dtype=CLOUD_DTYPE)
    if raw.size % 3:
        raise CountMismatch(
            f"Файл облака {path.name} содержит {raw.size} чисел, не кратно 3"
        )
    return PointCloud(raw.reshape(-1, 3).astype(np.float64))


def load_dataset(root: Path, sequence_id: str | None = None) -> DatasetIndex:
    """Загружает набор данных и проверяет согласованность файлов."""

    root = Path(root)
    intrinsics = _read_intrinsics(_require(root / INTRINSICS_FILE))
    poses = _read_poses(_require(root / POSES_FILE))
    image_paths = sorted(_require(root / IMAGES_DIR).glob("*.png"))
    cloud_paths = sorted(_require(root / CLOUDS_DIR).glob("*.bin"))
    positions = _read_positions(root / POSITIONS_FILE)
    frame_ids = _read_frame_ids(root / FRAMES_FILE)

    counts = {
        "poses": len(poses),
        "images": len(image_paths),
        "clouds": len(cloud_paths),
    }
    if positions is not None:
        counts["positions"] = len(positions)
    if frame_ids is not None:
        counts["frame_ids"] = len(frame_ids)
    if len(set(counts.values())) != 1:
        raise CountMismatch(f"Число файлов набора не совпадает: {counts}")
    if not poses:
        raise MissingFile(f"Набор данных {root} не содержит ни одного кадра")

    frames = tuple(
        Frame(
            frame_id=frame_id,
            image=read_image(image_path),
            cloud=read_cloud(cloud_path),
            camera_to_world=pose,
            position=None if positions is None else positions[row],
            image_path=image_path,
            cloud_path=cloud_path,
        )
        for row, (frame_id, pose, image_path, cloud_path) in enumerate(
            zip(
                frame_ids or range(len(poses)),
                poses,
                image_paths,
                cloud_paths,
                strict=True,
            )
        )
    )
    index = DatasetIndex(
        sequence_id=sequence_id or root.name,
        intrinsics=intrinsics,
        frames=frames,
        root=root,
    )
    logger.info(
        "Набор данных загружен",
        context={
            "root": str(root),
            "frames": len(frames),
            "positions": positions is not None,
        },
    )
    return index


def _format_row(values: np.ndarray) -> str:
    return " ".join(format(float(value), ".17g") for value in values)


def write_dataset(index: DatasetIndex, root: Path) -> Path:
    """Записывает набор данных; повторная загрузка воспроизводит позы и изображения."""

    root = Path(root)
    (root / IMAGES_DIR).mkdir(parents=True, exist_ok=True)
    (root / CLOUDS_DIR).mkdir(parents=True, exist_ok=True)

    (root / INTRINSICS_FILE).write_text(
        _format_row(np.array(index.intrinsics.as_tuple())) + "\n", encoding="utf-8"
    )
    pose_lines = [
        _format_row(
            np.column_stack(
                [frame.camera_to_world.rotation, frame.camera_to_world.translation]
            ).ravel()
        )
        for frame in index.frames
    ]
    (root / POSES_FILE).write_text("\n".join(pose_lines) + "\n", encoding="utf-8")
    (root / FRAMES_FILE).write_text(
        "".join(f"{frame.frame_id}\n" for frame in index.frames), encoding="utf-8"
    )

    for frame in index.frames:
        name = f"{frame.frame_id:06d}"
        skio.imsave(
            root / IMAGES_DIR / f"{name}.png",
            frame.image.to_uint8(),
            check_contrast=False,
        )
        frame.cloud.points.astype(CLOUD_DTYPE).tofile(root / CLOUDS_DIR / f"{name}.bin")

    if index.has_positions:
        position_lines = [_format_row(frame.position) for frame in index.frames]
        (root / POSITIONS_FILE).write_text(
            "\n".join(position_lines) + "\n", encoding="utf-8"
        )

    logger.info(
        "Набор данных записан",
        context={"root": str(root), "frames": len(index.frames)},
    )
    return root
