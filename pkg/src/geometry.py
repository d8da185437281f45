"""Позы SE(3), внутренние параметры камеры, проекция и представления поворотов.

Соглашения:
- камера смотрит вдоль +z, ось x направлена вправо, ось y вниз;
- ``PoseSE3`` хранит преобразование мир -> камера ``M = [R | t]``;
- углы Эйлера внутренние Z-Y-X (рыскание, тангаж, крен) в градусах.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import InvalidIntrinsics, InvalidPose, NonPositiveDepth

ORTHONORMAL_TOLERANCE = 1e-6
QUATERNION_NORM_TOLERANCE = 1e-9
GIMBAL_LOCK_TOLERANCE_DEG = 1e-6
EULER_SEQUENCE = "ZYX"


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


@dataclass(slots=True, frozen=True)
class Intrinsics:
    """Матрица калибровки K, общая для всех кадров набора."""

    fx: float
    fy: float
    cx: float
    cy: float
    skew: float = 0.0

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidIntrinsics(
                "Фокусные расстояния должны быть положительными: "
                f"fx={self.fx}, fy={self.fy}"
            )
        values = (self.fx, self.fy, self.cx, self.cy, self.skew)
        if not all(np.isfinite(values)):
            raise InvalidIntrinsics("Параметры камеры содержат нечисловые значения")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [
                [self.fx, self.skew, self.cx],
                [0.0, self.fy, self.cy],
                [0.0, 0.0, 1.0],
            ]
        )

    @property
    def inverse_matrix(self) -> np.ndarray:
        # аналитическое обращение верхнетреугольной K
        inv_fx = 1.0 / self.fx
        inv_fy = 1.0 / self.fy
        shift_x = (self.skew * self.cy - self.cx * self.fy) * inv_fx * inv_fy
        return np.array(
            [
                [inv_fx, -self.skew * inv_fx * inv_fy, shift_x],
                [0.0, inv_fy, -self.cy * inv_fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.fx, self.fy, self.cx, self.cy, self.skew)


@dataclass(slots=True, frozen=True, eq=False)
class PoseSE3:
    """Жёсткое преобразование мир -> камера."""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        rotation = np.asarray(self.rotation, dtype=np.float64)
        translation = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        if rotation.shape != (3, 3) or translation.shape != (3,):
            raise InvalidPose("Ожидается поворот 3x3 и перенос из трёх компонент")
        if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(translation))):
            raise InvalidPose("Поза содержит нечисловые значения")
        deviation = np.linalg.norm(rotation.T @ rotation - np.eye(3))
        if deviation > ORTHONORMAL_TOLERANCE:
            raise InvalidPose(f"Матрица не ортонормирована: отклонение {deviation:.3e}")
        if abs(np.linalg.det(rotation) - 1.0) > ORTHONORMAL_TOLERANCE:
            raise InvalidPose("Определитель матрицы поворота отличен от +1")
        object.__setattr__(self, "rotation", _frozen(rotation))
        object.__setattr__(self, "translation", _frozen(translation))

    @classmethod
    def identity(cls) -> PoseSE3:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> PoseSE3:
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls(matrix[:3, :3], matrix[:3, 3])

    @classmethod
    def from_approximate(cls, rotation: np.ndarray, translation: np.ndarray) -> PoseSE3:
        """Проецирует почти ортонормированную матрицу на SO(3)."""

        u, _, vt = np.linalg.svd(np.asarray(rotation, dtype=np.float64))
        projected = u @ vt
        if np.linalg.det(projected) < 0:
            u[:, -1] *= -1
            projected = u @ vt
        return cls(projected, translation)

    @property
    def matrix(self) -> np.ndarray:
        """Однородная матрица 4x4."""

        result = np.eye(4)
        result[:3, :3] = self.rotation
        result[:3, 3] = self.translation
        return result

    @property
    def center(self) -> np.ndarray:
        """Центр камеры в мировой системе координат."""

        return -self.rotation.T @ self.translation

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Переводит точки (N x 3) из мировой системы в систему камеры."""

        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def compose(self, other: PoseSE3) -> PoseSE3:
        return compose(self, other)

    def inverse(self) -> PoseSE3:
        return invert(self)


@dataclass(slots=True, frozen=True)
class UnitQuaternion:
    """Единичный кватернион (w, x, y, z); q и -q задают один поворот."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        norm = float(np.linalg.norm(self.as_array()))
        if abs(norm - 1.0) > QUATERNION_NORM_TOLERANCE:
            raise InvalidPose(f"Кватернион не единичный: норма {norm:.12f}")

    @classmethod
    def from_array(cls, values: np.ndarray) -> UnitQuaternion:
        """Создаёт кватернион из вектора (w, x, y, z) с нормировкой."""

        values = np.asarray(values, dtype=np.float64)
        values = values / np.linalg.norm(values)
        return cls(*(float(v) for v in values))

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)

    def to_rotation(self) -> np.ndarray:
        return quaternion_to_rotation(self)


@dataclass(slots=True, frozen=True)
class EulerTriple:
    """Внутренние углы Z-Y-X в градусах."""

    yaw: float
    pitch: float
    roll: float
    gimbal_lock: bool = False

    def as_array(self) -> np.ndarray:
        return np.array([self.yaw, self.pitch, self.roll], dtype=np.float64)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.as_array())))


def project(intrinsics: Intrinsics, pose: PoseSE3, point: np.ndarray) -> np.ndarray:
    """Проецирует мировую точку в пиксель: p = K M P."""

    camera_point = pose.apply(np.asarray(point, dtype=np.float64).reshape(1, 3))[0]
    if camera_point[2] <= 0:
        raise NonPositiveDepth(
            f"Глубина точки в системе камеры {camera_point[2]:.6g} <= 0"
        )
    homogeneous = intrinsics.matrix @ camera_point
    return homogeneous[:2] / homogeneous[2]


def project_points(
    intrinsics: Intrinsics, pose: PoseSE3, points: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Векторная проекция; возвращает пиксели (N x 2) и глубины (N).

    Для точек с неположительной глубиной пиксели не определены (nan).
    """

    camera_points = pose.apply(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    depths = camera_points[:, 2]
    pixels = np.full((len(camera_points), 2), np.nan)
    in_front = depths > 0
    if np.any(in_front):
        homogeneous = camera_points[in_front] @ intrinsics.matrix.T
        pixels[in_front] = homogeneous[:, :2] / homogeneous[:, 2:3]
    return pixels, depths


def backproject(intrinsics: Intrinsics, pixel: np.ndarray, depth: float) -> np.ndarray:
    """Восстанавливает точку в системе камеры: P = K^-1 p z."""

    if depth <= 0:
        raise NonPositiveDepth(f"Глубина {depth} должна быть положительной")
    pixel = np.asarray(pixel, dtype=np.float64).reshape(2)
    return intrinsics.inverse_matrix @ np.array([pixel[0], pixel[1], 1.0]) * depth


def backproject_points(
    intrinsics: Intrinsics, pixels: np.ndarray, depths: np.ndarray
) -> np.ndarray:
    """Векторный вариант ``backproject`` для N пикселей."""

    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    depths = np.asarray(depths, dtype=np.float64).reshape(-1)
    if np.any(depths <= 0):
        raise NonPositiveDepth("Все глубины должны быть положительными")
    homogeneous = np.column_stack([pixels, np.ones(len(pixels))])
    return (homogeneous @ intrinsics.inverse_matrix.T) * depths[:, None]


def bearings(intrinsics: Intrinsics, pixels: np.ndarray) -> np.ndarray:
    """Единичные направления лучей через пиксели."""

    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    rays = np.column_stack([pixels, np.ones(len(pixels))]) @ intrinsics.inverse_matrix.T
    return rays / np.linalg.norm(rays, axis=1, keepdims=True)


def compose(first: PoseSE3, second: PoseSE3) -> PoseSE3:
    """Композиция: сначала ``second``, затем ``first``."""

    return PoseSE3(
        first.rotation @ second.rotation,
        first.rotation @ second.translation + first.translation,
    )


def invert(pose: PoseSE3) -> PoseSE3:
    rotation_t = pose.rotation.T
    return PoseSE3(rotation_t, -rotation_t @ pose.translation)


def axis_rotation(axis: int, degrees: float) -> np.ndarray:
    """Поворот вокруг координатной оси (0 - x, 1 - y, 2 - z)."""

    vector = np.zeros(3)
    vector[axis] = np.deg2rad(degrees)
    return Rotation.from_rotvec(vector).as_matrix()


def rotation_to_euler(rotation: np.ndarray) -> EulerTriple:
    """Углы Эйлера Z-Y-X; при блокировке подвеса выставляется флаг."""

    rotation = np.asarray(rotation, dtype=np.float64)
    yaw, pitch, roll = Rotation.from_matrix(rotation).as_euler(
        EULER_SEQUENCE, degrees=True
    )
    # тангаж прямо по элементам матрицы
    cos_tilt = np.hypot(rotation[0, 0], rotation[1, 0])
    tilt = np.degrees(np.arctan2(-rotation[2, 0], cos_tilt))
    locked = abs(abs(tilt) - 90.0) < GIMBAL_LOCK_TOLERANCE_DEG
    return EulerTriple(float(yaw), float(pitch), float(roll), gimbal_lock=locked)


def euler_to_rotation(euler: EulerTriple) -> np.ndarray:
    rotation = Rotation.from_euler(EULER_SEQUENCE, euler.as_array(), degrees=True)
    return rotation.as_matrix()


def rotation_to_quaternion(rotation: np.ndarray) -> UnitQuaternion:
    x, y, z, w = Rotation.from_matrix(rotation).as_quat()
    return UnitQuaternion.from_array(np.array([w, x, y, z]))


def quaternion_to_rotation(quaternion: UnitQuaternion) -> np.ndarray:
    """Матрица поворота; выражение квадратично по q, поэтому q и -q совпадают."""

    w, x, y, z = quaternion.as_array()
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
