"""Конфигурация эксперимента: значения по умолчанию, файл, окружение и флаги CLI."""

from __future__ import annotations

import dataclasses
import os
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import orjson

from .direct_align import GridSearchConfig
from .errors import ConfigError
from .features import DetectorConfig
from .fusion import FusionStrategy
from .logger import get_logger
from .robust_pnp import Method, RansacConfig
from .synthetic import parse_corruption

logger = get_logger(__name__)

MAX_REFERENCE_COUNT = 5
WORKERS_ENV = "POSE_WORKERS"


def _method(value: Method | str) -> Method:
    if isinstance(value, Method):
        return value
    return Method(str(value).strip().upper())


@dataclass(slots=True, frozen=True)
class EstimationConfig:
    """Настройки всех оценщиков для одного запроса."""

    detector: DetectorConfig = field(default_factory=DetectorConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    grid: GridSearchConfig = field(default_factory=GridSearchConfig)


@dataclass(slots=True, frozen=True)
class ExperimentConfig:
    """Параметры прогона: методы, радиусы, число опорных кадров и слияние."""

    methods: tuple[Method, ...] = (Method.FB, Method.PM, Method.MI, Method.HY)
    radii: tuple[float, ...] = (10.0,)
    reference_count: int = 1
    fusion: FusionStrategy = FusionStrategy.RWAVG
    failure_threshold: float = 10.0
    query_fraction: float = 0.1
    seed: int = 0
    vocabulary_size: int = 256
    retrieval_k: int = 5
    large_uncertainty: bool = False
    large_radius: float = 200.0
    use_prior: bool = True
    query_corruption: str | None = None
    workers: int = 1
    record_timing: bool = False
    estimation: EstimationConfig = field(default_factory=EstimationConfig)

    def __post_init__(self) -> None:
        try:
            methods = tuple(_method(m) for m in self.methods)
            fusion = FusionStrategy(self.fusion)
        except ValueError as error:
            raise ConfigError(
                f"Некорректный метод или стратегия слияния: {error}"
            ) from error
        if not methods:
            raise ConfigError("Нужен хотя бы один метод")
        radii = tuple(float(r) for r in self.radii)
        if not radii or any(r <= 0 for r in radii):
            raise ConfigError(f"Радиусы должны быть положительными, получено {radii}")
        if not 1 <= self.reference_count <= MAX_REFERENCE_COUNT:
            raise ConfigError(
                f"reference_count должен лежать в [1, {MAX_REFERENCE_COUNT}], "
                f"получено {self.reference_count}"
            )
        if not 0.0 < self.query_fraction < 1.0:
            raise ConfigError("query_fraction должна лежать в (0, 1)")
        if self.failure_threshold <= 0 or self.large_radius <= 0:
            raise ConfigError(
                "failure_threshold и large_radius должны быть положительными"
            )
        if self.vocabulary_size < 2 or self.retrieval_k < 1 or self.workers < 1:
            raise ConfigError("Некорректные vocabulary_size, retrieval_k или workers")
        if self.query_corruption is not None:
            parse_corruption(self.query_corruption)
        object.__setattr__(self, "methods", methods)
        object.__setattr__(self, "fusion", fusion)
        object.__setattr__(self, "radii", radii)


SECTIONS: dict[str, type] = {
    "detector": DetectorConfig,
    "ransac": RansacConfig,
    "grid": GridSearchConfig,
}


def _build(cls: type, data: Mapping[str, Any], where: str) -> Any:
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"Неизвестные ключи в {where}: {unknown}")
    values = {key: tuple(v) if isinstance(v, list) else v for key, v in data.items()}
    try:
        return cls(**values)
    except TypeError as error:
        raise ConfigError(f"Некорректные значения в {where}: {error}") from error


def config_from_mapping(data: Mapping[str, Any]) -> ExperimentConfig:
    """Собирает ExperimentConfig из словаря; вложенные секции detector, ransac, grid."""

    if not isinstance(data, Mapping):
        raise ConfigError("Конфигурация должна быть JSON-объектом")
    top = dict(data)
    sections = {
        name: _build(cls, top.pop(name, None) or {}, name)
        for name, cls in SECTIONS.items()
    }
    estimation = EstimationConfig(**sections)
    return _build(ExperimentConfig, {**top, "estimation": estimation}, "конфигурации")


def load_config(path: Path | None) -> ExperimentConfig:
    """Читает JSON-файл конфигурации; без пути возвращает значения по умолчанию."""

    if path is None:
        return ExperimentConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Файл конфигурации не найден: {path}")
    try:
        data = orjson.loads(path.read_bytes())
    except orjson.JSONDecodeError as error:
        raise ConfigError(
            f"Файл конфигурации {path} не является JSON: {error}"
        ) from error
    config = config_from_mapping(data)
    logger.info("Конфигурация загружена", context={"path": str(path)})
    return config


def apply_env(config: ExperimentConfig) -> ExperimentConfig:
    raw = os.getenv(WORKERS_ENV)
    if raw is None or not raw.strip():
        return config
    try:
        workers = int(raw)
    except ValueError as error:
        raise ConfigError(
            f"{WORKERS_ENV} должен быть целым числом, получено {raw!r}"
        ) from error
    logger.info("Число потоков задано окружением", context={"workers": workers})
    return dataclasses.replace(config, workers=workers)


def apply_overrides(config: ExperimentConfig, **overrides: Any) -> ExperimentConfig:
    """Флаги CLI поверх файла и окружения; значения None пропускаются."""

    changes = {key: value for key, value in overrides.items() if value is not None}
    if not changes:
        return config
    logger.info(
        "Переопределения из командной строки",
        context={"overrides": sorted(changes)},
    )
    try:
        return dataclasses.replace(config, **changes)
    except TypeError as error:
        raise ConfigError(f"Неизвестный параметр: {error}") from error


def resolve_config(path: Path | None, **overrides: Any) -> ExperimentConfig:
    """Слои: значения по умолчанию < файл < окружение < флаги CLI."""

    return apply_overrides(apply_env(load_config(path)), **overrides)


def config_to_dict(config: ExperimentConfig) -> dict[str, Any]:
    return dataclasses.asdict(config)
