"""Иерархия исключений инструментария оценки позы."""

from __future__ import annotations


class PoseToolkitError(RuntimeError):
    """Базовое исключение всех модулей пакета."""


class NonPositiveDepth(PoseToolkitError):
    """Точка лежит позади камеры или в её плоскости."""


class InvalidPose(PoseToolkitError):
    """Матрица поворота не ортонормирована или имеет det != +1."""


class InvalidIntrinsics(PoseToolkitError):
    """Некорректные внутренние параметры камеры."""


class OutOfBounds(PoseToolkitError):
    """Координата выходит за допустимую область изображения."""


class SizeMismatch(PoseToolkitError):
    """Изображения имеют разный размер."""


class DegenerateImage(PoseToolkitError):
    """Изображение без информации (нулевая энтропия)."""


class EmptyOverlap(PoseToolkitError):
    """Нет ни одного совместно валидного пикселя."""


class EmptyResult(PoseToolkitError):
    """Ни одна точка облака не попала в изображение."""


class NoProjections(PoseToolkitError):
    """Набор проекций облака пуст."""


class NoCorrespondences(PoseToolkitError):
    """Все 2D-3D соответствия отброшены."""


class DegenerateConfiguration(PoseToolkitError):
    """Вырожденная минимальная выборка для P3P."""


class AllInfiniteCost(PoseToolkitError):
    """Все ячейки сетки поиска отклонены."""


class AllZeroWeights(PoseToolkitError):
    """Все веса усреднения равны нулю."""


class NoSuccessfulEstimates(PoseToolkitError):
    """Нет ни одной успешной оценки для слияния."""


class TooFewSamples(PoseToolkitError):
    """Дескрипторов меньше, чем размер словаря."""


class EmptyIndex(PoseToolkitError):
    """Поисковый индекс пуст."""


class IndexFormatError(PoseToolkitError):
    """Файл индекса повреждён или имеет неизвестную версию."""


class NoReferenceInRadius(PoseToolkitError):
    """В радиусе неопределённости нет опорных кадров."""


class NoCandidates(PoseToolkitError):
    """Поиск не вернул ни одного кандидата."""


class MissingFile(PoseToolkitError):
    """Отсутствует обязательный файл набора данных."""


class CountMismatch(PoseToolkitError):
    """Число изображений, облаков и поз не совпадает."""


class MalformedPose(PoseToolkitError):
    """Поза в файле не является корректным движением твёрдого тела."""


class NoRecords(PoseToolkitError):
    """Нет записей для сводки."""


class ConfigError(PoseToolkitError):
    """Некорректная конфигурация."""


class InvalidImage(PoseToolkitError):
    """Интенсивности вне диапазона [0, 1] или пустое изображение."""


class CorruptedReport(PoseToolkitError):
    """Файл записей не разбирается."""
