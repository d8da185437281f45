"""Ошибки позы, записи результатов и сводная статистика по методам."""

from __future__ import annotations

import math
from collections import defaultdict
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import NoRecords
from .geometry import PoseSE3, rotation_to_euler
from .logger import get_logger
from .robust_pnp import EstimateStatus, Method, PoseEstimate

logger = get_logger(__name__)


def translation_error(gt: PoseSE3, est: PoseSE3) -> float:
    """Расстояние между центрами камер, в метрах."""

    return float(np.linalg.norm(gt.center - est.center))


def max_orientation_error(gt: PoseSE3, est: PoseSE3) -> float:
    """Наибольший по модулю угол Эйлера поворота R_gt R_est^T, в градусах."""

    return rotation_to_euler(gt.rotation @ est.rotation.T).max_abs()


@dataclass(slots=True, frozen=True)
class ResultRecord:
    """Результат одного запроса при одном наборе условий."""

    query_id: int
    method: Method
    radius: float
    reference_count: int
    fusion: str
    status: EstimateStatus
    reason: str | None
    translation_error: float
    orientation_error: float
    references: tuple[int, ...] = ()
    match_count: int = 0
    timing_ms: float | None = None

    @property
    def condition(self) -> tuple[str, float, int, str]:
        return (self.method.value, self.radius, self.reference_count, self.fusion)

    def succeeded(self, threshold: float) -> bool:
        return (
            self.status is EstimateStatus.SUCCESS
            and math.isfinite(self.translation_error)
            and self.translation_error <= threshold
        )


def make_record(
    *,
    query_id: int,
    gt: PoseSE3,
    estimate: PoseEstimate,
    radius: float,
    reference_count: int,
    fusion: str,
    references: Sequence[int],
    timing_ms: float | None = None,
) -> ResultRecord:
    if estimate.succeeded and estimate.pose is not None:
        t_err = translation_error(gt, estimate.pose)
        r_err = max_orientation_error(gt, estimate.pose)
    else:
        t_err = r_err = math.nan
    return ResultRecord(
        query_id=query_id,
        method=estimate.method,
        radius=float(radius),
        reference_count=reference_count,
        fusion=fusion,
        status=estimate.status,
        reason=estimate.reason.value if estimate.reason is not None else None,
        translation_error=t_err,
        orientation_error=r_err,
        references=tuple(int(r) for r in references),
        match_count=estimate.match_count,
        timing_ms=timing_ms,
    )


@dataclass(slots=True, frozen=True)
class ErrorStats:
    median_translation: float
    rmse_translation: float
    median_orientation: float
    rmse_orientation: float

    @classmethod
    def of(
        cls, translations: Sequence[float], orientations: Sequence[float]
    ) -> ErrorStats:
        return cls(
            median_translation=_median(translations),
            rmse_translation=_rmse(translations),
            median_orientation=_median(orientations),
            rmse_orientation=_rmse(orientations),
        )


@dataclass(slots=True, frozen=True)
class GroupSummary:
    method: str
    radius: float
    reference_count: int
    fusion: str
    total: int
    successes: int
    success_rate: float
    errors: ErrorStats


@dataclass(slots=True, frozen=True)
class CommonSubset:
    """Статистика методов только по запросам, успешным для всех методов условия."""

    radius: float
    reference_count: int
    fusion: str
    size: int
    per_method: dict[str, ErrorStats] = field(default_factory=dict)


@dataclass(slots=True, frozen=True)
class SummaryReport:
    threshold: float
    groups: tuple[GroupSummary, ...]
    common: tuple[CommonSubset, ...]

    def group(self, method: str, radius: float | None = None) -> GroupSummary:
        for item in self.groups:
            if item.method == method and (radius is None or item.radius == radius):
                return item
        raise KeyError(f"Нет группы для метода {method} и радиуса {radius}")


def _median(values: Sequence[float]) -> float:
    return float(np.median(values)) if len(values) else math.nan


def _rmse(values: Sequence[float]) -> float:
    if not len(values):
        return math.nan
    return float(np.sqrt(np.mean(np.square(values))))


def summarize(records: Sequence[ResultRecord], threshold: float) -> SummaryReport:
    """Доля успехов и медиана/RMSE ошибок по группам (метод, радиус, k, слияние).

    Неуспешные запросы учитываются в доле успехов, но не в статистике ошибок.
    """

    if not records:
        raise NoRecords("Нет записей для сводки")

    grouped: dict[tuple[str, float, int, str], list[ResultRecord]] = defaultdict(list)
    for record in records:
        grouped[record.condition].append(record)

    groups = []
    for key in sorted(grouped):
        method, radius, reference_count, fusion = key
        items = grouped[key]
        good = [r for r in items if r.succeeded(threshold)]
        groups.append(
            GroupSummary(
                method=method,
                radius=radius,
                reference_count=reference_count,
                fusion=fusion,
                total=len(items),
                successes=len(good),
                success_rate=100.0 * len(good) / len(items),
                errors=ErrorStats.of(
                    [r.translation_error for r in good],
                    [r.orientation_error for r in good],
                ),
            )
        )

    report = SummaryReport(
        threshold=threshold,
        groups=tuple(groups),
        common=_common_subsets(records, threshold),
    )
    logger.info(
        "Сводка построена",
        context={
            "records": len(records),
            "groups": len(groups),
            "threshold": threshold,
        },
    )
    return report


def _common_subsets(
    records: Sequence[ResultRecord], threshold: float
) -> tuple[CommonSubset, ...]:
    by_condition: dict[tuple[float, int, str], dict[str, dict[int, ResultRecord]]] = (
        defaultdict(lambda: defaultdict(dict))
    )
    for record in records:
        condition = (record.radius, record.reference_count, record.fusion)
        by_condition[condition][record.method.value][record.query_id] = record

    subsets = []
    for condition in sorted(by_condition):
        methods = by_condition[condition]
        shared: set[int] | None = None
        for per_query in methods.values():
            good = {q for q, r in per_query.items() if r.succeeded(threshold)}
            shared = good if shared is None else shared & good
        shared_ids = sorted(shared or set())
        per_method = {
            method: ErrorStats.of(
                [methods[method][q].translation_error for q in shared_ids],
                [methods[method][q].orientation_error for q in shared_ids],
            )
            for method in sorted(methods)
        }
        radius, reference_count, fusion = condition
        subsets.append(
            CommonSubset(
                radius=radius,
                reference_count=reference_count,
                fusion=fusion,
                size=len(shared_ids),
                per_method=per_method,
            )
        )
    return tuple(subsets)
