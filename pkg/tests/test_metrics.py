"""Тесты для ошибок позы и сводной статистики."""

from __future__ import annotations

import math

import numpy as np
import pytest

from src import metrics
from src.errors import NoRecords
from src.geometry import PoseSE3, axis_rotation, invert
from src.metrics import ResultRecord
from src.robust_pnp import EstimateStatus, FailureReason, Method, PoseEstimate


def _camera_at(center, yaw: float = 0.0) -> PoseSE3:
    return invert(PoseSE3(axis_rotation(2, yaw), np.asarray(center, dtype=float)))


def _record(
    query_id: int, method: Method, error: float | None, radius: float = 10.0
) -> ResultRecord:
    failed = error is None
    return ResultRecord(
        query_id=query_id,
        method=method,
        radius=radius,
        reference_count=1,
        fusion="single",
        status=EstimateStatus.FAILURE if failed else EstimateStatus.SUCCESS,
        reason="NoConsensus" if failed else None,
        translation_error=math.nan if failed else error,
        orientation_error=math.nan if failed else error / 10.0,
    )


def test_translation_error_is_center_distance():
    gt = _camera_at([0.0, 0.0, 0.0])
    est = _camera_at([3.0, 4.0, 0.0])
    assert metrics.translation_error(gt, est) == pytest.approx(5.0)


def test_orientation_error_of_pure_yaw():
    gt = _camera_at([1.0, 2.0, 3.0])
    est = _camera_at([1.0, 2.0, 3.0], yaw=10.0)
    assert metrics.max_orientation_error(gt, est) == pytest.approx(10.0)
    assert metrics.translation_error(gt, est) == pytest.approx(0.0, abs=1e-12)


def test_make_record_for_failure_has_nan_errors():
    failure = PoseEstimate.failure(
        Method.MI, FailureReason.SEARCH_DIVERGED, match_count=3
    )
    record = metrics.make_record(
        query_id=4,
        gt=PoseSE3.identity(),
        estimate=failure,
        radius=15,
        reference_count=1,
        fusion="single",
        references=[2],
    )
    assert math.isnan(record.translation_error)
    assert record.reason == "SearchDiverged"
    assert record.match_count == 3
    assert record.radius == 15.0
    assert not record.succeeded(10.0)


def test_success_requires_error_within_threshold():
    assert _record(0, Method.FB, 9.5).succeeded(10.0)
    assert _record(0, Method.FB, 10.0).succeeded(10.0)
    assert not _record(0, Method.FB, 10.5).succeeded(10.0)


def test_summary_rates_and_oracle_statistics():
    errors = [0.5, 1.5, 2.0, 30.0, None]
    records = [_record(i, Method.FB, e) for i, e in enumerate(errors)]
    report = metrics.summarize(records, threshold=10.0)
    group = report.group("FB")
    assert group.total == 5
    assert group.successes == 3
    assert group.success_rate == pytest.approx(60.0)

    good = np.array([0.5, 1.5, 2.0])
    assert group.errors.median_translation == pytest.approx(float(np.median(good)))
    assert group.errors.rmse_translation == pytest.approx(
        float(np.sqrt(np.mean(good**2)))
    )
    assert group.errors.median_orientation == pytest.approx(0.15)


def test_summary_without_successes_has_nan_statistics():
    report = metrics.summarize([_record(0, Method.PM, None)], threshold=10.0)
    group = report.group("PM")
    assert group.success_rate == 0.0
    assert math.isnan(group.errors.median_translation)


def test_summary_groups_by_radius():
    records = [
        _record(0, Method.FB, 1.0, radius=10.0),
        _record(0, Method.FB, None, radius=20.0),
    ]
    report = metrics.summarize(records, threshold=10.0)
    assert report.group("FB", 10.0).success_rate == 100.0
    assert report.group("FB", 20.0).success_rate == 0.0
    with pytest.raises(KeyError):
        report.group("HY")


def test_common_subset_uses_queries_all_methods_solved():
    records = [
        _record(0, Method.FB, 1.0),
        _record(1, Method.FB, 2.0),
        _record(2, Method.FB, None),
        _record(0, Method.MI, 3.0),
        _record(1, Method.MI, None),
        _record(2, Method.MI, 4.0),
    ]
    report = metrics.summarize(records, threshold=10.0)
    (common,) = report.common
    assert common.size == 1
    assert common.per_method["FB"].median_translation == pytest.approx(1.0)
    assert common.per_method["MI"].median_translation == pytest.approx(3.0)


def test_summary_requires_records():
    with pytest.raises(NoRecords):
        metrics.summarize([], threshold=10.0)
