"""Тесты для хранилища отчётов."""

from __future__ import annotations

import math

import orjson
import pytest

from src import main
from src.config import ExperimentConfig, config_to_dict
from src.direct_align import SearchTrace
from src.errors import CorruptedReport
from src.metrics import ResultRecord, summarize
from src.report_store import SCHEMA_HEADER, ReportStore
from src.robust_pnp import EstimateStatus, Method

DAMAGED = f"{SCHEMA_HEADER}\nquery_id,method\n1,FB,extra,garbage\nhand-edited row\n"


def _records(timing: float | None = None) -> list[ResultRecord]:
    return [
        ResultRecord(
            query_id=3,
            method=Method.FB,
            radius=10.0,
            reference_count=2,
            fusion="rwavg",
            status=EstimateStatus.SUCCESS,
            reason=None,
            translation_error=0.1 + 0.2,
            orientation_error=1.0 / 3.0,
            references=(1, 7),
            match_count=42,
            timing_ms=timing,
        ),
        ResultRecord(
            query_id=5,
            method=Method.MI,
            radius=10.0,
            reference_count=2,
            fusion="rwavg",
            status=EstimateStatus.FAILURE,
            reason="SearchDiverged",
            translation_error=math.nan,
            orientation_error=math.nan,
        ),
    ]


def test_report_store_reads_nothing_before_first_write(tmp_path):
    store = ReportStore(tmp_path / "out")
    assert store.read_records() == []


def test_records_round_trip_exactly(tmp_path):
    store = ReportStore(tmp_path / "out")
    path = store.write_records(_records())
    text = path.read_text(encoding="utf-8")
    assert text.splitlines()[0] == SCHEMA_HEADER
    assert "timing_ms" not in text

    restored = store.read_records()
    assert repr(restored) == repr(_records())
    assert restored[0].translation_error == 0.1 + 0.2


def test_timing_column_appears_only_when_measured(tmp_path):
    store = ReportStore(tmp_path)
    store.write_records(_records(timing=12.5))
    assert "timing_ms" in store.records_path.read_text(encoding="utf-8")
    assert store.read_records()[0].timing_ms == 12.5
    assert store.read_records()[1].timing_ms is None


def test_append_keeps_existing_records(tmp_path):
    store = ReportStore(tmp_path)
    first, second = _records()
    store.write_records([first])
    store.append_records([second])
    assert [r.query_id for r in store.read_records()] == [3, 5]


def test_read_of_damaged_file_raises_and_keeps_bytes(tmp_path):
    store = ReportStore(tmp_path)
    store.records_path.write_text(DAMAGED, encoding="utf-8")
    before = store.records_path.read_bytes()

    with pytest.raises(CorruptedReport):
        store.read_records()
    assert store.records_path.read_bytes() == before


def test_read_without_schema_header_raises(tmp_path):
    store = ReportStore(tmp_path)
    store.records_path.write_text("not-a-report", encoding="utf-8")
    with pytest.raises(CorruptedReport):
        store.read_records()
    assert store.records_path.read_text(encoding="utf-8") == "not-a-report"


def test_append_moves_damaged_file_aside(tmp_path):
    store = ReportStore(tmp_path)
    store.records_path.write_text(DAMAGED, encoding="utf-8")
    first, _ = _records()

    store.append_records([first])

    backup = tmp_path / "records.csv.corrupt"
    assert backup.read_text(encoding="utf-8") == DAMAGED
    assert [r.query_id for r in store.read_records()] == [3]


def test_report_command_leaves_damaged_file_intact(tmp_path):
    store = ReportStore(tmp_path)
    store.records_path.write_text(DAMAGED, encoding="utf-8")
    assert main.main(["report", "--out", str(tmp_path)]) == 1
    assert store.records_path.read_text(encoding="utf-8") == DAMAGED


def test_config_is_written_next_to_records(tmp_path):
    path = ReportStore(tmp_path).write_config(
        config_to_dict(ExperimentConfig(seed=4))
    )
    payload = orjson.loads(path.read_bytes())
    assert path.name == "config.json"
    assert payload["seed"] == 4
    assert payload["methods"] == ["FB", "PM", "MI", "HY"]


def test_summary_writes_null_for_missing_statistics(tmp_path):
    store = ReportStore(tmp_path)
    store.write_summary(summarize(_records(), threshold=10.0))
    summary = store.read_summary()
    assert summary["schema_version"] == 1
    groups = {group["method"]: group for group in summary["groups"]}
    assert groups["MI"]["errors"]["median_translation"] is None
    assert groups["FB"]["success_rate"] == 100.0


def test_summary_is_byte_stable(tmp_path):
    first, second = ReportStore(tmp_path / "a"), ReportStore(tmp_path / "b")
    report = summarize(_records(), threshold=10.0)
    assert (
        first.write_summary(report).read_bytes()
        == second.write_summary(report).read_bytes()
    )


def test_cost_surface_lists_translation_passes(tmp_path):
    trace = SearchTrace()
    trace.record("coarse", -1.0, 0.0, 0.5)
    trace.record("fine", -1.2, 0.2, 0.25)
    trace.record("yaw_coarse", 5.0, 0.0, 0.1)
    path = ReportStore(tmp_path).write_cost_surface(trace)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines == [
        "stage,first,second,cost",
        "coarse,-1,0,0.5",
        "fine,-1.2,0.20000000000000001,0.25",
    ]
