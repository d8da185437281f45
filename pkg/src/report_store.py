"""Файловое хранилище отчётов: записи в CSV, сводка в JSON, поверхность стоимости."""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Iterable, Sequence
from dataclasses import asdict
from pathlib import Path
from typing import Any

import orjson

from .direct_align import SearchTrace
from .errors import CorruptedReport
from .logger import get_logger
from .metrics import ResultRecord, SummaryReport
from .robust_pnp import EstimateStatus, Method

SCHEMA_VERSION = 1
SCHEMA_HEADER = f"#schema_version={SCHEMA_VERSION}"
RECORDS_FILE = "records.csv"
SUMMARY_FILE = "summary.json"
CONFIG_FILE = "config.json"
CORRUPT_SUFFIX = ".corrupt"
RECORD_COLUMNS = (
    "query_id",
    "method",
    "radius",
    "reference_count",
    "fusion",
    "status",
    "reason",
    "translation_error",
    "orientation_error",
    "references",
    "match_count",
)
TIMING_COLUMN = "timing_ms"
SURFACE_COLUMNS = ("stage", "first", "second", "cost")


def _number(value: float) -> str:
    return format(float(value), ".17g")


def _float_or_nan(text: str) -> float:
    return float(text) if text else math.nan


class ReportStore:
    """Каталог отчётов прогона."""

    def __init__(self, root: Path) -> None:
        self.root = Path(root)
        self.records_path = self.root / RECORDS_FILE
        self.summary_path = self.root / SUMMARY_FILE
        self.logger = get_logger(__name__)

    def write_records(self, records: Sequence[ResultRecord]) -> Path:
        """Перезаписывает CSV; столбец времени появляется только при наличии замеров."""

        self.root.mkdir(parents=True, exist_ok=True)
        timed = any(record.timing_ms is not None for record in records)
        self.records_path.write_text(self._render(records, timed), encoding="utf-8")
        self.logger.info(
            "Записи сохранены",
            context={"path": str(self.records_path), "records": len(records)},
        )
        return self.records_path

    def append_records(self, records: Sequence[ResultRecord]) -> Path:
        """Дописывает пачку; повреждённый файл сначала переносится в .corrupt."""

        try:
            existing = self.read_records()
        except CorruptedReport:
            backup = self.records_path.with_name(RECORDS_FILE + CORRUPT_SUFFIX)
            self.records_path.replace(backup)
            self.logger.error(
                "Повреждённый файл записей отложен, начат новый",
                context={"path": str(self.records_path), "backup": str(backup)},
            )
            existing = []
        return self.write_records([*existing, *records])

    def read_records(self) -> list[ResultRecord]:
        """Читает записи; повреждённый файл не трогается, а поднимается ошибка."""

        if not self.records_path.exists():
            return []
        text = self.records_path.read_text(encoding="utf-8")
        try:
            return self._parse(text)
        except (ValueError, KeyError, IndexError, TypeError) as error:
            self.logger.error(
                "Файл записей повреждён",
                context={"path": str(self.records_path), "error": str(error)},
            )
            raise CorruptedReport(
                f"Не удалось разобрать {self.records_path}: {error}"
            ) from error

    def write_summary(self, report: SummaryReport) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        payload = {"schema_version": SCHEMA_VERSION, **_jsonable(asdict(report))}
        self.summary_path.write_bytes(
            orjson.dumps(payload, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS)
        )
        self.logger.info("Сводка сохранена", context={"path": str(self.summary_path)})
        return self.summary_path

    def write_config(self, payload: dict[str, Any]) -> Path:
        """Итоговая конфигурация прогона рядом с записями."""

        self.root.mkdir(parents=True, exist_ok=True)
        path = self.root / CONFIG_FILE
        path.write_bytes(
            orjson.dumps(payload, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS)
        )
        return path

    def read_summary(self) -> dict[str, Any]:
        return orjson.loads(self.summary_path.read_bytes())

    def write_cost_surface(
        self, trace: SearchTrace, name: str = "cost_surface.csv"
    ) -> Path:
        """Узлы сеток смещения (проходы coarse и fine) со значениями стоимости."""

        self.root.mkdir(parents=True, exist_ok=True)
        path = self.root / name
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(SURFACE_COLUMNS)
        for stage in ("coarse", "fine"):
            for first, second, cost in trace.stage(stage):
                writer.writerow([stage, _number(first), _number(second), _number(cost)])
        path.write_text(buffer.getvalue(), encoding="utf-8")
        self.logger.info(
            "Поверхность стоимости сохранена",
            context={"path": str(path), "rows": len(trace.entries)},
        )
        return path

    @staticmethod
    def _render(records: Iterable[ResultRecord], timed: bool) -> str:
        buffer = io.StringIO()
        buffer.write(SCHEMA_HEADER + "\n")
        writer = csv.writer(buffer, lineterminator="\n")
        columns = [*RECORD_COLUMNS, TIMING_COLUMN] if timed else list(RECORD_COLUMNS)
        writer.writerow(columns)
        for record in records:
            row = [
                record.query_id,
                record.method.value,
                _number(record.radius),
                record.reference_count,
                record.fusion,
                record.status.value,
                record.reason or "",
                _number(record.translation_error),
                _number(record.orientation_error),
                ";".join(str(r) for r in record.references),
                record.match_count,
            ]
            if timed:
                timing = record.timing_ms
                row.append("" if timing is None else _number(timing))
            writer.writerow(row)
        return buffer.getvalue()

    @staticmethod
    def _parse(text: str) -> list[ResultRecord]:
        lines = text.splitlines()
        if not lines or lines[0].strip() != SCHEMA_HEADER:
            raise ValueError("отсутствует или не совпадает заголовок схемы")
        rows = list(csv.DictReader(lines[1:]))
        records = []
        for row in rows:
            references = row["references"]
            records.append(
                ResultRecord(
                    query_id=int(row["query_id"]),
                    method=Method(row["method"]),
                    radius=float(row["radius"]),
                    reference_count=int(row["reference_count"]),
                    fusion=row["fusion"],
                    status=EstimateStatus(row["status"]),
                    reason=row["reason"] or None,
                    translation_error=_float_or_nan(row["translation_error"]),
                    orientation_error=_float_or_nan(row["orientation_error"]),
                    references=tuple(int(r) for r in references.split(";") if r),
                    match_count=int(row["match_count"]),
                    timing_ms=(
                        _float_or_nan(row[TIMING_COLUMN])
                        if row.get(TIMING_COLUMN)
                        else None
                    ),
                )
            )
        return records


def _jsonable(value: Any) -> Any:
    """nan и inf в JSON превращаются в null."""

    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, list | tuple):
        return [_jsonable(v) for v in value]
    return value
