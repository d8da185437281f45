"""Тесты для JSON-логирования."""

from __future__ import annotations

import logging

import numpy as np
import orjson

from src.logger import ContextLogger, JsonFormatter, get_logger, sanitize_context
from src.robust_pnp import Method


def _format(context: dict) -> dict:
    record = logging.LogRecord(
        "test", logging.INFO, __file__, 1, "сообщение", None, None
    )
    record._context = context
    return orjson.loads(JsonFormatter().format(record))


def test_formatter_serializes_numpy_and_enums():
    payload = _format({"offset": np.array([1.0, 2.0]), "method": Method.MI})
    assert payload["level"] == "info"
    assert payload["msg"] == "сообщение"
    assert payload["context"] == {"offset": [1.0, 2.0], "method": "MI"}
    assert payload["ts"].endswith("Z")


def test_non_finite_floats_become_strings():
    assert sanitize_context({"cost": float("inf"), "error": float("nan")}) == {
        "cost": "inf",
        "error": "nan",
    }


def test_get_logger_passes_context(caplog):
    logger = get_logger("pose.test")
    assert isinstance(logger, ContextLogger)
    with caplog.at_level(logging.INFO, logger="pose.test"):
        logger.info("готово", context={"frames": 3})
    (record,) = caplog.records
    assert record._context == {"frames": 3}
