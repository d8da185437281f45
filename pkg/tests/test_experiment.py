"""Тесты для разбиения набора и асинхронного прогона эксперимента."""

from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from src import experiment
from src.config import EstimationConfig, ExperimentConfig
from src.direct_align import GridSearchConfig
from src.metrics import summarize
from src.report_store import ReportStore
from src.robust_pnp import Method

FAST = EstimationConfig(
    grid=GridSearchConfig(extent=1.0, step1=1.0, step2=0.5, steps_per_side=2)
)


def _config(**changes) -> ExperimentConfig:
    base = ExperimentConfig(
        methods=(Method.FB, Method.HY),
        radii=(2.5,),
        query_fraction=0.3,
        seed=5,
        vocabulary_size=8,
        workers=2,
        estimation=FAST,
    )
    return dataclasses.replace(base, **changes)


def test_split_is_sorted_disjoint_and_seeded(small_scene):
    queries, references = experiment.split_queries(small_scene.index, 0.3, seed=1)
    assert queries == sorted(queries)
    assert references == sorted(references)
    assert not set(queries) & set(references)
    assert len(queries) + len(references) == len(small_scene.index)
    assert len(queries) == 2
    assert experiment.split_queries(small_scene.index, 0.3, seed=1) == (
        queries,
        references,
    )


def test_split_keeps_at_least_one_of_each(small_scene):
    queries, references = experiment.split_queries(small_scene.index, 0.01, seed=0)
    assert len(queries) == 1
    with pytest.raises(ValueError):
        experiment.split_queries(small_scene.index.subset([0]), 0.5, seed=0)


def test_runner_references_exclude_queries(small_scene):
    runner = experiment.ExperimentRunner(small_scene.index, _config())
    query_ids = {q.frame_id for q in runner.queries}
    assert not query_ids & {f.frame_id for f in runner.references.frames}


@pytest.mark.asyncio
async def test_run_produces_sorted_records(small_scene):
    records = await experiment.ExperimentRunner(small_scene.index, _config()).run()
    assert records
    keys = [(r.condition, r.query_id) for r in records]
    assert keys == sorted(keys)
    assert {r.method for r in records} <= {Method.FB, Method.HY}


@pytest.mark.asyncio
async def test_reports_are_byte_identical_across_runs(tmp_path, small_scene):
    outputs = []
    for name in ("first", "second"):
        records = await experiment.ExperimentRunner(small_scene.index, _config()).run()
        store = ReportStore(tmp_path / name)
        store.write_records(records)
        store.write_summary(summarize(records, threshold=10.0))
        outputs.append(
            (store.records_path.read_bytes(), store.summary_path.read_bytes())
        )
    assert outputs[0] == outputs[1]


class CountingStore(ReportStore):
    def __init__(self, root) -> None:
        super().__init__(root)
        self.batches: list[int] = []

    def append_records(self, records):
        self.batches.append(len(records))
        return super().append_records(records)


@pytest.mark.asyncio
async def test_run_appends_each_condition_to_store(tmp_path, small_scene):
    store = CountingStore(tmp_path)
    config = _config(radii=(2.5, 4.0))
    records = await experiment.ExperimentRunner(small_scene.index, config).run(store)
    assert len(store.batches) == len(config.methods) * len(config.radii)
    assert sum(store.batches) == len(records)
    assert repr(store.read_records()) == repr(records)


@pytest.mark.asyncio
async def test_queries_without_references_are_skipped(small_scene):
    runner = experiment.ExperimentRunner(small_scene.index, _config(radii=(0.1,)))
    assert await runner.run() == []


@pytest.mark.asyncio
async def test_large_uncertainty_builds_index(small_scene):
    config = _config(methods=(Method.FB,), large_uncertainty=True, retrieval_k=2)
    runner = experiment.ExperimentRunner(small_scene.index, config)
    records = await runner.run()
    assert runner.index is not None
    assert len(runner.index) == len(runner.references)
    assert all(r.radius == config.large_radius for r in records)
    assert all(len(r.references) <= 2 for r in records)


def test_timing_is_recorded_on_request(small_scene):
    runner = experiment.ExperimentRunner(small_scene.index, _config(record_timing=True))
    record = runner.run_one(runner.queries[0], Method.FB, 2.5)
    assert record is not None
    assert record.timing_ms is not None and record.timing_ms >= 0.0


def test_query_corruption_is_reproducible(small_scene):
    runner = experiment.ExperimentRunner(
        small_scene.index, _config(query_corruption="noise:0.05")
    )
    query = runner.queries[0]
    first, second = runner._query_image(query), runner._query_image(query)
    assert np.array_equal(first.intensities, second.intensities)
    assert not np.array_equal(first.intensities, query.image.intensities)
