"""Асинхронный прогон эксперимента по запросам с ограничением параллелизма."""

from __future__ import annotations

import asyncio
import dataclasses
import time
from collections.abc import Sequence

import numpy as np

from .config import ExperimentConfig
from .dataset import DatasetIndex, Frame
from .errors import NoCandidates, NoReferenceInRadius
from .features import DetectorConfig, detect_and_describe
from .imaging import GrayImage
from .logger import get_logger
from .metrics import ResultRecord
from .pipelines import (
    run_large_uncertainty,
    run_multi_reference,
    run_single_reference,
)
from .report_store import ReportStore
from .retrieval import InvertedIndex, build_vocabulary, index_references
from .robust_pnp import Method
from .synthetic import apply_corruption

CORRUPTION_STREAM = 1


def split_queries(
    dataset: DatasetIndex, fraction: float, seed: int
) -> tuple[list[int], list[int]]:
    """Случайная доля кадров становится запросами, остальные опорными.

    Оба списка отсортированы по номеру кадра.
    """

    count = len(dataset)
    if count < 2:
        raise ValueError("Для разбиения нужно не меньше двух кадров")
    query_count = min(max(1, round(fraction * count)), count - 1)
    order = np.random.default_rng(seed).permutation(count)
    ids = np.array([frame.frame_id for frame in dataset.frames])
    queries = sorted(int(i) for i in ids[order[:query_count]])
    references = sorted(int(i) for i in ids[order[query_count:]])
    return queries, references


def build_reference_index(
    references: DatasetIndex,
    vocabulary_size: int,
    seed: int,
    detector: DetectorConfig | None = None,
) -> InvertedIndex:
    """Словарь по дескрипторам всех опорных кадров и инвертированный индекс."""

    descriptors = [
        detect_and_describe(frame.image, detector).descriptors
        for frame in references.frames
    ]
    sample = np.concatenate([d for d in descriptors if len(d)], axis=0)
    vocabulary = build_vocabulary(sample, vocabulary_size, seed)
    return index_references(
        [frame.reference() for frame in references.frames], vocabulary, detector
    )


class ExperimentRunner:
    """Прогоняет все сочетания (запрос, метод, радиус) и собирает записи."""

    def __init__(
        self,
        dataset: DatasetIndex,
        config: ExperimentConfig,
        *,
        index: InvertedIndex | None = None,
    ) -> None:
        self.dataset = dataset
        self.config = config
        self.index = index
        self.logger = get_logger(__name__)
        query_ids, reference_ids = split_queries(
            dataset, config.query_fraction, config.seed
        )
        self.queries = [dataset.frame(i) for i in query_ids]
        self.references = dataset.subset(reference_ids)

    def ensure_index(self) -> InvertedIndex:
        if self.index is None:
            self.index = build_reference_index(
                self.references,
                self.config.vocabulary_size,
                self.config.seed,
                self.config.estimation.detector,
            )
        return self.index

    def _query_image(self, query: Frame) -> GrayImage:
        corruption = self.config.query_corruption
        if corruption is None:
            return query.image
        rng = np.random.default_rng(
            [self.config.seed, query.frame_id, CORRUPTION_STREAM]
        )
        return apply_corruption(query.image, corruption, rng)

    def run_one(
        self, query: Frame, method: Method, radius: float
    ) -> ResultRecord | None:
        """Обрабатывает один запрос; запросы без опорных кадров пропускаются."""

        config = self.config
        image = self._query_image(query)
        started = time.perf_counter()
        try:
            if config.large_uncertainty:
                record = run_large_uncertainty(
                    query,
                    self.references,
                    self.ensure_index(),
                    radius,
                    method,
                    config.seed,
                    config.estimation,
                    k=config.retrieval_k,
                    fusion=config.fusion,
                    use_prior=config.use_prior,
                    query_image=image,
                )
            elif config.reference_count == 1:
                record = run_single_reference(
                    query,
                    self.references,
                    radius,
                    method,
                    config.seed,
                    config.estimation,
                    query_image=image,
                )
            else:
                record = run_multi_reference(
                    query,
                    self.references,
                    radius,
                    method,
                    config.reference_count,
                    config.fusion,
                    config.seed,
                    config.estimation,
                    query_image=image,
                )
        except (NoReferenceInRadius, NoCandidates) as error:
            self.logger.warning(
                "Запрос пропущен: нет опорных кадров",
                context={
                    "query": query.frame_id,
                    "radius": radius,
                    "error": str(error),
                },
            )
            return None
        if config.record_timing:
            elapsed = (time.perf_counter() - started) * 1000.0
            record = dataclasses.replace(record, timing_ms=elapsed)
        return record

    def _radii(self) -> Sequence[float]:
        if self.config.large_uncertainty:
            return (self.config.large_radius,)
        return self.config.radii

    async def run(self, store: ReportStore | None = None) -> list[ResultRecord]:
        """Прогон в потоках; записи упорядочены по условию и id запроса.

        Со ``store`` каждое готовое условие (метод, радиус) дописывается в файл
        записей, а в конце файл перезаписывается в итоговом порядке.
        """

        if self.config.large_uncertainty:
            await asyncio.to_thread(self.ensure_index)
        semaphore = asyncio.Semaphore(self.config.workers)

        async def guarded(
            query: Frame, method: Method, radius: float
        ) -> ResultRecord | None:
            async with semaphore:
                return await asyncio.to_thread(self.run_one, query, method, radius)

        conditions = [
            (method, radius)
            for method in self.config.methods
            for radius in self._radii()
        ]
        self.logger.info(
            "Эксперимент запущен",
            context={
                "queries": len(self.queries),
                "references": len(self.references),
                "jobs": len(conditions) * len(self.queries),
                "workers": self.config.workers,
            },
        )
        if store is not None:
            store.write_records([])
        records: list[ResultRecord] = []
        skipped = 0
        for method, radius in conditions:
            results = await asyncio.gather(
                *(guarded(query, method, radius) for query in self.queries)
            )
            batch = [record for record in results if record is not None]
            skipped += len(results) - len(batch)
            if store is not None:
                store.append_records(batch)
            records.extend(batch)

        records.sort(key=lambda r: (r.condition, r.query_id))
        if store is not None:
            store.write_records(records)
        self.logger.info(
            "Эксперимент завершён",
            context={"records": len(records), "skipped": skipped},
        )
        return records
