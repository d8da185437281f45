"""Сквозные методы оценки позы (FB, PM, MI, HY) и протоколы выбора опорных кадров."""

from __future__ import annotations

import dataclasses
from collections.abc import Callable, Sequence

import numpy as np

from .config import EstimationConfig
from .dataset import DatasetIndex, Frame
from .direct_align import CostKind, estimate_direct
from .errors import NoCandidates, NoCorrespondences, NoReferenceInRadius
from .features import FeatureSet, build_2d3d, detect_and_describe, match_features
from .fusion import FusionStrategy, WeightedPose, fuse
from .geometry import Intrinsics, compose
from .imaging import GrayImage
from .logger import get_logger
from .metrics import ResultRecord, make_record
from .retrieval import InvertedIndex, rank_descriptors
from .robust_pnp import FailureReason, Method, PoseEstimate, mlesac_pnp
from .scene import ReferenceTuple

logger = get_logger(__name__)

SINGLE_REFERENCE = "single"


def _features(
    image: GrayImage, cfg: EstimationConfig, cached: FeatureSet | None
) -> FeatureSet:
    return cached if cached is not None else detect_and_describe(image, cfg.detector)


def count_matches(
    query: GrayImage,
    ref: ReferenceTuple,
    cfg: EstimationConfig,
    *,
    query_features: FeatureSet | None = None,
) -> int:
    """Число пар после теста отношения; служит весом при слиянии."""

    query_features = _features(query, cfg, query_features)
    reference_features = detect_and_describe(ref.image, cfg.detector)
    return len(match_features(query_features, reference_features, cfg.detector.ratio))


def estimate_fb(
    query: GrayImage,
    ref: ReferenceTuple,
    intrinsics: Intrinsics,
    cfg: EstimationConfig,
    *,
    query_features: FeatureSet | None = None,
) -> PoseEstimate:
    """Признаки, 2D-3D пары и MLESAC; итоговая поза переводится в мировую систему."""

    query_features = _features(query, cfg, query_features)
    reference_features = detect_and_describe(ref.image, cfg.detector)
    matches = match_features(query_features, reference_features, cfg.detector.ratio)
    try:
        corrs = build_2d3d(matches, ref, intrinsics, cfg.detector.depth_gate)
    except NoCorrespondences as error:
        return PoseEstimate.failure(
            Method.FB,
            FailureReason.INSUFFICIENT_CORRESPONDENCES,
            match_count=len(matches),
            reference=ref.frame_id,
            error=str(error),
        )

    relative = mlesac_pnp(corrs, intrinsics, cfg.ransac)
    diagnostics = {
        **relative.diagnostics,
        "reference": ref.frame_id,
        "correspondences": len(corrs),
    }
    if not relative.succeeded or relative.pose is None:
        return dataclasses.replace(
            relative, match_count=len(matches), diagnostics=diagnostics
        )
    # точки пар заданы в системе опорной камеры
    return dataclasses.replace(
        relative,
        pose=compose(relative.pose, ref.pose),
        match_count=len(matches),
        diagnostics=diagnostics,
    )


def estimate_pm(
    query: GrayImage,
    ref: ReferenceTuple,
    intrinsics: Intrinsics,
    cfg: EstimationConfig,
    *,
    query_features: FeatureSet | None = None,
) -> PoseEstimate:
    return estimate_direct(CostKind.PHOTOMETRIC, query, ref, intrinsics, cfg.grid)


def estimate_mi(
    query: GrayImage,
    ref: ReferenceTuple,
    intrinsics: Intrinsics,
    cfg: EstimationConfig,
    *,
    query_features: FeatureSet | None = None,
) -> PoseEstimate:
    return estimate_direct(
        CostKind.MUTUAL_INFORMATION, query, ref, intrinsics, cfg.grid
    )


def estimate_hybrid(
    query: GrayImage,
    ref: ReferenceTuple,
    intrinsics: Intrinsics,
    cfg: EstimationConfig,
    *,
    query_features: FeatureSet | None = None,
) -> PoseEstimate:
    """Сначала FB; при его неудаче результат MI с пометкой о переключении."""

    feature_based = estimate_fb(
        query, ref, intrinsics, cfg, query_features=query_features
    )
    if feature_based.succeeded:
        return dataclasses.replace(
            feature_based,
            method=Method.HY,
            diagnostics={**feature_based.diagnostics, "branch": Method.FB.value},
        )

    fallback = estimate_mi(query, ref, intrinsics, cfg)
    reason = feature_based.reason.value if feature_based.reason else None
    logger.info(
        "Гибридный метод переключился на MI",
        context={
            "reference": ref.frame_id,
            "fb_reason": reason,
            "mi_status": fallback.status,
        },
    )
    return dataclasses.replace(
        fallback,
        method=Method.HY,
        match_count=feature_based.match_count,
        diagnostics={
            **fallback.diagnostics,
            "branch": Method.MI.value,
            "fb_reason": reason,
        },
    )


Estimator = Callable[..., PoseEstimate]

ESTIMATORS: dict[Method, Estimator] = {
    Method.FB: estimate_fb,
    Method.PM: estimate_pm,
    Method.MI: estimate_mi,
    Method.HY: estimate_hybrid,
}


def estimate(
    method: Method,
    query: GrayImage,
    ref: ReferenceTuple,
    intrinsics: Intrinsics,
    cfg: EstimationConfig,
    *,
    query_features: FeatureSet | None = None,
) -> PoseEstimate:
    estimator = ESTIMATORS[method]
    return estimator(query, ref, intrinsics, cfg, query_features=query_features)


def query_seeds(seed: int, query_id: int) -> tuple[np.random.Generator, int]:
    """Генератор выбора опорных кадров и seed MLESAC для запроса.

    Не зависят от метода, поэтому все методы видят одни и те же опорные кадры.
    """

    sequence = np.random.SeedSequence([seed, query_id])
    selection, ransac = sequence.spawn(2)
    return np.random.default_rng(selection), int(ransac.generate_state(1)[0])


def _seeded(cfg: EstimationConfig, ransac_seed: int) -> EstimationConfig:
    ransac = dataclasses.replace(cfg.ransac, seed=ransac_seed)
    return dataclasses.replace(cfg, ransac=ransac)


def candidates_within(
    query: Frame, dataset: DatasetIndex, radius: float
) -> list[Frame]:
    """Опорные кадры в круге радиуса r вокруг истинного положения запроса."""

    distances = dataset.distances_from(query)
    candidates = [
        frame
        for frame, distance in zip(dataset.frames, distances, strict=True)
        if distance <= radius and frame.frame_id != query.frame_id
    ]
    if not candidates:
        raise NoReferenceInRadius(
            f"Нет опорных кадров в радиусе {radius} м от запроса {query.frame_id}"
        )
    return candidates


def select_references(
    candidates: Sequence[Frame], k: int, rng: np.random.Generator
) -> list[Frame]:
    """Равномерная выборка без возвращения; при нехватке берутся все кандидаты."""

    order = rng.permutation(len(candidates))[:k]
    if len(order) < k:
        logger.warning(
            "Кандидатов меньше, чем требуется опорных кадров",
            context={"requested": k, "available": len(candidates)},
        )
    return [candidates[i] for i in order]


def _estimate_and_fuse(
    query: GrayImage,
    references: Sequence[Frame],
    intrinsics: Intrinsics,
    method: Method,
    fusion: FusionStrategy,
    cfg: EstimationConfig,
) -> PoseEstimate:
    query_features = detect_and_describe(query, cfg.detector)
    estimates = [
        estimate(
            method,
            query,
            frame.reference(),
            intrinsics,
            cfg,
            query_features=query_features,
        )
        for frame in references
    ]
    if len(estimates) == 1:
        return estimates[0]

    weighted = []
    for frame, single in zip(references, estimates, strict=True):
        weight = single.match_count
        if method in (Method.PM, Method.MI):
            weight = count_matches(
                query, frame.reference(), cfg, query_features=query_features
            )
        weighted.append(WeightedPose(single, float(weight), frame.frame_id))
    return fuse(fusion, weighted, method)


def run_single_reference(
    query: Frame,
    dataset: DatasetIndex,
    radius: float,
    method: Method,
    seed: int,
    cfg: EstimationConfig,
    *,
    query_image: GrayImage | None = None,
) -> ResultRecord:
    """Один случайный опорный кадр из круга радиуса r."""

    rng, ransac_seed = query_seeds(seed, query.frame_id)
    candidates = candidates_within(query, dataset, radius)
    (reference,) = select_references(candidates, 1, rng)
    image = query_image if query_image is not None else query.image
    result = estimate(
        method,
        image,
        reference.reference(),
        dataset.intrinsics,
        _seeded(cfg, ransac_seed),
    )
    return _record(query, result, radius, 1, SINGLE_REFERENCE, [reference])


def run_multi_reference(
    query: Frame,
    dataset: DatasetIndex,
    radius: float,
    method: Method,
    k: int,
    fusion: FusionStrategy,
    seed: int,
    cfg: EstimationConfig,
    *,
    query_image: GrayImage | None = None,
) -> ResultRecord:
    """k опорных кадров из круга радиуса r и слияние оценок выбранной стратегией."""

    rng, ransac_seed = query_seeds(seed, query.frame_id)
    candidates = candidates_within(query, dataset, radius)
    references = select_references(candidates, k, rng)
    image = query_image if query_image is not None else query.image
    result = _estimate_and_fuse(
        image, references, dataset.intrinsics, method, fusion, _seeded(cfg, ransac_seed)
    )
    return _record(query, result, radius, k, fusion.value, references)


def retrieve_references(
    query_image: GrayImage,
    index: InvertedIndex,
    k: int,
    cfg: EstimationConfig,
    allowed: set[int] | None = None,
    exclude: int | None = None,
) -> list[int]:
    """Лучшие k кадров по BoW; кандидаты ограничиваются допустимым множеством."""

    descriptors = detect_and_describe(query_image, cfg.detector).descriptors
    ranking = rank_descriptors(index, descriptors, len(index))
    chosen = [
        doc_id
        for doc_id, _ in ranking
        if doc_id != exclude and (allowed is None or doc_id in allowed)
    ]
    if not chosen:
        raise NoCandidates("Поиск не вернул ни одного допустимого опорного кадра")
    return chosen[:k]


def run_large_uncertainty(
    query: Frame,
    dataset: DatasetIndex,
    index: InvertedIndex,
    radius: float,
    method: Method,
    seed: int,
    cfg: EstimationConfig,
    *,
    k: int = 5,
    fusion: FusionStrategy = FusionStrategy.RWAVG,
    use_prior: bool = True,
    query_image: GrayImage | None = None,
) -> ResultRecord:
    """Фильтр по радиусу (при априорном положении), поиск top-k, оценки, слияние."""

    _, ransac_seed = query_seeds(seed, query.frame_id)
    image = query_image if query_image is not None else query.image
    allowed = None
    if use_prior:
        try:
            allowed = {f.frame_id for f in candidates_within(query, dataset, radius)}
        except NoReferenceInRadius as error:
            raise NoCandidates(str(error)) from error
    known = {frame.frame_id for frame in dataset.frames}
    allowed = known if allowed is None else allowed & known
    chosen = retrieve_references(
        image, index, k, cfg, allowed=allowed, exclude=query.frame_id
    )
    references = [dataset.frame(frame_id) for frame_id in chosen]
    logger.debug(
        "Опорные кадры найдены поиском",
        context={"query": query.frame_id, "references": chosen},
    )
    result = _estimate_and_fuse(
        image, references, dataset.intrinsics, method, fusion, _seeded(cfg, ransac_seed)
    )
    return _record(query, result, radius, k, fusion.value, references)


def _record(
    query: Frame,
    result: PoseEstimate,
    radius: float,
    k: int,
    fusion: str,
    references: Sequence[Frame],
) -> ResultRecord:
    record = make_record(
        query_id=query.frame_id,
        gt=query.pose,
        estimate=result,
        radius=radius,
        reference_count=k,
        fusion=fusion,
        references=[frame.frame_id for frame in references],
    )
    logger.info(
        "Запрос обработан",
        context={
            "query": query.frame_id,
            "method": result.method,
            "status": result.status,
            "reason": record.reason,
            "translation_error": record.translation_error,
            "orientation_error": record.orientation_error,
        },
    )
    return record
