"""Мешок визуальных слов с TF-IDF и инвертированным индексом для опорных кадров."""

from __future__ import annotations

import struct
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.cluster import KMeans

from .errors import EmptyIndex, IndexFormatError, TooFewSamples
from .features import DetectorConfig, detect_and_describe
from .imaging import GrayImage
from .logger import get_logger
from .scene import ReferenceTuple

logger = get_logger(__name__)

INDEX_MAGIC = b"PBOW"
INDEX_VERSION = 1
HEADER = struct.Struct("<4sIIII")
DEFAULT_VOCABULARY_SIZE = 256


@dataclass(slots=True, frozen=True, eq=False)
class Vocabulary:
    """Центры кластеров визуальных слов."""

    centers: np.ndarray

    def __post_init__(self) -> None:
        centers = np.array(self.centers, dtype=np.float64)
        if centers.ndim != 2 or len(centers) < 2:
            raise ValueError("Словарь должен содержать не меньше двух центров")
        if not np.all(np.isfinite(centers)):
            raise ValueError("Центры словаря содержат нечисловые значения")
        centers.setflags(write=False)
        object.__setattr__(self, "centers", centers)

    @property
    def size(self) -> int:
        return int(len(self.centers))

    @property
    def dimension(self) -> int:
        return int(self.centers.shape[1])

    def quantize(self, descriptors: np.ndarray) -> np.ndarray:
        """Номер ближайшего центра; при равенстве меньший номер."""

        descriptors = np.asarray(descriptors, dtype=np.float64)
        descriptors = descriptors.reshape(-1, self.dimension)
        if len(descriptors) == 0:
            return np.zeros(0, dtype=np.int64)
        return np.argmin(cdist(descriptors, self.centers), axis=1).astype(np.int64)


@dataclass(slots=True, frozen=True, eq=False)
class BowVector:
    """Разреженный TF-IDF вектор с единичной нормой (или пустой)."""

    indices: np.ndarray
    values: np.ndarray

    def __len__(self) -> int:
        return int(len(self.indices))


@dataclass(slots=True, frozen=True, eq=False)
class InvertedIndex:
    """Списки вхождений слов: для каждого слова номера документов и веса."""

    vocabulary: Vocabulary
    doc_ids: np.ndarray
    idf: np.ndarray
    document_frequency: np.ndarray
    postings: tuple[tuple[np.ndarray, np.ndarray], ...]

    def __len__(self) -> int:
        return int(len(self.doc_ids))


def build_vocabulary(sample: np.ndarray, size: int, seed: int) -> Vocabulary:
    """k-средних с фиксированным seed; выборка должна быть не меньше словаря."""

    sample = np.asarray(sample, dtype=np.float64)
    if size < 2:
        raise ValueError("Размер словаря должен быть не меньше 2")
    if len(sample) < size:
        raise TooFewSamples(f"Дескрипторов {len(sample)} меньше размера словаря {size}")
    model = KMeans(n_clusters=size, random_state=seed, n_init=1)
    model.fit(sample)
    logger.info(
        "Словарь визуальных слов построен",
        context={
            "size": size,
            "samples": len(sample),
            "inertia": float(model.inertia_),
        },
    )
    return Vocabulary(model.cluster_centers_)


def bow_vector(words: np.ndarray, idf: np.ndarray) -> BowVector:
    """TF (доля слова в документе) умноженная на IDF, затем L2-нормировка."""

    words = np.asarray(words, dtype=np.int64)
    if len(words) == 0:
        return BowVector(np.zeros(0, dtype=np.int64), np.zeros(0))
    indices, counts = np.unique(words, return_counts=True)
    values = counts / len(words) * idf[indices]
    keep = values > 0
    indices, values = indices[keep], values[keep]
    norm = np.linalg.norm(values)
    if norm == 0:
        return BowVector(np.zeros(0, dtype=np.int64), np.zeros(0))
    return BowVector(indices, values / norm)


def index_words(
    documents: Mapping[int, np.ndarray], vocabulary: Vocabulary
) -> InvertedIndex:
    """Строит индекс по уже квантованным словам документов."""

    doc_ids = np.array(sorted(documents), dtype=np.int64)
    size = vocabulary.size
    document_frequency = np.zeros(size, dtype=np.int64)
    for doc_id in doc_ids:
        words = np.unique(np.asarray(documents[int(doc_id)], dtype=np.int64))
        document_frequency[words] += 1
    idf = np.zeros(size)
    present = document_frequency > 0
    idf[present] = np.log(len(doc_ids) / document_frequency[present])

    posting_docs: list[list[int]] = [[] for _ in range(size)]
    posting_weights: list[list[float]] = [[] for _ in range(size)]
    for position, doc_id in enumerate(doc_ids):
        vector = bow_vector(documents[int(doc_id)], idf)
        for word, weight in zip(vector.indices, vector.values, strict=True):
            posting_docs[word].append(position)
            posting_weights[word].append(float(weight))
    postings = tuple(
        (np.array(docs, dtype=np.int64), np.array(weights, dtype=np.float64))
        for docs, weights in zip(posting_docs, posting_weights, strict=True)
    )
    return InvertedIndex(
        vocabulary=vocabulary,
        doc_ids=doc_ids,
        idf=idf,
        document_frequency=document_frequency,
        postings=postings,
    )


def index_references(
    refs: Sequence[ReferenceTuple],
    vocabulary: Vocabulary,
    detector: DetectorConfig | None = None,
) -> InvertedIndex:
    documents = {
        ref.frame_id: vocabulary.quantize(
            detect_and_describe(ref.image, detector).descriptors
        )
        for ref in refs
    }
    index = index_words(documents, vocabulary)
    logger.info(
        "Инвертированный индекс построен",
        context={"documents": len(index), "vocabulary": vocabulary.size},
    )
    return index


def rank_words(
    index: InvertedIndex, words: np.ndarray, k: int
) -> list[tuple[int, float]]:
    """Косинусная близость запроса к документам; порядок (-score, id).

    IDF равен ln(N / df), поэтому слово, встреченное во всех документах,
    получает вес 0. В индексе из одного документа все слова такие, и любой
    запрос получает оценку 0; то же для запроса только из общих слов.
    """

    if len(index) == 0:
        raise EmptyIndex("Поисковый индекс пуст")
    query = bow_vector(words, index.idf)
    scores = np.zeros(len(index))
    for word, weight in zip(query.indices, query.values, strict=True):
        docs, doc_weights = index.postings[word]
        scores[docs] += weight * doc_weights
    scores = np.clip(scores, 0.0, 1.0)
    order = np.lexsort((index.doc_ids, -scores))[: max(k, 0)]
    return [(int(index.doc_ids[i]), float(scores[i])) for i in order]


def rank_descriptors(
    index: InvertedIndex, descriptors: np.ndarray, k: int
) -> list[tuple[int, float]]:
    return rank_words(index, index.vocabulary.quantize(descriptors), k)


def query_top_k(
    index: InvertedIndex,
    query: GrayImage,
    k: int,
    detector: DetectorConfig | None = None,
) -> list[tuple[int, float]]:
    """Лучшие k опорных кадров для изображения запроса."""

    if len(index) == 0:
        raise EmptyIndex("Поисковый индекс пуст")
    return rank_descriptors(index, detect_and_describe(query, detector).descriptors, k)


def save_index(index: InvertedIndex, path: Path) -> Path:
    """Сохраняет индекс в версионированный двоичный файл (little-endian)."""

    vocabulary = index.vocabulary
    chunks = [
        HEADER.pack(
            INDEX_MAGIC,
            INDEX_VERSION,
            vocabulary.size,
            len(index),
            vocabulary.dimension,
        ),
        vocabulary.centers.astype("<f8").tobytes(),
        index.doc_ids.astype("<i8").tobytes(),
        index.idf.astype("<f8").tobytes(),
        index.document_frequency.astype("<i8").tobytes(),
    ]
    for docs, weights in index.postings:
        chunks.append(struct.pack("<I", len(docs)))
        chunks.append(docs.astype("<u4").tobytes())
        chunks.append(weights.astype("<f8").tobytes())
    path = Path(path)
    path.write_bytes(b"".join(chunks))
    logger.info("Индекс сохранён", context={"path": str(path), "documents": len(index)})
    return path


class _Reader:
    def __init__(self, payload: bytes) -> None:
        self.payload = payload
        self.offset = 0

    def take(self, dtype: str, count: int) -> np.ndarray:
        size = np.dtype(dtype).itemsize * count
        if self.offset + size > len(self.payload):
            raise IndexFormatError("Файл индекса обрезан")
        values = np.frombuffer(
            self.payload, dtype=dtype, count=count, offset=self.offset
        )
        self.offset += size
        return values


def load_index(path: Path) -> InvertedIndex:
    payload = Path(path).read_bytes()
    if len(payload) < HEADER.size:
        raise IndexFormatError("Файл индекса короче заголовка")
    magic, version, size, documents, dimension = HEADER.unpack_from(payload)
    if magic != INDEX_MAGIC:
        raise IndexFormatError(f"Неизвестная сигнатура файла индекса: {magic!r}")
    if version != INDEX_VERSION:
        raise IndexFormatError(f"Неподдерживаемая версия индекса: {version}")

    reader = _Reader(payload)
    reader.offset = HEADER.size
    centers = reader.take("<f8", size * dimension).reshape(size, dimension)
    doc_ids = reader.take("<i8", documents).astype(np.int64)
    idf = reader.take("<f8", size).astype(np.float64)
    document_frequency = reader.take("<i8", size).astype(np.int64)
    postings = []
    for _ in range(size):
        (count,) = reader.take("<u4", 1)
        docs = reader.take("<u4", int(count)).astype(np.int64)
        weights = reader.take("<f8", int(count)).astype(np.float64)
        postings.append((docs, weights))
    if reader.offset != len(payload):
        raise IndexFormatError("Лишние данные в конце файла индекса")
    return InvertedIndex(
        vocabulary=Vocabulary(centers),
        doc_ids=doc_ids,
        idf=idf,
        document_frequency=document_frequency,
        postings=tuple(postings),
    )
