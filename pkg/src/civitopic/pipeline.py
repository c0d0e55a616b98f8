# ABOUTME: Fit/transform runs composing guidance, reduction, clustering and topics
# ABOUTME: Persists fitted models as bundle directories and assigns unseen documents
# SPDX-License-Identifier: MIT

import logging
from collections.abc import Iterator, Mapping, Sequence
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from . import __version__
from .clustering import ClusterParams, HdbscanClusterer, read_assignment, write_assignment
from .config import PipelineConfig
from .corpus import PreprocessConfig
from .embeddings import guide_with_seeds
from .exceptions import (
    ConfigurationError,
    FileSystemError,
    FormatError,
    ParameterError,
    StageError,
)
from .models import (
    NO_MATCH,
    OUTLIER_TOPIC,
    ClusterAssignment,
    Corpus,
    Document,
    EmbeddingMatrix,
    LabelResult,
    SeedTopic,
    TopicRepresentation,
)
from .reduction import ReducerModel, fit_reducer, load_reducer
from .storage import ensure_directory, read_json, write_json
from .taxonomy import Taxonomy
from .topics import (
    SeedBoostConfig,
    TopicWeights,
    Vectorizer,
    build_representations,
    class_tfidf,
    fit_vectorizer,
    reduce_topics,
    relabel_by_size,
    seed_terms,
    write_topic_table,
)

logger = logging.getLogger(__name__)

BUNDLE_FILES = (
    "config.json",
    "reducer.json",
    "clusters.csv",
    "vocabulary.txt",
    "weights.bin",
    "weights.json",
    "topics.csv",
    "profiles.json",
    "reduced.bin",
)


@dataclass(frozen=True, eq=False)
class ClusterProfiles:
    """What test-time assignment needs from the fitted clusters.

    ``thresholds`` hold each cluster's largest member core distance; the
    training points keep their reduced coordinates, core distances, labels
    and probabilities.
    """

    topic_ids: tuple[int, ...]
    centroids: np.ndarray
    thresholds: np.ndarray
    train_points: np.ndarray
    train_core: np.ndarray
    train_labels: np.ndarray
    train_probabilities: np.ndarray

    @classmethod
    def build(
        cls, points: np.ndarray, core: np.ndarray, assignment: ClusterAssignment
    ) -> "ClusterProfiles":
        labels = assignment.labels
        topic_ids = tuple(sorted(int(t) for t in set(labels.tolist()) - {OUTLIER_TOPIC}))
        dim = points.shape[1]
        centroids = np.zeros((len(topic_ids), dim))
        thresholds = np.zeros(len(topic_ids))
        for row, topic in enumerate(topic_ids):
            members = labels == topic
            centroids[row] = points[members].mean(axis=0)
            thresholds[row] = core[members].max()
        return cls(
            topic_ids, centroids, thresholds, points, core, labels, assignment.probabilities
        )


@dataclass(frozen=True, eq=False)
class FittedModel:
    """Every sub-model of one fit, plus the settings that produced it.

    ``vectorizer`` is None for models loaded from a bundle, which keeps only
    the vocabulary.
    """

    config: PipelineConfig
    provider_tag: str
    reducer: ReducerModel
    cluster_params: ClusterParams
    vectorizer: Vectorizer | None
    vocabulary: tuple[str, ...]
    weights: TopicWeights
    representations: tuple[TopicRepresentation, ...]
    profiles: ClusterProfiles
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def topic_ids(self) -> tuple[int, ...]:
        return self.weights.topic_ids


@contextmanager
def _stage(name: str) -> Iterator[None]:
    logger.info("Stage: %s", name)
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        raise StageError(str(e), stage=name) from e


def _documents(corpus: Corpus | Sequence[Document]) -> list[Document]:
    return list(corpus.documents if isinstance(corpus, Corpus) else corpus)


def _check_mode(
    config: PipelineConfig, taxonomy: Taxonomy | None, seed_topics: Sequence[SeedTopic] | None
) -> None:
    if not config.semisupervised:
        return
    if taxonomy is None:
        raise ConfigurationError("Semisupervised mode requires a taxonomy", field="taxonomy")
    if not seed_topics and config.blend_threshold <= 1.0:
        raise ConfigurationError(
            "Semisupervised mode needs seed topics unless blend_threshold > 1",
            field="seed_topics",
        )


def fit(
    corpus_train: Corpus | Sequence[Document],
    embeddings_train: EmbeddingMatrix,
    config: PipelineConfig,
    taxonomy: Taxonomy | None = None,
    *,
    seed_topics: Sequence[SeedTopic] | None = None,
    preprocess_config: PreprocessConfig | None = None,
) -> tuple[FittedModel, ClusterAssignment]:
    """Fit the topic pipeline on preprocessed training documents.

    Semisupervised mode pulls document vectors toward ``seed_topics`` before
    reduction and boosts taxonomy seed terms in c-TF-IDF. Unsupervised mode
    ignores ``taxonomy`` and ``seed_topics``.

    Raises:
        ConfigurationError: If semisupervised mode lacks a taxonomy or seeds
        StageError: Wrapping any error raised inside a stage
    """
    _check_mode(config, taxonomy, seed_topics)
    documents = _documents(corpus_train)

    with _stage("align"):
        if not documents:
            raise ParameterError("Training corpus is empty", field="corpus")
        matrix = embeddings_train.align([doc.id for doc in documents])

    if config.semisupervised:
        with _stage("guide"):
            matrix = guide_with_seeds(matrix, list(seed_topics or []), config.blend_threshold)

    with _stage("reduce"):
        reducer = fit_reducer(matrix, config.target_dim)
        reduced = reducer.transform(matrix)

    params = ClusterParams(config.min_topic_size, config.min_samples)
    with _stage("cluster"):
        clusterer = HdbscanClusterer(params.min_cluster_size, params.min_samples).fit(reduced.vectors)
        assignment = relabel_by_size(
            ClusterAssignment(reduced.doc_ids, clusterer.labels_, clusterer.probabilities_)  # type: ignore[arg-type]
        )
        logger.info("Clustering found %d topics", assignment.k)

    with _stage("vectorize"):
        vectorizer = fit_vectorizer(documents, config.n_gram_range)

    boost = None
    with _stage("ctfidf"):
        if config.semisupervised:
            assert taxonomy is not None
            terms = seed_terms(taxonomy.seed_lists(), preprocess_config or PreprocessConfig())
            boost = SeedBoostConfig(terms, config.seed_multiplier)
        weights = class_tfidf(vectorizer, assignment, boost)

    with _stage("reduce_topics"):
        assignment, weights = reduce_topics(vectorizer, assignment, config.nr_topics, boost, weights)

    with _stage("represent"):
        representations = build_representations(weights, assignment, config.k_top)
        profiles = ClusterProfiles.build(
            reduced.vectors, clusterer.core_distances_, assignment  # type: ignore[arg-type]
        )

    model = FittedModel(
        config=config,
        provider_tag=embeddings_train.provider_tag,
        reducer=reducer,
        cluster_params=params,
        vectorizer=vectorizer,
        vocabulary=vectorizer.vocabulary,
        weights=weights,
        representations=tuple(representations),
        profiles=profiles,
    )
    logger.info("Fitted %s model: %d topics on %d documents", config.mode.value, assignment.k, len(documents))
    return model, assignment


def _assign_point(point: np.ndarray, profiles: ClusterProfiles, tree: cKDTree) -> tuple[int, float]:
    distance, nearest = tree.query(point, k=1)
    if distance <= profiles.train_core[nearest]:
        return int(profiles.train_labels[nearest]), float(profiles.train_probabilities[nearest])
    if not profiles.topic_ids:
        return OUTLIER_TOPIC, 0.0

    to_centroids = np.linalg.norm(profiles.centroids - point, axis=1)
    row = int(np.argmin(to_centroids))
    threshold = profiles.thresholds[row]
    if to_centroids[row] > threshold:
        return OUTLIER_TOPIC, 0.0
    probability = 1.0 - to_centroids[row] / threshold if threshold > 0 else 1.0
    return profiles.topic_ids[row], float(probability)


def transform(
    model: FittedModel,
    corpus_test: Corpus | Sequence[Document],
    embeddings_test: EmbeddingMatrix | None,
) -> ClusterAssignment:
    """Assign unseen documents to fitted topics.

    A document within the core distance of its nearest training document
    shares that document's topic. Otherwise it joins the nearest cluster
    centroid, or -1 when farther than that cluster's largest member core
    distance. Seed guidance is never applied here.

    Raises:
        ParameterError: If the embedding dimension differs from the fit
        ConfigurationError: If the embeddings come from another provider
    """
    documents = _documents(corpus_test)
    if not documents:
        return ClusterAssignment((), np.zeros(0, dtype=np.int64), np.zeros(0))
    if embeddings_test is None:
        raise ConfigurationError("Test documents need embeddings", field="embeddings")
    if embeddings_test.provider_tag != model.provider_tag:
        raise ConfigurationError(
            f"Model was fitted on '{model.provider_tag}' embeddings, got '{embeddings_test.provider_tag}'",
            field="provider_tag",
        )

    matrix = embeddings_test.align([doc.id for doc in documents])
    reduced = model.reducer.transform(matrix)
    tree = cKDTree(model.profiles.train_points)
    results = [_assign_point(point, model.profiles, tree) for point in reduced.vectors]
    labels = np.array([label for label, _ in results], dtype=np.int64)
    probabilities = np.array([prob for _, prob in results])
    logger.info(
        "Assigned %d documents, %d outliers", len(documents), int(np.sum(labels == OUTLIER_TOPIC))
    )
    return ClusterAssignment(reduced.doc_ids, labels, probabilities)


def document_info(
    documents: Corpus | Sequence[Document],
    assignment: ClusterAssignment,
    labels: Mapping[str, LabelResult] | None = None,
) -> pd.DataFrame:
    """Per-document table: doc_id, clean_text, topic, probability, n1, n2."""
    by_id = {doc.id: doc for doc in _documents(documents)}
    labels = labels or {}
    rows = []
    for doc_id, topic, probability in zip(assignment.doc_ids, assignment.labels, assignment.probabilities):
        doc = by_id.get(doc_id)
        label = labels.get(doc_id)
        rows.append(
            {
                "doc_id": doc_id,
                "clean_text": doc.clean_text if doc else "",
                "topic": int(topic),
                "probability": float(probability),
                "n1": label.n1 if label else NO_MATCH,
                "n2": label.n2 if label else NO_MATCH,
            }
        )
    columns = ["doc_id", "clean_text", "topic", "probability", "n1", "n2"]
    return pd.DataFrame(rows, columns=columns)


def _write_array(path: Path, array: np.ndarray, dtype: str) -> None:
    try:
        np.ascontiguousarray(array, dtype=dtype).tofile(path)
    except OSError as e:
        raise FileSystemError(f"Failed to write array: {e}", path=str(path)) from e


def _read_array(path: Path, dtype: str, shape: tuple[int, int]) -> np.ndarray:
    try:
        flat = np.fromfile(path, dtype=dtype)
    except OSError as e:
        raise FileSystemError(f"Cannot read array: {e}", path=str(path)) from e
    if flat.size != shape[0] * shape[1]:
        raise FormatError(f"{path.name} does not hold a {shape[0]}x{shape[1]} array", field="bundle")
    return flat.reshape(shape).astype(np.float64)


def save_bundle(model: FittedModel, assignment: ClusterAssignment, out_dir: str | Path) -> Path:
    """Write the model bundle; identical fits give byte-identical files."""
    directory = ensure_directory(out_dir)
    snapshot = model.config.snapshot()

    write_json(
        directory / "config.json",
        {
            "config": snapshot,
            "provider_tag": model.provider_tag,
            "input_dim": model.reducer.input_dim,
            "civitopic_version": __version__,
        },
    )
    write_json(directory / "reducer.json", {**model.reducer.to_dict(), "config": snapshot})
    write_assignment(assignment, directory / "clusters.csv")
    try:
        (directory / "vocabulary.txt").write_text(
            "".join(f"{term}\n" for term in model.vocabulary), encoding="utf-8"
        )
    except OSError as e:
        raise FileSystemError(f"Failed to write vocabulary: {e}", path=str(directory)) from e

    _write_array(directory / "weights.bin", model.weights.weights, "<f4")
    write_json(
        directory / "weights.json",
        {
            "n": len(model.weights.topic_ids),
            "d": len(model.vocabulary),
            "topic_ids": list(model.weights.topic_ids),
            "dtype": "<f4",
            "config": snapshot,
        },
    )
    write_topic_table(model.representations, directory / "topics.csv")

    profiles = model.profiles
    write_json(
        directory / "profiles.json",
        {
            "topic_ids": list(profiles.topic_ids),
            "centroids": profiles.centroids.tolist(),
            "thresholds": profiles.thresholds.tolist(),
            "train_core": profiles.train_core.tolist(),
            "train_labels": profiles.train_labels.tolist(),
            "train_probabilities": profiles.train_probabilities.tolist(),
            "n_points": int(profiles.train_points.shape[0]),
            "dim": int(profiles.train_points.shape[1]),
            "config": snapshot,
        },
    )
    _write_array(directory / "reduced.bin", profiles.train_points, "<f8")
    logger.info("Saved model bundle to %s", directory)
    return directory


def _read_topic_words(path: Path, weights: TopicWeights, k_top: int) -> list[TopicRepresentation]:
    try:
        frame = pd.read_csv(path, dtype={"top_words": str, "name": str}, keep_default_na=False)
    except OSError as e:
        raise FileSystemError(f"Cannot read topic table: {e}", path=str(path)) from e
    column_of = {term: col for col, term in enumerate(weights.vocabulary)}
    representations = []
    for row in frame.to_dict(orient="records"):
        topic_id = int(row["topic"])
        words = [w for w in str(row["top_words"]).split("|") if w][:k_top]
        top_words: tuple[tuple[str, float], ...] = ()
        if topic_id in weights.topic_ids:
            values = weights.row(topic_id)
            top_words = tuple((w, float(values[column_of[w]])) for w in words if w in column_of)
        representations.append(
            TopicRepresentation(
                topic_id=topic_id,
                size=int(row["size"]),
                top_words=top_words,
                name=str(row["name"]),
                llm_label=str(row.get("llm_label") or "") or None,
            )
        )
    return representations


def load_bundle(bundle_dir: str | Path) -> tuple[FittedModel, ClusterAssignment]:
    """Read a bundle written by :func:`save_bundle`."""
    directory = Path(bundle_dir)
    missing = [name for name in BUNDLE_FILES if not (directory / name).is_file()]
    if missing:
        raise FormatError(
            f"Bundle is missing {', '.join(missing)}",
            field="bundle",
            details={"path": str(directory)},
        )

    meta = read_json(directory / "config.json")
    config = PipelineConfig.from_dict(meta["config"])
    reducer = load_reducer(directory / "reducer.json")
    assignment = read_assignment(directory / "clusters.csv")
    vocabulary = tuple(
        (directory / "vocabulary.txt").read_text(encoding="utf-8").splitlines()
    )

    weights_meta = read_json(directory / "weights.json")
    shape = (int(weights_meta["n"]), int(weights_meta["d"]))
    weights = TopicWeights(
        tuple(int(t) for t in weights_meta["topic_ids"]),
        vocabulary,
        _read_array(directory / "weights.bin", "<f4", shape),
    )

    stored = read_json(directory / "profiles.json")
    train_points = _read_array(
        directory / "reduced.bin", "<f8", (int(stored["n_points"]), int(stored["dim"]))
    )
    profiles = ClusterProfiles(
        topic_ids=tuple(int(t) for t in stored["topic_ids"]),
        centroids=np.asarray(stored["centroids"], dtype=np.float64).reshape(-1, train_points.shape[1]),
        thresholds=np.asarray(stored["thresholds"], dtype=np.float64),
        train_points=train_points,
        train_core=np.asarray(stored["train_core"], dtype=np.float64),
        train_labels=np.asarray(stored["train_labels"], dtype=np.int64),
        train_probabilities=np.asarray(stored["train_probabilities"], dtype=np.float64),
    )

    model = FittedModel(
        config=config,
        provider_tag=str(meta["provider_tag"]),
        reducer=reducer,
        cluster_params=ClusterParams(config.min_topic_size, config.min_samples),
        vectorizer=None,
        vocabulary=vocabulary,
        weights=weights,
        representations=tuple(_read_topic_words(directory / "topics.csv", weights, config.k_top)),
        profiles=profiles,
        metadata={"civitopic_version": meta.get("civitopic_version")},
    )
    logger.info("Loaded model bundle from %s", directory)
    return model, assignment
