# ABOUTME: Shared data models for corpora, vectors, assignments and labels
# ABOUTME: Defines the dataclasses passed between pipeline stages
# SPDX-License-Identifier: MIT

"""Shared data models for the topic-modeling engine.

This module defines the core data structures used throughout civitopic to
avoid circular import dependencies between the stage modules.
"""

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .exceptions import ConfigurationError, DataError, FormatError

NO_MATCH = "no_match"
OUTLIER_TOPIC = -1
MIN_EMBEDDING_DIM = 2


class Split(Enum):
    """Partition a document belongs to."""

    TRAIN = "train"
    TEST = "test"
    UNASSIGNED = "unassigned"


@dataclass(frozen=True)
class Document:
    """A single citizen proposal and its preprocessing artifacts."""

    id: str
    raw_text: str
    process: str = ""
    declared_category: str | None = None
    clean_text: str = ""
    token_list: tuple[str, ...] = ()
    split: Split = Split.UNASSIGNED


@dataclass(frozen=True)
class Corpus:
    """Ordered collection of documents with the split that produced it."""

    documents: tuple[Document, ...] = ()
    split_seed: int | None = None
    train_fraction: float | None = None

    def __len__(self) -> int:
        return len(self.documents)

    @property
    def ids(self) -> list[str]:
        return [doc.id for doc in self.documents]

    def train(self) -> "Corpus":
        """Return the training documents as their own corpus."""
        return self._only(Split.TRAIN)

    def test(self) -> "Corpus":
        """Return the test documents as their own corpus."""
        return self._only(Split.TEST)

    def with_documents(self, documents: Iterable[Document]) -> "Corpus":
        return replace(self, documents=tuple(documents))

    def _only(self, split: Split) -> "Corpus":
        return self.with_documents(doc for doc in self.documents if doc.split == split)


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """Dense document vectors tagged with the provider that produced them."""

    vectors: np.ndarray
    doc_ids: tuple[str, ...]
    provider_tag: str

    def __post_init__(self) -> None:
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2:  # noqa: PLR2004
            raise FormatError(
                "Embedding matrix must be two-dimensional",
                field="vectors",
                value=vectors.shape,
            )
        if vectors.shape[0] != len(self.doc_ids):
            raise FormatError(
                f"Matrix has {vectors.shape[0]} rows but {len(self.doc_ids)} ids",
                field="doc_ids",
            )
        if vectors.shape[1] < MIN_EMBEDDING_DIM:
            raise FormatError(
                f"Embedding dimension must be at least {MIN_EMBEDDING_DIM}",
                field="dimension",
                value=vectors.shape[1],
            )
        if not np.isfinite(vectors).all():
            bad_row = int(np.argwhere(~np.isfinite(vectors))[0][0])
            raise DataError(
                f"Embedding row {bad_row} contains NaN or Inf",
                field="vectors",
                details={"row": bad_row},
            )
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "doc_ids", tuple(self.doc_ids))

    def __len__(self) -> int:
        return len(self.doc_ids)

    @property
    def dimension(self) -> int:
        return int(self.vectors.shape[1])

    def align(self, ids: Sequence[str]) -> "EmbeddingMatrix":
        """Return the rows for ``ids`` in that order."""
        index = {doc_id: row for row, doc_id in enumerate(self.doc_ids)}
        missing = [doc_id for doc_id in ids if doc_id not in index]
        if missing:
            raise ConfigurationError(
                f"{len(missing)} document ids have no embedding",
                field="doc_ids",
                details={"missing": missing[:10]},
            )
        rows = [index[doc_id] for doc_id in ids]
        return EmbeddingMatrix(self.vectors[rows], tuple(ids), self.provider_tag)

    def with_vectors(self, vectors: np.ndarray) -> "EmbeddingMatrix":
        return EmbeddingMatrix(vectors, self.doc_ids, self.provider_tag)


@dataclass(frozen=True, eq=False)
class SeedTopic:
    """A taxonomy category with its seed words and their mean embedding."""

    label: str
    seed_words: tuple[str, ...]
    seed_embedding: np.ndarray
    provider_tag: str


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    """Topic label and membership confidence for each document."""

    doc_ids: tuple[str, ...]
    labels: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "doc_ids", tuple(self.doc_ids))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        object.__setattr__(
            self, "probabilities", np.asarray(self.probabilities, dtype=np.float64)
        )

    def __len__(self) -> int:
        return len(self.doc_ids)

    @property
    def k(self) -> int:
        """Number of non-outlier clusters."""
        return len({int(label) for label in self.labels if label != OUTLIER_TOPIC})

    def sizes(self) -> dict[int, int]:
        values, counts = np.unique(self.labels, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}


@dataclass(frozen=True)
class TopicRepresentation:
    """Top words and naming for one topic."""

    topic_id: int
    size: int
    top_words: tuple[tuple[str, float], ...] = ()
    name: str = ""
    llm_label: str | None = None

    @property
    def words(self) -> list[str]:
        return [term for term, _ in self.top_words]


@dataclass(frozen=True)
class LabelResult:
    """Validated taxonomy labels for one document."""

    doc_id: str
    n1: str = NO_MATCH
    n2: str = NO_MATCH
    raw_response: str = ""


@dataclass(frozen=True)
class InternalScores:
    """Coherence, diversity and their weighted combination."""

    nc: float
    nd: float
    ws: float


@dataclass(frozen=True, eq=False)
class ContingencyTable:
    """Topic-by-label counts with heatmap-ready normalizations."""

    row_labels: tuple[str, ...]
    column_labels: tuple[str, ...]
    counts: np.ndarray

    @property
    def row_normalized(self) -> np.ndarray:
        """Each row divided by its total (share of a topic per label)."""
        totals = self.counts.sum(axis=1, keepdims=True)
        return self.counts / np.where(totals == 0, 1, totals)

    @property
    def column_normalized(self) -> np.ndarray:
        """Each column divided by its total (share of a label per topic)."""
        totals = self.counts.sum(axis=0, keepdims=True)
        return self.counts / np.where(totals == 0, 1, totals)


@dataclass(frozen=True, eq=False)
class ExternalScores:
    """Agreement between topics and one taxonomy level."""

    level: str
    ari: float
    nmi: float
    contingency: ContingencyTable
    n_documents: int
    excluded: dict[str, int] = field(default_factory=dict)
