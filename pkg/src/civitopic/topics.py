# ABOUTME: Term counts, class-based TF-IDF with seed boosting, top words and topic merging
# ABOUTME: Turns cluster assignments into weighted, named topic representations
# SPDX-License-Identifier: MIT

import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import sparse
from sklearn.feature_extraction.text import CountVectorizer

from .config import AUTO, parse_ngram_range, parse_nr_topics
from .corpus import PreprocessConfig, normalize_text, tokenize
from .exceptions import ConfigurationError, EmptyTopicError, FileSystemError, ParameterError
from .models import OUTLIER_TOPIC, ClusterAssignment, Document, TopicRepresentation

logger = logging.getLogger(__name__)

DEFAULT_K_TOP = 10
NAME_WORDS = 4
OUTLIER_NAME = "-1_outliers"
WORD_SEPARATOR = "|"


def ngrams(tokens: Sequence[str], n_gram_range: tuple[int, int]) -> list[str]:
    """Space-joined n-grams of ``tokens`` for every n in the range."""
    lo, hi = n_gram_range
    return [
        " ".join(tokens[start : start + n])
        for n in range(lo, hi + 1)
        for start in range(len(tokens) - n + 1)
    ]


@dataclass(frozen=True, eq=False)
class Vectorizer:
    """Document-term counts over an alphabetically sorted n-gram vocabulary."""

    n_gram_range: tuple[int, int]
    vocabulary: tuple[str, ...]
    counts: sparse.csr_matrix
    doc_ids: tuple[str, ...]

    def transform(self, token_lists: Iterable[Sequence[str]]) -> sparse.csr_matrix:
        """Count n-grams of new documents against the fitted vocabulary."""
        counter = CountVectorizer(
            analyzer=lambda tokens: ngrams(tokens, self.n_gram_range),
            vocabulary={term: column for column, term in enumerate(self.vocabulary)},
        )
        return counter.transform(list(token_lists)).tocsr()


def fit_vectorizer(
    documents: Sequence[Document], n_gram_range: tuple[int, int] = (1, 1)
) -> Vectorizer:
    """Count every n-gram in range over the documents' token lists.

    Raises:
        ParameterError: If there are no documents or no n-grams at all
    """
    n_gram_range = parse_ngram_range(n_gram_range)
    if not documents:
        raise ParameterError("Cannot fit a vectorizer on an empty corpus", field="corpus")

    counter = CountVectorizer(analyzer=lambda tokens: ngrams(tokens, n_gram_range))
    try:
        counts = counter.fit_transform([doc.token_list for doc in documents])
    except ValueError as e:
        msg = f"No n-grams in range {n_gram_range}: {e}"
        raise ParameterError(msg, field="n_gram_range", value=n_gram_range) from e

    vocabulary = tuple(str(term) for term in counter.get_feature_names_out())
    logger.debug("Vectorized %d documents into %d terms", len(documents), len(vocabulary))
    return Vectorizer(
        n_gram_range=n_gram_range,
        vocabulary=vocabulary,
        counts=sparse.csr_matrix(counts, dtype=np.int64),
        doc_ids=tuple(doc.id for doc in documents),
    )


@dataclass(frozen=True)
class SeedBoostConfig:
    """Terms whose c-TF-IDF weight is multiplied by ``seed_multiplier``."""

    seed_words: frozenset[str]
    seed_multiplier: float = 2.0

    def __post_init__(self) -> None:
        if self.seed_multiplier <= 0:
            raise ParameterError(
                "seed_multiplier must be positive",
                field="seed_multiplier",
                value=self.seed_multiplier,
            )


@dataclass(frozen=True, eq=False)
class TopicWeights:
    """Topic-by-term c-TF-IDF matrix; rows follow ``topic_ids``."""

    topic_ids: tuple[int, ...]
    vocabulary: tuple[str, ...]
    weights: np.ndarray

    def row(self, topic_id: int) -> np.ndarray:
        return self.weights[self.topic_ids.index(topic_id)]


def _class_counts(
    vectorizer: Vectorizer, assignment: ClusterAssignment
) -> tuple[list[int], np.ndarray]:
    if assignment.doc_ids != vectorizer.doc_ids:
        raise ConfigurationError(
            "Assignment and vectorizer cover different documents", field="doc_ids"
        )
    topic_ids = sorted(int(t) for t in set(assignment.labels.tolist()) - {OUTLIER_TOPIC})
    row_of = {topic: row for row, topic in enumerate(topic_ids)}
    members = [(row_of[int(label)], doc) for doc, label in enumerate(assignment.labels) if label != OUTLIER_TOPIC]
    indicator = sparse.csr_matrix(
        (
            np.ones(len(members)),
            ([row for row, _ in members], [doc for _, doc in members]),
        ),
        shape=(len(topic_ids), len(assignment)),
    )
    return topic_ids, np.asarray((indicator @ vectorizer.counts).todense(), dtype=np.float64)


def class_tfidf(
    vectorizer: Vectorizer,
    assignment: ClusterAssignment,
    boost: SeedBoostConfig | None = None,
) -> TopicWeights:
    """Class-based TF-IDF: ``tf(t, c) · log(1 + A / f_t)``.

    Each topic's documents are treated as one document. ``A`` is the mean
    term count per topic and ``f_t`` the term's frequency in the whole corpus,
    outliers included. Seed terms are multiplied by ``boost.seed_multiplier``.

    Raises:
        EmptyTopicError: If a topic's documents contain no vocabulary terms
    """
    topic_ids, class_counts = _class_counts(vectorizer, assignment)
    if not topic_ids:
        return TopicWeights((), vectorizer.vocabulary, np.zeros((0, len(vectorizer.vocabulary))))

    totals = class_counts.sum(axis=1)
    empty = np.flatnonzero(totals == 0)
    if empty.size:
        topic = topic_ids[int(empty[0])]
        raise EmptyTopicError(f"Topic {topic} has no terms", topic_id=topic)

    tf = class_counts / totals[:, np.newaxis]
    average_terms = totals.mean()
    frequency = np.asarray(vectorizer.counts.sum(axis=0), dtype=np.float64).ravel()
    idf = np.log(1.0 + average_terms / frequency)
    weights = tf * idf

    if boost is not None:
        seed_columns = [col for col, term in enumerate(vectorizer.vocabulary) if term in boost.seed_words]
        weights[:, seed_columns] *= boost.seed_multiplier
        logger.debug("Boosted %d seed terms by %g", len(seed_columns), boost.seed_multiplier)

    return TopicWeights(tuple(topic_ids), vectorizer.vocabulary, weights)


def _auto_name(topic_id: int, words: Sequence[str]) -> str:
    return f"{topic_id}_" + "_".join(words[:NAME_WORDS])


def top_k_words(
    weights: TopicWeights,
    k_top: int = DEFAULT_K_TOP,
    sizes: Mapping[int, int] | None = None,
) -> list[TopicRepresentation]:
    """Highest-weight terms per topic, ties broken alphabetically.

    Only terms with positive weight are listed, so a topic may have fewer
    than ``k_top`` words.
    """
    if k_top < 1:
        raise ParameterError("k_top must be at least 1", field="k_top", value=k_top)
    sizes = sizes or {}
    representations = []
    for topic_id, row in zip(weights.topic_ids, weights.weights):
        ranked = sorted(
            ((weights.vocabulary[col], float(row[col])) for col in np.flatnonzero(row > 0)),
            key=lambda item: (-item[1], item[0]),
        )[:k_top]
        representations.append(
            TopicRepresentation(
                topic_id=topic_id,
                size=int(sizes.get(topic_id, 0)),
                top_words=tuple(ranked),
                name=_auto_name(topic_id, [term for term, _ in ranked]),
            )
        )
    return representations


def relabel_by_size(assignment: ClusterAssignment) -> ClusterAssignment:
    """Renumber topics 0..K-1 by descending size (ties keep the lower old id)."""
    sizes = {t: n for t, n in assignment.sizes().items() if t != OUTLIER_TOPIC}
    order = sorted(sizes, key=lambda topic: (-sizes[topic], topic))
    mapping = {old: new for new, old in enumerate(order)}
    mapping[OUTLIER_TOPIC] = OUTLIER_TOPIC
    labels = np.array([mapping[int(label)] for label in assignment.labels], dtype=np.int64)
    return ClusterAssignment(assignment.doc_ids, labels, assignment.probabilities)


def _most_similar(weights: TopicWeights, topic_id: int) -> int:
    norms = np.linalg.norm(weights.weights, axis=1)
    norms[norms == 0] = 1.0
    unit = weights.weights / norms[:, np.newaxis]
    similarity = unit @ unit[weights.topic_ids.index(topic_id)]
    best_id, best_similarity = None, -np.inf
    for other, value in zip(weights.topic_ids, similarity):
        if other != topic_id and value > best_similarity:
            best_id, best_similarity = other, value
    assert best_id is not None
    return best_id


def reduce_topics(
    vectorizer: Vectorizer,
    assignment: ClusterAssignment,
    nr_topics: int | str,
    boost: SeedBoostConfig | None = None,
    weights: TopicWeights | None = None,
) -> tuple[ClusterAssignment, TopicWeights]:
    """Merge topics until at most ``nr_topics`` remain.

    The smallest topic (ties: highest id) joins the topic whose c-TF-IDF row
    is most cosine-similar (ties: lowest id); weights are recomputed after
    every merge. ``"auto"`` or a target at or above the current count leaves
    everything unchanged. Outliers are never merged.
    """
    target = parse_nr_topics(nr_topics)
    if weights is None:
        weights = class_tfidf(vectorizer, assignment, boost)
    if target == AUTO or assignment.k <= int(target):
        return assignment, weights

    labels = assignment.labels.copy()
    merges = 0
    while len(weights.topic_ids) > int(target):
        sizes = {t: int(np.sum(labels == t)) for t in weights.topic_ids}
        smallest = min(sizes, key=lambda topic: (sizes[topic], -topic))
        into = _most_similar(weights, smallest)
        labels[labels == smallest] = into
        merges += 1
        current = ClusterAssignment(assignment.doc_ids, labels, assignment.probabilities)
        weights = class_tfidf(vectorizer, current, boost)

    merged = relabel_by_size(ClusterAssignment(assignment.doc_ids, labels, assignment.probabilities))
    logger.info("Reduced %d topics to %d", assignment.k, merged.k)
    return merged, class_tfidf(vectorizer, merged, boost)


def seed_terms(
    seed_lists: Mapping[str, Sequence[str]],
    config: PreprocessConfig,
) -> frozenset[str]:
    """Seed phrases preprocessed like documents: each phrase and its tokens."""
    terms: set[str] = set()
    for phrases in seed_lists.values():
        for phrase in phrases:
            tokens = tokenize(normalize_text(phrase), config)
            if tokens:
                terms.add(" ".join(tokens))
                terms.update(tokens)
    return frozenset(terms)


def build_representations(
    weights: TopicWeights,
    assignment: ClusterAssignment,
    k_top: int = DEFAULT_K_TOP,
) -> list[TopicRepresentation]:
    """Topic representations, preceded by a size-only outlier row when present."""
    sizes = assignment.sizes()
    representations = top_k_words(weights, k_top, sizes)
    if OUTLIER_TOPIC in sizes:
        outliers = TopicRepresentation(OUTLIER_TOPIC, sizes[OUTLIER_TOPIC], name=OUTLIER_NAME)
        representations.insert(0, outliers)
    return representations


def write_topic_table(representations: Sequence[TopicRepresentation], path: str | Path) -> None:
    """Write ``topic,size,name,top_words`` (+ ``llm_label`` once topics are named)."""
    frame = pd.DataFrame(
        {
            "topic": [r.topic_id for r in representations],
            "size": [r.size for r in representations],
            "name": [r.name for r in representations],
            "top_words": [WORD_SEPARATOR.join(r.words) for r in representations],
        }
    )
    if any(r.llm_label for r in representations):
        frame["llm_label"] = [r.llm_label or "" for r in representations]
    target = Path(path)
    try:
        frame.to_csv(target, index=False, encoding="utf-8", lineterminator="\n")
    except OSError as e:
        raise FileSystemError(f"Failed to write topic table: {e}", path=str(target)) from e
