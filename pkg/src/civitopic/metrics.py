# ABOUTME: Topic quality metrics (NPMI coherence, diversity, weighted score)
# ABOUTME: and partition agreement metrics (ARI, NMI, contingency tables)
# SPDX-License-Identifier: MIT

import logging
import math
from collections.abc import Sequence
from itertools import combinations
from pathlib import Path
from typing import Any, Literal

import numpy as np
import pandas as pd
from sklearn.metrics import adjusted_rand_score, normalized_mutual_info_score
from sklearn.metrics.cluster import contingency_matrix

from .exceptions import FileSystemError, ParameterError
from .models import OUTLIER_TOPIC, ContingencyTable, ExternalScores, InternalScores, TopicRepresentation
from .topics import ngrams

logger = logging.getLogger(__name__)

TOP_N = 10
COHERENCE_WEIGHT = 0.8
DIVERSITY_WEIGHT = 0.2
EPSILON = 1e-12


def _scored_topics(topics: Sequence[TopicRepresentation]) -> list[TopicRepresentation]:
    scored = [topic for topic in topics if topic.topic_id != OUTLIER_TOPIC]
    if not scored:
        raise ParameterError("No topics to score", field="topics")
    return scored


def npmi(n_i: int, n_j: int, n_ij: int, n_docs: int) -> float:
    """Normalized PMI of two words from document counts.

    Never co-occurring gives -1; appearing in every document together gives 1.
    """
    if n_ij == 0:
        return -1.0
    if n_ij >= n_docs:
        return 1.0
    pmi = math.log(n_ij * n_docs / (n_i * n_j))
    return pmi / max(math.log(n_docs / n_ij), EPSILON)


def coherence_nc(
    topics: Sequence[TopicRepresentation],
    token_lists: Sequence[Sequence[str]],
    top_n: int = TOP_N,
) -> float:
    """Mean pairwise NPMI of each topic's top words, mapped to [0, 1].

    Co-occurrence is counted per document; a word absent from the corpus
    simply never co-occurs. Topics with fewer than two words are skipped.
    """
    scored = _scored_topics(topics)
    if not token_lists:
        raise ParameterError("Coherence needs a non-empty corpus", field="corpus")

    n_docs = len(token_lists)
    max_n = max((len(word.split()) for t in scored for word in t.words[:top_n]), default=1)
    postings: dict[str, set[int]] = {}
    for doc, tokens in enumerate(token_lists):
        for term in set(ngrams(tokens, (1, max_n))):
            postings.setdefault(term, set()).add(doc)
    empty: set[int] = set()

    topic_scores = []
    for topic in scored:
        words = topic.words[:top_n]
        if len(words) < 2:  # noqa: PLR2004
            logger.debug("Skipping topic %d with fewer than two words", topic.topic_id)
            continue
        docs = {word: postings.get(word, empty) for word in words}
        pair_scores = [
            (npmi(len(docs[a]), len(docs[b]), len(docs[a] & docs[b]), n_docs) + 1.0) / 2.0
            for a, b in combinations(words, 2)
        ]
        topic_scores.append(float(np.mean(pair_scores)))

    if not topic_scores:
        raise ParameterError("No topic has two or more words", field="topics")
    return float(np.mean(topic_scores))


def diversity_nd(topics: Sequence[TopicRepresentation], top_n: int = TOP_N) -> float:
    """Share of unique words across all top-``top_n`` lists."""
    scored = _scored_topics(topics)
    unique = {word for topic in scored for word in topic.words[:top_n]}
    return len(unique) / (top_n * len(scored))


def weighted_score(nc: float, nd: float) -> float:
    """``0.8 · nc + 0.2 · nd``.

    >>> round(weighted_score(0.11711, 0.86234), 5)
    0.26615
    """
    for name, value in (("nc", nc), ("nd", nd)):
        if not 0.0 <= value <= 1.0:
            raise ParameterError(f"{name} must lie in [0, 1]", field=name, value=value)
    return COHERENCE_WEIGHT * nc + DIVERSITY_WEIGHT * nd


def internal_scores(
    topics: Sequence[TopicRepresentation],
    token_lists: Sequence[Sequence[str]],
    top_n: int = TOP_N,
) -> InternalScores:
    nc = coherence_nc(topics, token_lists, top_n)
    nd = diversity_nd(topics, top_n)
    return InternalScores(nc=nc, nd=nd, ws=weighted_score(nc, nd))


def _check_pair(a: Sequence[Any], b: Sequence[Any]) -> None:
    if len(a) != len(b):
        raise ParameterError(
            f"Label lists differ in length ({len(a)} vs {len(b)})", field="labels"
        )
    if len(a) < 2:  # noqa: PLR2004
        raise ParameterError("Agreement needs at least two labels", field="labels", value=len(a))


def adjusted_rand_index(a: Sequence[Any], b: Sequence[Any]) -> float:
    _check_pair(a, b)
    return float(adjusted_rand_score(list(a), list(b)))


def normalized_mutual_information(a: Sequence[Any], b: Sequence[Any]) -> float:
    """MI normalized by the arithmetic mean of the two entropies (natural log)."""
    _check_pair(a, b)
    return float(normalized_mutual_info_score(list(a), list(b), average_method="arithmetic"))


def contingency(a: Sequence[Any], b: Sequence[Any]) -> ContingencyTable:
    """Counts of each (a, b) label pair; rows and columns sorted by label."""
    if len(a) != len(b):
        raise ParameterError(
            f"Label lists differ in length ({len(a)} vs {len(b)})", field="labels"
        )
    rows = np.unique(np.asarray(a))
    columns = np.unique(np.asarray(b))
    counts = contingency_matrix(np.asarray(a), np.asarray(b)) if len(a) else np.zeros((0, 0))
    return ContingencyTable(
        row_labels=tuple(str(label) for label in rows),
        column_labels=tuple(str(label) for label in columns),
        counts=np.asarray(counts, dtype=np.int64),
    )


def external_scores(level: str, topics: Sequence[Any], labels: Sequence[Any]) -> ExternalScores:
    return ExternalScores(
        level=level,
        ari=adjusted_rand_index(topics, labels),
        nmi=normalized_mutual_information(topics, labels),
        contingency=contingency(topics, labels),
        n_documents=len(topics),
    )


def write_contingency(
    table: ContingencyTable, path: str | Path, *, normalized: Literal["row", "column"] | None = None
) -> None:
    """CSV with label columns and one row per topic.

    ``normalized="row"`` writes each topic's label shares, ``"column"`` each
    label's topic shares; the default writes raw counts.
    """
    if normalized == "row":
        values = table.row_normalized
    elif normalized == "column":
        values = table.column_normalized
    elif normalized is None:
        values = table.counts
    else:
        raise ParameterError(
            f"Unknown normalization '{normalized}'", field="normalized", value=normalized
        )
    frame = pd.DataFrame(values, index=list(table.row_labels), columns=list(table.column_labels))
    frame.index.name = "topic"
    target = Path(path)
    try:
        frame.to_csv(target, encoding="utf-8", lineterminator="\n")
    except OSError as e:
        raise FileSystemError(f"Failed to write contingency table: {e}", path=str(target)) from e


def scores_to_dict(
    internal: InternalScores | None = None,
    external: Sequence[ExternalScores] = (),
) -> dict[str, Any]:
    """JSON-ready score summary."""
    data: dict[str, Any] = {}
    if internal is not None:
        data["internal"] = {"nc": internal.nc, "nd": internal.nd, "ws": internal.ws}
    for scores in external:
        data[scores.level.lower()] = {
            "ari": scores.ari,
            "nmi": scores.nmi,
            "n_documents": scores.n_documents,
            "excluded": dict(scores.excluded),
        }
    return data
