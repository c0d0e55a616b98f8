# ABOUTME: Embedding matrix file formats, HTTP embedding client and seed guidance
# ABOUTME: Loads/saves vectors, fetches them from a service with caching, blends with seeds
# SPDX-License-Identifier: MIT

import logging
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path

import numpy as np
from tqdm import tqdm

from .config import EmbeddingServiceConfig, default_cache_dir
from .exceptions import (
    ConfigurationError,
    FileSystemError,
    FormatError,
    ProtocolError,
    UndefinedSimilarityError,
)
from .models import EmbeddingMatrix, SeedTopic
from .storage import VectorCache, content_hash, read_json, write_json
from .transport import post_json

logger = logging.getLogger(__name__)

TEXT_MAGIC = "civemb"
TEXT_VERSION = "v1"
BINARY_SUFFIX = ".bin"
BINARY_DTYPE = "<f4"


def sidecar_path(path: str | Path) -> Path:
    """JSON sidecar next to a binary vector block (``emb.bin`` → ``emb.json``)."""
    return Path(path).with_suffix(".json")


def _parse_header(line: str, source: Path) -> tuple[int, int, str]:
    parts = line.split(maxsplit=4)
    if len(parts) != 5 or parts[0] != TEXT_MAGIC or parts[1] != TEXT_VERSION:  # noqa: PLR2004
        raise FormatError(
            f"Expected header '{TEXT_MAGIC} {TEXT_VERSION} <N> <D> <provider_tag>'",
            field="header",
            details={"path": str(source)},
        )
    try:
        return int(parts[2]), int(parts[3]), parts[4].strip()
    except ValueError as e:
        msg = "Header N and D must be integers"
        raise FormatError(msg, field="header", details={"path": str(source)}) from e


def _load_text(source: Path) -> EmbeddingMatrix:
    try:
        lines = source.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise FileSystemError(f"Cannot read embedding file: {e}", path=str(source)) from e
    lines = [line for line in lines if line.strip()]
    if not lines:
        raise FormatError("Embedding file is empty", field="embeddings", details={"path": str(source)})

    n_rows, dim, provider_tag = _parse_header(lines[0], source)
    body = lines[1:]
    if len(body) != n_rows:
        raise FormatError(
            f"Header declares {n_rows} rows but file has {len(body)}",
            field="rows",
            details={"path": str(source)},
        )

    ids: list[str] = []
    vectors = np.empty((n_rows, dim), dtype=np.float64)
    for row, line in enumerate(body):
        doc_id, sep, values = line.partition("\t")
        if not sep:
            raise FormatError(f"Row {row} has no tab separator", field="row", value=row)
        try:
            parsed = np.array(values.split(","), dtype=np.float64)
        except ValueError as e:
            raise FormatError(f"Row {row} has a non-numeric entry", field="row", value=row) from e
        if parsed.shape[0] != dim:
            raise FormatError(
                f"Row {row} has {parsed.shape[0]} values, expected {dim}",
                field="row",
                value=row,
            )
        ids.append(doc_id)
        vectors[row] = parsed
    return EmbeddingMatrix(vectors, tuple(ids), provider_tag)


def _load_binary(source: Path) -> EmbeddingMatrix:
    meta = read_json(sidecar_path(source))
    try:
        n_rows, dim = int(meta["n"]), int(meta["d"])
        ids, provider_tag = list(meta["ids"]), str(meta["provider_tag"])
    except (KeyError, TypeError, ValueError) as e:
        msg = "Sidecar must define n, d, ids and provider_tag"
        raise FormatError(msg, field="sidecar", details={"path": str(source)}) from e
    try:
        flat = np.fromfile(source, dtype=BINARY_DTYPE)
    except OSError as e:
        raise FileSystemError(f"Cannot read embedding file: {e}", path=str(source)) from e
    if flat.size == 0:
        raise FormatError("Embedding file is empty", field="embeddings", details={"path": str(source)})
    if flat.size != n_rows * dim:
        raise FormatError(
            f"Binary block has {flat.size} values, sidecar declares {n_rows}x{dim}",
            field="embeddings",
            details={"path": str(source)},
        )
    return EmbeddingMatrix(flat.reshape(n_rows, dim).astype(np.float64), tuple(ids), provider_tag)


def load_embeddings(path: str | Path) -> EmbeddingMatrix:
    """Load a ``.bin`` block with its JSON sidecar, or the ``civemb v1`` text format.

    Raises:
        FormatError: On a bad header, empty file, or a row of the wrong length
        DataError: If any entry is NaN or infinite
    """
    source = Path(path)
    if not source.is_file():
        raise FileSystemError("Embedding file not found", path=str(source))
    matrix = _load_binary(source) if source.suffix == BINARY_SUFFIX else _load_text(source)
    logger.info(
        "Loaded %dx%d embeddings (%s) from %s",
        len(matrix),
        matrix.dimension,
        matrix.provider_tag,
        source,
    )
    return matrix


def save_embeddings(matrix: EmbeddingMatrix, path: str | Path) -> None:
    """Write ``matrix`` in the format implied by the file suffix."""
    target = Path(path)
    try:
        if target.suffix == BINARY_SUFFIX:
            matrix.vectors.astype(BINARY_DTYPE).tofile(target)
            write_json(
                sidecar_path(target),
                {
                    "n": len(matrix),
                    "d": matrix.dimension,
                    "ids": list(matrix.doc_ids),
                    "provider_tag": matrix.provider_tag,
                },
            )
            return
        lines = [f"{TEXT_MAGIC} {TEXT_VERSION} {len(matrix)} {matrix.dimension} {matrix.provider_tag}"]
        for doc_id, row in zip(matrix.doc_ids, matrix.vectors):
            lines.append(doc_id + "\t" + ",".join(repr(float(x)) for x in row))
        target.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise FileSystemError(f"Failed to write embeddings: {e}", path=str(target)) from e


def _embed_batch(texts: list[str], config: EmbeddingServiceConfig) -> list[np.ndarray]:
    body = post_json(
        config.endpoint,
        {"model": config.model_name, "input": texts},
        timeout=config.timeout,
        retries=config.retries,
        retry_delay=config.retry_delay,
    )
    vectors = body.get("vectors")
    if not isinstance(vectors, list):
        raise ProtocolError("Response has no 'vectors' list", details={"url": config.endpoint})
    if len(vectors) != len(texts):
        raise ProtocolError(
            f"Service returned {len(vectors)} vectors for {len(texts)} texts",
            details={"url": config.endpoint},
        )
    try:
        return [np.asarray(vector, dtype=np.float32) for vector in vectors]
    except (TypeError, ValueError) as e:
        msg = "Response vectors are not numeric"
        raise ProtocolError(msg, details={"url": config.endpoint}) from e


def fetch_embeddings(
    texts: Sequence[str],
    config: EmbeddingServiceConfig,
    *,
    doc_ids: Sequence[str] | None = None,
    cache_dir: str | Path | None = None,
    show_progress: bool = False,
) -> EmbeddingMatrix:
    """Embed ``texts`` through the HTTP service, reusing cached vectors.

    Vectors are cached per (model, text) content hash, so a repeated call with
    the same inputs makes no requests. Batches run concurrently, bounded by
    ``config.max_in_flight``.

    Raises:
        NetworkError: If the service stays unreachable after retries
        ProtocolError: If a response does not carry one vector per text
    """
    if not texts:
        raise ConfigurationError("No texts to embed", field="texts")
    ids = tuple(doc_ids) if doc_ids is not None else tuple(str(i) for i in range(len(texts)))
    if len(ids) != len(texts):
        raise ConfigurationError("doc_ids and texts differ in length", field="doc_ids")

    cache = VectorCache(Path(cache_dir or config.cache_dir or default_cache_dir()) / "vectors")
    keys = [content_hash(config.model_name, text) for text in texts]
    resolved: dict[str, np.ndarray] = {}
    for key in keys:
        if key not in resolved and (cached := cache.get(key)) is not None:
            resolved[key] = cached

    pending: dict[str, str] = {}
    for key, text in zip(keys, texts):
        if key not in resolved:
            pending.setdefault(key, text)
    logger.debug("%d of %d texts served from cache", len(texts) - len(pending), len(texts))

    pending_keys = list(pending)
    batches = [
        pending_keys[start : start + config.batch_size]
        for start in range(0, len(pending_keys), config.batch_size)
    ]
    if batches:
        with ThreadPoolExecutor(max_workers=config.max_in_flight) as pool:
            futures = {
                pool.submit(_embed_batch, [pending[key] for key in batch], config): batch
                for batch in batches
            }
            progress = tqdm(
                as_completed(futures),
                total=len(futures),
                desc="Embedding",
                unit="batch",
                disable=not show_progress,
            )
            for future in progress:
                for key, vector in zip(futures[future], future.result()):
                    cache.put(key, vector)
                    resolved[key] = vector
    dims = {resolved[key].shape[-1] for key in keys}
    if len(dims) != 1:
        raise ProtocolError(f"Service returned vectors of differing lengths {sorted(dims)}")
    vectors = np.stack([resolved[key].astype(np.float32) for key in keys]).astype(np.float64)
    return EmbeddingMatrix(vectors, ids, config.model_name)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two vectors.

    Raises:
        UndefinedSimilarityError: If either vector is all zeros
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    norm_a, norm_b = np.linalg.norm(a), np.linalg.norm(b)
    if norm_a == 0 or norm_b == 0:
        raise UndefinedSimilarityError("Cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (norm_a * norm_b), -1.0, 1.0))


def _unit_rows(matrix: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    zero_rows = np.flatnonzero(norms[:, 0] == 0)
    if zero_rows.size:
        raise UndefinedSimilarityError(
            f"{what} row {int(zero_rows[0])} is a zero vector",
            field=what,
            value=int(zero_rows[0]),
        )
    return matrix / norms


def guide_with_seeds(
    matrix: EmbeddingMatrix,
    seeds: Sequence[SeedTopic],
    blend_threshold: float = 0.0,
) -> EmbeddingMatrix:
    """Pull each document vector halfway toward its most similar seed.

    A document whose best cosine similarity is below ``blend_threshold`` keeps
    its vector; a threshold above 1 therefore leaves the matrix untouched.

    Raises:
        ConfigurationError: If a seed came from a different provider or dimension
    """
    for seed in seeds:
        if seed.provider_tag != matrix.provider_tag:
            raise ConfigurationError(
                f"Seed '{seed.label}' was embedded with '{seed.provider_tag}', "
                f"documents with '{matrix.provider_tag}'",
                field="provider_tag",
            )
        if np.asarray(seed.seed_embedding).shape != (matrix.dimension,):
            raise ConfigurationError(
                f"Seed '{seed.label}' has the wrong dimension", field="seed_embedding"
            )
    if not seeds or blend_threshold > 1.0 or len(matrix) == 0:
        return matrix

    seed_matrix = np.vstack([np.asarray(s.seed_embedding, dtype=np.float64) for s in seeds])
    similarities = _unit_rows(matrix.vectors, "document") @ _unit_rows(seed_matrix, "seed").T
    best = np.argmax(similarities, axis=1)
    best_similarity = similarities[np.arange(len(matrix)), best]
    blend = best_similarity >= blend_threshold

    guided = matrix.vectors.copy()
    guided[blend] = (guided[blend] + seed_matrix[best[blend]]) / 2.0
    logger.info("Seed guidance blended %d of %d documents", int(blend.sum()), len(matrix))
    return matrix.with_vectors(guided)


def build_seed_topics(
    seed_lists: Mapping[str, Sequence[str]],
    word_vectors: EmbeddingMatrix,
) -> list[SeedTopic]:
    """Seed embedding per category: the unit-normalized mean of its word vectors.

    ``word_vectors`` ids are the seed phrases themselves.
    """
    topics: list[SeedTopic] = []
    for label, words in seed_lists.items():
        if not words:
            raise ConfigurationError(f"Seed category '{label}' has no seed words", field="seed_words")
        mean = word_vectors.align(list(words)).vectors.mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm == 0:
            raise UndefinedSimilarityError(f"Seed words of '{label}' average to a zero vector")
        topics.append(SeedTopic(label, tuple(words), mean / norm, word_vectors.provider_tag))
    return topics


def embed_seed_words(
    seed_lists: Mapping[str, Sequence[str]],
    config: EmbeddingServiceConfig,
    *,
    cache_dir: str | Path | None = None,
) -> list[SeedTopic]:
    """Embed every seed phrase as a short text, then build seed topics."""
    phrases = sorted({word for words in seed_lists.values() for word in words})
    vectors = fetch_embeddings(phrases, config, doc_ids=phrases, cache_dir=cache_dir)
    return build_seed_topics(seed_lists, vectors)
