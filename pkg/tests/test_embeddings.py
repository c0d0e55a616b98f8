# ABOUTME: Embedding tests for file formats, the HTTP embedding client and seed guidance
# ABOUTME: Uses a local HTTP server as the embedding service and small hand-built matrices
# SPDX-License-Identifier: MIT

from pathlib import Path
from typing import Any

import numpy as np
import pytest
from pytest_httpserver import HTTPServer

from civitopic.config import EmbeddingServiceConfig
from civitopic.embeddings import (
    build_seed_topics,
    cosine_similarity,
    embed_seed_words,
    fetch_embeddings,
    guide_with_seeds,
    load_embeddings,
    save_embeddings,
    sidecar_path,
)
from civitopic.exceptions import (
    ConfigurationError,
    DataError,
    FormatError,
    ProtocolError,
    UndefinedSimilarityError,
)
from civitopic.models import EmbeddingMatrix, SeedTopic

from .http_test_helpers import setup_embedding_service, setup_json_response, text_vector


def _matrix(rows: list[list[float]], provider: str = "p") -> EmbeddingMatrix:
    return EmbeddingMatrix(np.array(rows, dtype=float), tuple(f"d{i}" for i in range(len(rows))), provider)


class TestEmbeddingMatrix:
    def test_rejects_nan(self) -> None:
        with pytest.raises(DataError) as exc_info:
            _matrix([[0.0, 1.0], [np.nan, 1.0]])
        assert exc_info.value.details["row"] == 1

    def test_rejects_one_dimension(self) -> None:
        with pytest.raises(FormatError):
            _matrix([[1.0], [2.0]])

    def test_align_reorders_and_checks_ids(self) -> None:
        matrix = _matrix([[1.0, 0.0], [0.0, 1.0]])
        aligned = matrix.align(["d1", "d0"])
        np.testing.assert_array_equal(aligned.vectors, [[0.0, 1.0], [1.0, 0.0]])
        with pytest.raises(ConfigurationError):
            matrix.align(["d9"])

    def test_vectors_are_read_only(self) -> None:
        matrix = _matrix([[1.0, 2.0]])
        with pytest.raises(ValueError):
            matrix.vectors[0, 0] = 5.0


class TestFileFormats:
    def test_text_round_trip_is_exact(self, temp_dir: Path) -> None:
        matrix = _matrix([[0.1, -2.5e-8, 3.0], [1 / 3, 0.0, -7.25]], provider="labse")
        save_embeddings(matrix, temp_dir / "emb.txt")
        loaded = load_embeddings(temp_dir / "emb.txt")
        np.testing.assert_array_equal(loaded.vectors, matrix.vectors)
        assert loaded.doc_ids == matrix.doc_ids
        assert loaded.provider_tag == "labse"

    def test_binary_round_trip_is_float32(self, temp_dir: Path) -> None:
        matrix = _matrix([[0.1, 0.2], [0.3, 0.4]])
        save_embeddings(matrix, temp_dir / "emb.bin")
        assert sidecar_path(temp_dir / "emb.bin").is_file()
        assert (temp_dir / "emb.bin").stat().st_size == 4 * 4
        loaded = load_embeddings(temp_dir / "emb.bin")
        np.testing.assert_array_equal(loaded.vectors, matrix.vectors.astype(np.float32).astype(np.float64))

    def test_text_header_declares_rows_and_provider(self, temp_dir: Path) -> None:
        save_embeddings(_matrix([[1.0, 2.0]], provider="bertimbau"), temp_dir / "emb.txt")
        assert (temp_dir / "emb.txt").read_text().splitlines()[0] == "civemb v1 1 2 bertimbau"

    def test_empty_file(self, temp_dir: Path) -> None:
        (temp_dir / "emb.txt").write_text("")
        with pytest.raises(FormatError, match="empty"):
            load_embeddings(temp_dir / "emb.txt")

    def test_short_row_is_named(self, temp_dir: Path) -> None:
        (temp_dir / "emb.txt").write_text("civemb v1 2 3 p\na\t1,2,3\nb\t1,2\n")
        with pytest.raises(FormatError) as exc_info:
            load_embeddings(temp_dir / "emb.txt")
        assert exc_info.value.value == 1

    def test_row_count_mismatch(self, temp_dir: Path) -> None:
        (temp_dir / "emb.txt").write_text("civemb v1 3 2 p\na\t1,2\n")
        with pytest.raises(FormatError, match="declares 3 rows"):
            load_embeddings(temp_dir / "emb.txt")

    def test_non_numeric_entry(self, temp_dir: Path) -> None:
        (temp_dir / "emb.txt").write_text("civemb v1 1 2 p\na\t1,x\n")
        with pytest.raises(FormatError, match="non-numeric"):
            load_embeddings(temp_dir / "emb.txt")

    def test_nan_entry(self, temp_dir: Path) -> None:
        (temp_dir / "emb.txt").write_text("civemb v1 1 2 p\na\t1,nan\n")
        with pytest.raises(DataError):
            load_embeddings(temp_dir / "emb.txt")

    def test_bad_header(self, temp_dir: Path) -> None:
        (temp_dir / "emb.txt").write_text("vectors 1 2\na\t1,2\n")
        with pytest.raises(FormatError):
            load_embeddings(temp_dir / "emb.txt")

    def test_binary_size_mismatch(self, temp_dir: Path) -> None:
        save_embeddings(_matrix([[0.1, 0.2], [0.3, 0.4]]), temp_dir / "emb.bin")
        np.zeros(3, dtype="<f4").tofile(temp_dir / "emb.bin")
        with pytest.raises(FormatError):
            load_embeddings(temp_dir / "emb.bin")


class TestFetchEmbeddings:
    def test_batches_and_order(self, http_server: HTTPServer, embedding_config: EmbeddingServiceConfig) -> None:
        seen: list[dict[str, Any]] = []
        setup_embedding_service(http_server, requests_seen=seen)
        texts = ["a", "b", "c", "d", "e"]
        matrix = fetch_embeddings(texts, embedding_config, doc_ids=["1", "2", "3", "4", "5"])
        assert matrix.doc_ids == ("1", "2", "3", "4", "5")
        assert matrix.provider_tag == "stub-embedder"
        assert len(seen) == 3
        assert all(body["model"] == "stub-embedder" for body in seen)
        expected = np.array([text_vector(t) for t in texts], dtype=np.float32).astype(np.float64)
        np.testing.assert_array_equal(matrix.vectors, expected)

    def test_cache_avoids_second_request(
        self, http_server: HTTPServer, embedding_config: EmbeddingServiceConfig
    ) -> None:
        seen: list[dict[str, Any]] = []
        setup_embedding_service(http_server, requests_seen=seen)
        first = fetch_embeddings(["x", "y"], embedding_config)
        second = fetch_embeddings(["y", "x"], embedding_config)
        assert len(seen) == 1
        np.testing.assert_array_equal(first.vectors[0], second.vectors[1])

    def test_duplicate_texts_sent_once(
        self, http_server: HTTPServer, embedding_config: EmbeddingServiceConfig
    ) -> None:
        seen: list[dict[str, Any]] = []
        setup_embedding_service(http_server, requests_seen=seen)
        matrix = fetch_embeddings(["same", "same"], embedding_config)
        assert [body["input"] for body in seen] == [["same"]]
        np.testing.assert_array_equal(matrix.vectors[0], matrix.vectors[1])

    def test_wrong_vector_count(self, http_server: HTTPServer, embedding_config: EmbeddingServiceConfig) -> None:
        setup_json_response(http_server, "/embed", {"vectors": [[1.0, 2.0]]})
        with pytest.raises(ProtocolError, match="1 vectors for 2 texts"):
            fetch_embeddings(["a", "b"], embedding_config)

    def test_missing_vectors_key(self, http_server: HTTPServer, embedding_config: EmbeddingServiceConfig) -> None:
        setup_json_response(http_server, "/embed", {"data": []})
        with pytest.raises(ProtocolError):
            fetch_embeddings(["a"], embedding_config)

    def test_empty_input(self, embedding_config: EmbeddingServiceConfig) -> None:
        with pytest.raises(ConfigurationError):
            fetch_embeddings([], embedding_config)

    def test_seed_words_from_service(
        self, http_server: HTTPServer, embedding_config: EmbeddingServiceConfig
    ) -> None:
        setup_embedding_service(http_server)
        seeds = embed_seed_words({"Saúde": ["Saúde", "Hospital"]}, embedding_config)
        assert [s.label for s in seeds] == ["Saúde"]
        assert seeds[0].provider_tag == "stub-embedder"
        assert np.linalg.norm(seeds[0].seed_embedding) == pytest.approx(1.0)


class TestSimilarityAndGuidance:
    def test_cosine(self) -> None:
        assert cosine_similarity(np.array([1.0, 0.0]), np.array([2.0, 0.0])) == pytest.approx(1.0)
        assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 3.0])) == pytest.approx(0.0)
        with pytest.raises(UndefinedSimilarityError):
            cosine_similarity(np.zeros(2), np.array([1.0, 0.0]))

    def test_blends_halfway_toward_best_seed(self) -> None:
        matrix = _matrix([[1.0, 0.2], [0.1, 1.0]])
        seeds = [
            SeedTopic("a", ("a",), np.array([1.0, 0.0]), "p"),
            SeedTopic("b", ("b",), np.array([0.0, 1.0]), "p"),
        ]
        guided = guide_with_seeds(matrix, seeds)
        np.testing.assert_allclose(guided.vectors, [[1.0, 0.1], [0.05, 1.0]])
        assert guided.doc_ids == matrix.doc_ids

    def test_threshold_keeps_dissimilar_documents(self) -> None:
        matrix = _matrix([[1.0, 1.0], [1.0, 0.0]])
        seeds = [SeedTopic("a", ("a",), np.array([1.0, 0.0]), "p")]
        guided = guide_with_seeds(matrix, seeds, blend_threshold=0.9)
        np.testing.assert_allclose(guided.vectors, [[1.0, 1.0], [1.0, 0.0]])

    def test_threshold_above_one_is_identity(self) -> None:
        matrix = _matrix([[1.0, 0.0]])
        seeds = [SeedTopic("a", ("a",), np.array([1.0, 0.0]), "p")]
        assert guide_with_seeds(matrix, seeds, blend_threshold=1.5) is matrix
        assert guide_with_seeds(matrix, []) is matrix

    def test_provider_mismatch(self) -> None:
        seeds = [SeedTopic("a", ("a",), np.array([1.0, 0.0]), "other")]
        with pytest.raises(ConfigurationError, match="other"):
            guide_with_seeds(_matrix([[1.0, 0.0]]), seeds)

    def test_dimension_mismatch(self) -> None:
        seeds = [SeedTopic("a", ("a",), np.array([1.0, 0.0, 0.0]), "p")]
        with pytest.raises(ConfigurationError):
            guide_with_seeds(_matrix([[1.0, 0.0]]), seeds)

    def test_zero_document_vector(self) -> None:
        seeds = [SeedTopic("a", ("a",), np.array([1.0, 0.0]), "p")]
        with pytest.raises(UndefinedSimilarityError):
            guide_with_seeds(_matrix([[0.0, 0.0]]), seeds)

    def test_build_seed_topics_averages_word_vectors(self) -> None:
        words = EmbeddingMatrix(np.array([[2.0, 0.0], [0.0, 2.0], [1.0, 1.0]]), ("x", "y", "z"), "p")
        seeds = build_seed_topics({"A": ["x", "y"], "B": ["z"]}, words)
        np.testing.assert_allclose(seeds[0].seed_embedding, [np.sqrt(0.5), np.sqrt(0.5)])
        assert seeds[1].seed_words == ("z",)
        with pytest.raises(ConfigurationError):
            build_seed_topics({"C": ["missing"]}, words)
        with pytest.raises(ConfigurationError):
            build_seed_topics({"D": []}, words)
