# ABOUTME: Shared test fixtures for civitopic testing
# ABOUTME: Provides temp directories, local HTTP servers standing in for model services, and synthetic data
# SPDX-License-Identifier: MIT

import tempfile
from collections.abc import Generator
from pathlib import Path

import pytest
from pytest_httpserver import HTTPServer

from civitopic.config import EmbeddingServiceConfig, LlmConfig
from civitopic.models import Corpus, EmbeddingMatrix
from civitopic.taxonomy import Taxonomy

from .synthetic import blob_embeddings, make_corpus, make_taxonomy


@pytest.fixture
def temp_dir() -> Generator[Path, None, None]:
    """Create temporary directory for test files."""
    with tempfile.TemporaryDirectory() as temp_dir:
        yield Path(temp_dir)


@pytest.fixture
def http_server() -> Generator[HTTPServer, None, None]:
    """Create local HTTP server for testing without external dependencies."""
    server = HTTPServer(host="127.0.0.1", port=0)  # Random available port
    server.start()
    try:
        yield server
    finally:
        server.clear()
        server.stop()


@pytest.fixture
def llm_config(http_server: HTTPServer, temp_dir: Path) -> LlmConfig:
    """LLM settings pointing at the local server, no retry delay, isolated cache."""
    return LlmConfig(
        endpoint=http_server.url_for("/api/generate"),
        model_name="stub-llm",
        retries=1,
        retry_delay=0.0,
        timeout=5.0,
        max_in_flight=2,
        cache_dir=str(temp_dir / "cache"),
    )


@pytest.fixture
def embedding_config(http_server: HTTPServer, temp_dir: Path) -> EmbeddingServiceConfig:
    return EmbeddingServiceConfig(
        endpoint=http_server.url_for("/embed"),
        model_name="stub-embedder",
        batch_size=2,
        retries=1,
        retry_delay=0.0,
        timeout=5.0,
        max_in_flight=2,
        cache_dir=str(temp_dir / "cache"),
    )


@pytest.fixture
def taxonomy() -> Taxonomy:
    return make_taxonomy()


@pytest.fixture
def labeled_corpus() -> Corpus:
    """Three categories, 40 preprocessed documents each."""
    return make_corpus(n_per_category=40, seed=7)


@pytest.fixture
def blob_matrix(labeled_corpus: Corpus) -> EmbeddingMatrix:
    """Well-separated 16-dim blobs, one per category of ``labeled_corpus``."""
    return blob_embeddings(labeled_corpus, dim=16, separation=3.0, spread=0.3, seed=11)
