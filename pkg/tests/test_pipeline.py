# ABOUTME: Pipeline tests for fitting, test-time assignment and model bundles
# ABOUTME: Runs the full fit on synthetic blob corpora in both modes
# SPDX-License-Identifier: MIT

import time
from pathlib import Path

import numpy as np
import pytest

from civitopic.config import PipelineConfig
from civitopic.exceptions import ConfigurationError, FormatError, ParameterError, StageError
from civitopic.corpus import token_lists
from civitopic.metrics import adjusted_rand_index, internal_scores
from civitopic.models import OUTLIER_TOPIC, Corpus, EmbeddingMatrix, InternalScores
from civitopic.pipeline import BUNDLE_FILES, FittedModel, document_info, fit, load_bundle, save_bundle, transform
from civitopic.taxonomy import Taxonomy

from .synthetic import (
    PROVIDER,
    axis_seed_topics,
    blob_embeddings,
    gold_labels,
    make_corpus,
    make_taxonomy,
    noise_embeddings,
)

CONFIG = PipelineConfig(nr_topics=70, min_topic_size=10)


def _categories(corpus: Corpus) -> list[str]:
    return [doc.declared_category or "" for doc in corpus.documents]


def _internal(model: FittedModel, corpus: Corpus) -> InternalScores:
    if not model.topic_ids:
        return InternalScores(0.0, 0.0, 0.0)
    return internal_scores(model.representations, token_lists(corpus.documents))


class TestFit:
    def test_topics_respect_size_and_count(self, labeled_corpus: Corpus, blob_matrix: EmbeddingMatrix) -> None:
        model, assignment = fit(labeled_corpus, blob_matrix, CONFIG)
        sizes = {t: n for t, n in assignment.sizes().items() if t != OUTLIER_TOPIC}
        assert 1 <= assignment.k <= 70
        assert min(sizes.values()) >= 10
        assert model.topic_ids == tuple(range(assignment.k))
        assert assignment.doc_ids == tuple(labeled_corpus.ids)

    def test_separated_blobs_recover_categories(
        self, labeled_corpus: Corpus, blob_matrix: EmbeddingMatrix
    ) -> None:
        _, assignment = fit(labeled_corpus, blob_matrix, CONFIG)
        assert adjusted_rand_index(assignment.labels.tolist(), _categories(labeled_corpus)) > 0.8

    def test_representations_follow_topics(self, labeled_corpus: Corpus, blob_matrix: EmbeddingMatrix) -> None:
        model, assignment = fit(labeled_corpus, blob_matrix, CONFIG)
        topics = [r for r in model.representations if r.topic_id != OUTLIER_TOPIC]
        assert [r.topic_id for r in topics] == list(model.topic_ids)
        assert all(r.size == assignment.sizes()[r.topic_id] for r in topics)
        assert all(0 < len(r.words) <= 10 for r in topics)

    def test_nr_topics_caps_topic_count(self, labeled_corpus: Corpus, blob_matrix: EmbeddingMatrix) -> None:
        _, assignment = fit(labeled_corpus, blob_matrix, PipelineConfig(nr_topics=2, min_topic_size=10))
        assert assignment.k <= 2

    def test_repeatable(self, labeled_corpus: Corpus, blob_matrix: EmbeddingMatrix) -> None:
        _, first = fit(labeled_corpus, blob_matrix, CONFIG)
        _, second = fit(labeled_corpus, blob_matrix, CONFIG)
        np.testing.assert_array_equal(first.labels, second.labels)
        np.testing.assert_array_equal(first.probabilities, second.probabilities)

    def test_missing_embedding_is_a_stage_error(self, labeled_corpus: Corpus, blob_matrix: EmbeddingMatrix) -> None:
        partial = blob_matrix.align(labeled_corpus.ids[1:])
        with pytest.raises(StageError) as exc_info:
            fit(labeled_corpus, partial, CONFIG)
        assert exc_info.value.stage == "align"
        assert isinstance(exc_info.value.__cause__, ConfigurationError)

    def test_too_few_documents_fail_in_clustering(
        self, labeled_corpus: Corpus, blob_matrix: EmbeddingMatrix
    ) -> None:
        small = labeled_corpus.with_documents(labeled_corpus.documents[:8])
        with pytest.raises(StageError) as exc_info:
            fit(small, blob_matrix, CONFIG)
        assert exc_info.value.stage == "cluster"
        assert "cluster" in exc_info.value.user_message()


class TestSemisupervised:
    def test_requires_taxonomy(self, labeled_corpus: Corpus, blob_matrix: EmbeddingMatrix) -> None:
        with pytest.raises(ConfigurationError):
            fit(labeled_corpus, blob_matrix, PipelineConfig(mode="semi"))

    def test_requires_seeds_unless_guidance_is_off(
        self, labeled_corpus: Corpus, blob_matrix: EmbeddingMatrix, taxonomy: Taxonomy
    ) -> None:
        with pytest.raises(ConfigurationError):
            fit(labeled_corpus, blob_matrix, PipelineConfig(mode="semi"), taxonomy)

    def test_neutral_guidance_equals_unsupervised(
        self, labeled_corpus: Corpus, blob_matrix: EmbeddingMatrix, taxonomy: Taxonomy
    ) -> None:
        neutral = PipelineConfig(mode="semi", min_topic_size=10, seed_multiplier=1.0, blend_threshold=1.5)
        semi_model, semi = fit(labeled_corpus, blob_matrix, neutral, taxonomy)
        unsup_model, unsup = fit(labeled_corpus, blob_matrix, CONFIG, taxonomy)
        np.testing.assert_array_equal(semi.labels, unsup.labels)
        np.testing.assert_array_equal(semi_model.weights.weights, unsup_model.weights.weights)

    def test_structured_embeddings_score_above_noise(
        self, labeled_corpus: Corpus, blob_matrix: EmbeddingMatrix
    ) -> None:
        structured, _ = fit(labeled_corpus, blob_matrix, CONFIG)
        noise, _ = fit(labeled_corpus, noise_embeddings(labeled_corpus, seed=4), CONFIG)
        assert _internal(structured, labeled_corpus).ws > _internal(noise, labeled_corpus).ws

    def test_seed_terms_are_boosted(
        self, labeled_corpus: Corpus, blob_matrix: EmbeddingMatrix, taxonomy: Taxonomy
    ) -> None:
        boosted = PipelineConfig(mode="semi", min_topic_size=10, seed_multiplier=3.0, blend_threshold=1.5)
        semi_model, _ = fit(labeled_corpus, blob_matrix, boosted, taxonomy)
        unsup_model, _ = fit(labeled_corpus, blob_matrix, CONFIG)
        column = semi_model.vocabulary.index("hospital")
        np.testing.assert_allclose(
            semi_model.weights.weights[:, column], 3.0 * unsup_model.weights.weights[:, column]
        )

    def test_guidance_improves_agreement_on_overlapping_blobs(self) -> None:
        corpus = make_corpus(n_per_category=60, seed=21)
        matrix = blob_embeddings(corpus, dim=16, separation=0.8, spread=0.3, seed=5)
        categories = _categories(corpus)
        config = PipelineConfig(min_topic_size=15, nr_topics="auto")

        _, unsup = fit(corpus, matrix, config)
        semi_config = PipelineConfig(mode="semi", min_topic_size=15, nr_topics="auto")
        _, semi = fit(corpus, matrix, semi_config, make_taxonomy(), seed_topics=axis_seed_topics(corpus))

        unsup_ari = adjusted_rand_index(unsup.labels.tolist(), categories)
        semi_ari = adjusted_rand_index(semi.labels.tolist(), categories)
        assert semi_ari > unsup_ari

    def test_guidance_improves_coherence_when_categories_hide_in_low_variance_axes(self) -> None:
        corpus = make_corpus(n_per_category=60, seed=23)
        matrix = blob_embeddings(corpus, dim=16, separation=0.6, spread=0.1, seed=7)
        vectors = matrix.vectors.copy()
        vectors[:, 3:] *= 6.0
        matrix = EmbeddingMatrix(vectors, matrix.doc_ids, PROVIDER)
        config = PipelineConfig(min_topic_size=15, nr_topics="auto")

        unsup_model, unsup = fit(corpus, matrix, config)
        semi_config = PipelineConfig(mode="semi", min_topic_size=15, nr_topics="auto")
        semi_model, semi = fit(corpus, matrix, semi_config, make_taxonomy(), seed_topics=axis_seed_topics(corpus))

        assert semi.k >= 2
        assert _internal(semi_model, corpus).nc > _internal(unsup_model, corpus).nc
        categories = _categories(corpus)
        assert adjusted_rand_index(semi.labels.tolist(), categories) > adjusted_rand_index(
            unsup.labels.tolist(), categories
        )


class TestTransform:
    def test_training_documents_keep_their_topics(
        self, labeled_corpus: Corpus, blob_matrix: EmbeddingMatrix
    ) -> None:
        model, assignment = fit(labeled_corpus, blob_matrix, CONFIG)
        again = transform(model, labeled_corpus, blob_matrix)
        np.testing.assert_array_equal(again.labels, assignment.labels)
        np.testing.assert_array_equal(again.probabilities, assignment.probabilities)

    def test_far_document_is_outlier(self, labeled_corpus: Corpus, blob_matrix: EmbeddingMatrix) -> None:
        model, _ = fit(labeled_corpus, blob_matrix, CONFIG)
        far = EmbeddingMatrix(np.full((1, 16), 1000.0), (labeled_corpus.ids[0],), PROVIDER)
        result = transform(model, labeled_corpus.documents[:1], far)
        assert result.labels.tolist() == [OUTLIER_TOPIC]
        assert result.probabilities.tolist() == [0.0]

    def test_unseen_documents_near_a_blob(self) -> None:
        corpus = make_corpus(n_per_category=50, seed=4)
        matrix = blob_embeddings(corpus, seed=8)
        prepared = corpus.with_documents(d for i, d in enumerate(corpus.documents) if i % 5)
        model, assignment = fit(prepared, matrix, CONFIG)
        held_out = corpus.with_documents(d for i, d in enumerate(corpus.documents) if not i % 5)
        result = transform(model, held_out, matrix)
        assert len(result) == 30
        assert result.probabilities.min() >= 0.0
        assert result.probabilities.max() <= 1.0
        assigned = result.labels != OUTLIER_TOPIC
        assert assigned.sum() >= 20
        by_category = {
            doc.declared_category: int(label) for doc, label in zip(held_out.documents, result.labels) if label != -1
        }
        train_labels = {
            doc.declared_category: int(label)
            for doc, label in zip(prepared.documents, assignment.labels)
            if label != -1
        }
        assert all(train_labels[category] == label for category, label in by_category.items())

    def test_empty_input(self, labeled_corpus: Corpus, blob_matrix: EmbeddingMatrix) -> None:
        model, _ = fit(labeled_corpus, blob_matrix, CONFIG)
        assert len(transform(model, [], None)) == 0

    def test_provider_mismatch(self, labeled_corpus: Corpus, blob_matrix: EmbeddingMatrix) -> None:
        model, _ = fit(labeled_corpus, blob_matrix, CONFIG)
        other = blob_embeddings(labeled_corpus, provider="other-model")
        with pytest.raises(ConfigurationError):
            transform(model, labeled_corpus, other)

    def test_dimension_mismatch(self, labeled_corpus: Corpus, blob_matrix: EmbeddingMatrix) -> None:
        model, _ = fit(labeled_corpus, blob_matrix, CONFIG)
        narrow = blob_embeddings(labeled_corpus, dim=8)
        with pytest.raises(ParameterError):
            transform(model, labeled_corpus, narrow)


class TestBundle:
    def test_identical_fits_write_identical_bundles(
        self, temp_dir: Path, labeled_corpus: Corpus, blob_matrix: EmbeddingMatrix
    ) -> None:
        for name in ("a", "b"):
            model, assignment = fit(labeled_corpus, blob_matrix, CONFIG)
            save_bundle(model, assignment, temp_dir / name)
        for file_name in BUNDLE_FILES:
            assert (temp_dir / "a" / file_name).read_bytes() == (temp_dir / "b" / file_name).read_bytes()

    def test_loaded_bundle_assigns_like_the_fit(
        self, temp_dir: Path, labeled_corpus: Corpus, blob_matrix: EmbeddingMatrix
    ) -> None:
        model, assignment = fit(labeled_corpus, blob_matrix, CONFIG)
        save_bundle(model, assignment, temp_dir / "run")
        loaded, loaded_assignment = load_bundle(temp_dir / "run")
        assert loaded.config == CONFIG
        assert loaded.vectorizer is None
        assert loaded.topic_ids == model.topic_ids
        assert [r.words for r in loaded.representations] == [r.words for r in model.representations]
        np.testing.assert_array_equal(loaded_assignment.labels, assignment.labels)
        np.testing.assert_array_equal(
            transform(loaded, labeled_corpus, blob_matrix).labels,
            transform(model, labeled_corpus, blob_matrix).labels,
        )

    def test_missing_file(self, temp_dir: Path, labeled_corpus: Corpus, blob_matrix: EmbeddingMatrix) -> None:
        model, assignment = fit(labeled_corpus, blob_matrix, CONFIG)
        save_bundle(model, assignment, temp_dir / "run")
        (temp_dir / "run" / "profiles.json").unlink()
        with pytest.raises(FormatError, match="profiles.json"):
            load_bundle(temp_dir / "run")


def test_document_info(labeled_corpus: Corpus, blob_matrix: EmbeddingMatrix) -> None:
    _, assignment = fit(labeled_corpus, blob_matrix, CONFIG)
    labels = gold_labels(labeled_corpus)
    frame = document_info(labeled_corpus, assignment, labels)
    assert frame.columns.tolist() == ["doc_id", "clean_text", "topic", "probability", "n1", "n2"]
    assert len(frame) == len(labeled_corpus)
    first = labeled_corpus.documents[0]
    assert frame.loc[0, "clean_text"] == first.clean_text
    assert frame.loc[0, "n1"] == first.declared_category


@pytest.mark.slow
def test_thousand_documents_end_to_end(temp_dir: Path) -> None:
    corpus = make_corpus(n_per_category=200, n_categories=5, seed=13)
    matrix = blob_embeddings(corpus, dim=64, seed=17)
    start = time.perf_counter()
    model, assignment = fit(corpus, matrix, CONFIG)
    save_bundle(model, assignment, temp_dir / "run")
    elapsed = time.perf_counter() - start
    assert len(assignment) == 1000
    assert assignment.k >= 2
    assert elapsed < 300
