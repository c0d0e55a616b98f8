# ABOUTME: Experiment tests for grid sweeps, aggregation, model comparison and reports
# ABOUTME: Runs small grids on synthetic corpora and checks comparison arithmetic on reference scores
# SPDX-License-Identifier: MIT

import json
import math
from pathlib import Path
from typing import Any
from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest

from civitopic import experiments
from civitopic.config import PipelineConfig
from civitopic.exceptions import ConfigurationError, EvaluationError, ParameterError
from civitopic.experiments import (
    GridCell,
    GridSpec,
    ReportScores,
    RunFailure,
    RunRecord,
    aggregate_records,
    build_comparison,
    compare_embedding_models,
    emit_report,
    evaluate_external,
    label_levels,
    load_grid,
    read_runs,
    run_grid,
)
from civitopic.models import NO_MATCH, ClusterAssignment, Corpus, EmbeddingMatrix, InternalScores
from civitopic.pipeline import fit

from .synthetic import blob_embeddings, gold_labels

# Unsupervised vs semisupervised scores of the best reference configuration
REFERENCE_UNSUP = {
    "nc": 0.0953, "nd": 0.8522, "ws": 0.2467,
    "ari_n1": 0.2095, "nmi_n1": 0.5366, "ari_n2": 0.2105, "nmi_n2": 0.6088,
}
REFERENCE_SEMI = {
    "nc": 0.1166, "nd": 0.8420, "ws": 0.2617,
    "ari_n1": 0.3089, "nmi_n1": 0.5495, "ari_n2": 0.2992, "nmi_n2": 0.6220,
}
REFERENCE_DIFF = {
    "nc": (0.0213, 22.4), "nd": (-0.0101, -1.2), "ws": (0.0150, 6.1),
    "ari_n1": (0.0994, 47.5), "nmi_n1": (0.0129, 2.4), "ari_n2": (0.0887, 42.1), "nmi_n2": (0.0132, 2.2),
}

SMALL_GRID = GridSpec(((1, 1),), (2, "auto"), (10,), repetitions=2)


def _record(config_id: str, repetition: int, nc: float, nd: float, k: int = 5) -> RunRecord:
    return RunRecord(
        config_id=config_id,
        repetition=repetition,
        seed=42 + repetition,
        n_gram_range="(1,1)",
        nr_topics="70",
        min_topic_size=10,
        k=k,
        nc=nc,
        nd=nd,
        ws=0.8 * nc + 0.2 * nd,
        wall_time=0.5,
    )


class TestGridSpec:
    def test_default_grid_has_96_cells(self) -> None:
        cells = GridSpec.default_grid().cells()
        assert len(cells) == 96
        assert cells[0].config_id == "ng1-1_nt10_mts3"
        assert cells[-1].config_id == "ng1-2_ntauto_mts25"
        assert GridSpec.default_grid().repetitions == 10

    def test_apply_clamps_min_samples(self) -> None:
        base = PipelineConfig(min_topic_size=10, min_samples=10)
        config = GridCell((1, 2), "auto", 5).apply(base, seed=7)
        assert (config.min_topic_size, config.min_samples, config.seed) == (5, 5, 7)
        assert config.n_gram_range == (1, 2)

    def test_load_grid(self, temp_dir: Path) -> None:
        path = temp_dir / "grid.json"
        path.write_text(json.dumps({"n_gram_ranges": [[1, 1]], "nr_topics_values": [10, "auto"], "min_topic_sizes": [5]}))
        grid = load_grid(path)
        assert [c.config_id for c in grid.cells()] == ["ng1-1_nt10_mts5", "ng1-1_ntauto_mts5"]

    @pytest.mark.parametrize(
        "data",
        [
            {"n_gram_ranges": [[1, 1]], "nr_topics_values": [10]},
            {"n_gram_ranges": [[1, 1]], "nr_topics_values": [10], "min_topic_sizes": [5], "folds": 3},
        ],
    )
    def test_bad_grid_files(self, data: dict[str, Any]) -> None:
        with pytest.raises(ConfigurationError):
            GridSpec.from_dict(data)

    def test_empty_or_unrepeated_grid(self) -> None:
        with pytest.raises(ParameterError):
            GridSpec(((1, 1),), (), (5,))
        with pytest.raises(ParameterError):
            GridSpec(((1, 1),), (10,), (5,), repetitions=0)


class TestAggregate:
    def test_means_and_order(self) -> None:
        records = [
            _record("low", 0, 0.05, 0.80),
            _record("high", 0, 0.10, 0.90),
            _record("high", 1, 0.12, 0.86),
        ]
        table = aggregate_records(records)
        assert table["config_id"].tolist() == ["high", "low"]
        high = table.iloc[0]
        assert high["runs"] == 2
        assert high["nc"] == pytest.approx(0.11)
        assert high["ws"] == pytest.approx(0.8 * 0.11 + 0.2 * 0.88)
        assert not high["partial"]

    def test_failures_mark_partial_and_empty_cells(self) -> None:
        records = [_record("a", 0, 0.1, 0.9)]
        failures = [RunFailure("a", 1, "boom"), RunFailure("b", 0, "boom")]
        table = aggregate_records(records, failures)
        assert table["config_id"].tolist() == ["a", "b"]
        assert table["partial"].tolist() == [True, True]
        assert math.isnan(table.loc[1, "ws"])
        assert table.loc[1, "runs"] == 0


class TestRunGrid:
    def test_records_in_grid_order(self, labeled_corpus: Corpus, blob_matrix: EmbeddingMatrix) -> None:
        result = run_grid(labeled_corpus, blob_matrix, SMALL_GRID, "unsup", workers=2)
        assert [(r.config_id, r.repetition) for r in result.records] == [
            ("ng1-1_nt2_mts10", 0),
            ("ng1-1_nt2_mts10", 1),
            ("ng1-1_ntauto_mts10", 0),
            ("ng1-1_ntauto_mts10", 1),
        ]
        assert result.failures == []
        assert all(r.k <= 2 for r in result.records[:2])
        assert all(0.0 <= r.ws <= 1.0 for r in result.records)
        assert len(result.aggregate) == 2

    def test_repeatable_apart_from_timing(self, labeled_corpus: Corpus, blob_matrix: EmbeddingMatrix) -> None:
        first = run_grid(labeled_corpus, blob_matrix, SMALL_GRID, "unsup")
        second = run_grid(labeled_corpus, blob_matrix, SMALL_GRID, "unsup", workers=3)
        strip = [(r.config_id, r.seed, r.k, r.nc, r.nd, r.ws) for r in first.records]
        assert strip == [(r.config_id, r.seed, r.k, r.nc, r.nd, r.ws) for r in second.records]

    def test_failed_run_is_recorded(self, labeled_corpus: Corpus, blob_matrix: EmbeddingMatrix) -> None:
        def flaky_fit(train: Any, embeddings: Any, config: PipelineConfig, *args: Any, **kwargs: Any) -> Any:
            if config.nr_topics == 2 and config.seed == 43:
                raise RuntimeError("simulated failure")
            return fit(train, embeddings, config, *args, **kwargs)

        with patch.object(experiments, "fit", side_effect=flaky_fit):
            result = run_grid(labeled_corpus, blob_matrix, SMALL_GRID, "unsup")
        assert result.failures == [RunFailure("ng1-1_nt2_mts10", 1, "simulated failure")]
        assert len(result.records) == 3
        partial = result.aggregate.set_index("config_id")["partial"]
        assert partial["ng1-1_nt2_mts10"]
        assert not partial["ng1-1_ntauto_mts10"]


class TestCompareEmbeddingModels:
    def test_identical_sets_give_identical_curves(
        self, labeled_corpus: Corpus, blob_matrix: EmbeddingMatrix
    ) -> None:
        curves = compare_embedding_models(
            labeled_corpus, {"m1": blob_matrix, "m2": blob_matrix}, [2, "auto"], repetitions=2
        )
        assert curves.columns.tolist() == ["model", "nr_topics", "mean_ws", "std_ws", "runs"]
        assert curves["nr_topics"].tolist() == ["2", "auto", "2", "auto"]
        np.testing.assert_array_equal(curves["mean_ws"].iloc[:2], curves["mean_ws"].iloc[2:])
        assert curves["runs"].tolist() == [2, 2, 2, 2]

    def test_needs_two_sets(self, labeled_corpus: Corpus, blob_matrix: EmbeddingMatrix) -> None:
        with pytest.raises(ParameterError):
            compare_embedding_models(labeled_corpus, {"m1": blob_matrix}, [10])

    def test_empty_sweep(self, labeled_corpus: Corpus, blob_matrix: EmbeddingMatrix) -> None:
        with pytest.raises(ParameterError):
            compare_embedding_models(labeled_corpus, {"m1": blob_matrix, "m2": blob_matrix}, [])

    def test_sets_must_cover_same_documents(
        self, labeled_corpus: Corpus, blob_matrix: EmbeddingMatrix
    ) -> None:
        other = blob_matrix.align(labeled_corpus.ids[:-1])
        with pytest.raises(ConfigurationError):
            compare_embedding_models(labeled_corpus, {"m1": blob_matrix, "m2": other}, [10])


class TestExternalEvaluation:
    def test_exclusions_are_counted(self, labeled_corpus: Corpus) -> None:
        labels = gold_labels(labeled_corpus)
        ids = labeled_corpus.ids
        n1, n2 = label_levels(labels)
        n1[ids[1]] = NO_MATCH
        del n2[ids[2]]
        topics = [0 if doc.declared_category == "Saúde" else 1 for doc in labeled_corpus.documents]
        topics[0] = -1
        assignment = ClusterAssignment(tuple(ids), np.array(topics), np.ones(len(ids)))

        level_1, level_2 = evaluate_external(assignment, n1, n2)
        assert level_1.excluded == {"outlier": 1, "no_match": 1, "unlabeled": 0}
        assert level_2.excluded == {"outlier": 1, "no_match": 0, "unlabeled": 1}
        assert level_1.n_documents == len(ids) - 2
        assert 0.0 < level_1.ari < 1.0
        assert level_1.contingency.counts.sum() == len(ids) - 2

    def test_nothing_left_to_compare(self) -> None:
        assignment = ClusterAssignment(("a", "b"), np.array([-1, 0]), np.ones(2))
        with pytest.raises(EvaluationError):
            evaluate_external(assignment, {"a": "Saúde", "b": "Saúde"}, {})

    def test_reference_comparison_arithmetic(self) -> None:
        table = build_comparison(REFERENCE_UNSUP, REFERENCE_SEMI).set_index("metric")
        assert table.index.tolist() == list(REFERENCE_DIFF)
        for metric, (diff, delta) in REFERENCE_DIFF.items():
            assert table.loc[metric, "diff"] == pytest.approx(diff, abs=1.5e-4)
            assert table.loc[metric, "delta_pct"] == pytest.approx(delta, abs=0.1)

    def test_zero_baseline_has_no_relative_change(self) -> None:
        table = build_comparison({"ari_n1": 0.0}, {"ari_n1": 0.2})
        assert math.isnan(table.loc[0, "delta_pct"])


class TestReport:
    def test_writes_all_files(self, temp_dir: Path) -> None:
        records = [_record(f"cell{i:02d}", 0, 0.05 + i / 200, 0.8) for i in range(12)]
        comparison = build_comparison(REFERENCE_UNSUP, REFERENCE_SEMI)
        scores = ReportScores(internal=InternalScores(0.1, 0.9, 0.26), comparison=comparison)
        emit_report(records, scores, temp_dir / "report", failures=[RunFailure("cell99", 0, "boom")])

        directory = temp_dir / "report"
        for name in ("runs.csv", "top10.csv", "failures.csv", "comparison.csv", "scores.json"):
            assert (directory / name).is_file()
        top = pd.read_csv(directory / "top10.csv")
        assert len(top) == 10
        assert top["ws"].is_monotonic_decreasing
        assert top.loc[0, "config_id"] == "cell11"
        payload = json.loads((directory / "scores.json").read_text())
        assert payload["internal"]["nd"] == 0.9
        assert len(payload["comparison"]) == 7

    def test_external_scores_write_contingency(self, temp_dir: Path, labeled_corpus: Corpus) -> None:
        n1, n2 = label_levels(gold_labels(labeled_corpus))
        topics = [i % 3 for i in range(len(labeled_corpus))]
        assignment = ClusterAssignment(tuple(labeled_corpus.ids), np.array(topics), np.ones(len(topics)))
        scores = ReportScores(external=evaluate_external(assignment, n1, n2))
        emit_report([_record("a", 0, 0.1, 0.9)], scores, temp_dir)
        for level in ("n1", "n2"):
            assert (temp_dir / f"contingency_{level}_counts.csv").is_file()
            assert (temp_dir / f"contingency_{level}_rownorm.csv").is_file()
            colnorm = pd.read_csv(temp_dir / f"contingency_{level}_colnorm.csv", index_col="topic")
            assert colnorm.sum(axis=0).tolist() == pytest.approx([1.0] * colnorm.shape[1])

    def test_no_records(self, temp_dir: Path) -> None:
        with pytest.raises(ParameterError):
            emit_report([], None, temp_dir)

    def test_re_emitting_saved_runs_is_byte_identical(
        self, temp_dir: Path, labeled_corpus: Corpus
    ) -> None:
        matrix = blob_embeddings(labeled_corpus, seed=3)
        result = run_grid(labeled_corpus, matrix, SMALL_GRID, "unsup")
        emit_report(result.records, None, temp_dir / "first")
        emit_report(read_runs(temp_dir / "first" / "runs.csv"), None, temp_dir / "second")
        for name in ("runs.csv", "top10.csv", "scores.json"):
            assert (temp_dir / "first" / name).read_bytes() == (temp_dir / "second" / name).read_bytes()
