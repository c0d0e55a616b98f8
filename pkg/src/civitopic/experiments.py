# ABOUTME: Grid search, embedding-model comparison and external evaluation runs
# ABOUTME: Aggregates repeated fits and writes CSV/JSON report bundles
# SPDX-License-Identifier: MIT

import logging
import math
import time
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from itertools import product
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from tqdm import tqdm

from .config import AUTO, Mode, PipelineConfig, parse_ngram_range, parse_nr_topics
from .corpus import PreprocessConfig, split, token_lists
from .exceptions import (
    ConfigurationError,
    EvaluationError,
    FileSystemError,
    ParameterError,
)
from .metrics import TOP_N, external_scores, internal_scores, scores_to_dict, weighted_score, write_contingency
from .models import (
    NO_MATCH,
    OUTLIER_TOPIC,
    ClusterAssignment,
    Corpus,
    EmbeddingMatrix,
    ExternalScores,
    InternalScores,
    LabelResult,
    SeedTopic,
)
from .pipeline import fit
from .storage import ensure_directory, read_json, write_json
from .taxonomy import Taxonomy

logger = logging.getLogger(__name__)

DEFAULT_NGRAM_RANGES = ((1, 1), (1, 2))
DEFAULT_NR_TOPICS: tuple[int | str, ...] = (10, 30, 50, 70, 90, 110, 130, AUTO)
DEFAULT_MIN_TOPIC_SIZES = (3, 5, 10, 15, 20, 25)
TOP_ROWS = 10
COMPARISON_METRICS = ("nc", "nd", "ws", "ari_n1", "nmi_n1", "ari_n2", "nmi_n2")
RUN_COLUMNS = [
    "config_id",
    "repetition",
    "seed",
    "n_gram_range",
    "nr_topics",
    "min_topic_size",
    "k",
    "nc",
    "nd",
    "ws",
    "wall_time",
]


@dataclass(frozen=True)
class GridCell:
    """One hyperparameter combination of a grid."""

    n_gram_range: tuple[int, int]
    nr_topics: int | str
    min_topic_size: int

    @property
    def config_id(self) -> str:
        lo, hi = self.n_gram_range
        return f"ng{lo}-{hi}_nt{self.nr_topics}_mts{self.min_topic_size}"

    def apply(self, config: PipelineConfig, seed: int) -> PipelineConfig:
        min_samples = config.min_samples
        if min_samples is not None and min_samples > self.min_topic_size:
            min_samples = self.min_topic_size
        return replace(
            config,
            n_gram_range=self.n_gram_range,
            nr_topics=self.nr_topics,
            min_topic_size=self.min_topic_size,
            min_samples=min_samples,
            seed=seed,
        )


@dataclass(frozen=True)
class GridSpec:
    """Value lists whose cartesian product forms the search grid."""

    n_gram_ranges: tuple[tuple[int, int], ...]
    nr_topics_values: tuple[int | str, ...]
    min_topic_sizes: tuple[int, ...]
    repetitions: int = 1
    base_seed: int = 42

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "n_gram_ranges", tuple(parse_ngram_range(r) for r in self.n_gram_ranges)
        )
        object.__setattr__(
            self, "nr_topics_values", tuple(parse_nr_topics(v) for v in self.nr_topics_values)
        )
        object.__setattr__(self, "min_topic_sizes", tuple(int(v) for v in self.min_topic_sizes))
        if self.repetitions < 1:
            raise ParameterError(
                "repetitions must be at least 1", field="repetitions", value=self.repetitions
            )
        if not (self.n_gram_ranges and self.nr_topics_values and self.min_topic_sizes):
            raise ParameterError("Grid has no cells", field="grid")

    @classmethod
    def default_grid(cls, repetitions: int = 10, base_seed: int = 42) -> "GridSpec":
        """The standard search space: 2 n-gram ranges x 8 targets x 6 sizes."""
        return cls(
            DEFAULT_NGRAM_RANGES, DEFAULT_NR_TOPICS, DEFAULT_MIN_TOPIC_SIZES, repetitions, base_seed
        )

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GridSpec":
        known = {"n_gram_ranges", "nr_topics_values", "min_topic_sizes", "repetitions", "base_seed"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"Unknown grid keys: {', '.join(unknown)}", field="grid")
        try:
            return cls(
                n_gram_ranges=tuple(tuple(r) for r in data["n_gram_ranges"]),
                nr_topics_values=tuple(data["nr_topics_values"]),
                min_topic_sizes=tuple(data["min_topic_sizes"]),
                repetitions=int(data.get("repetitions", 1)),
                base_seed=int(data.get("base_seed", 42)),
            )
        except KeyError as e:
            raise ConfigurationError(f"Grid is missing '{e.args[0]}'", field="grid") from e

    def cells(self) -> list[GridCell]:
        return [
            GridCell(ngram, target, size)
            for ngram, target, size in product(
                self.n_gram_ranges, self.nr_topics_values, self.min_topic_sizes
            )
        ]


def load_grid(path: str | Path) -> GridSpec:
    data = read_json(path)
    if not isinstance(data, dict):
        raise ConfigurationError("Grid file must contain a JSON object", field="grid")
    return GridSpec.from_dict(data)


@dataclass(frozen=True)
class RunRecord:
    """Scores of one fit of one grid cell."""

    config_id: str
    repetition: int
    seed: int
    n_gram_range: str
    nr_topics: str
    min_topic_size: int
    k: int
    nc: float
    nd: float
    ws: float
    wall_time: float


@dataclass(frozen=True)
class RunFailure:
    config_id: str
    repetition: int
    error: str


@dataclass(frozen=True, eq=False)
class GridResult:
    """Successful records, enumerated failures and the per-cell aggregate."""

    records: list[RunRecord]
    failures: list[RunFailure]
    aggregate: pd.DataFrame


def _run_cell(
    corpus: Corpus,
    embeddings: EmbeddingMatrix,
    cell: GridCell,
    config: PipelineConfig,
    repetition: int,
    seed: int,
    *,
    taxonomy: Taxonomy | None,
    seed_topics: Sequence[SeedTopic] | None,
    preprocess_config: PreprocessConfig | None,
) -> RunRecord:
    started = time.perf_counter()
    train = split(corpus, config.train_fraction, seed).train()
    model, assignment = fit(
        train,
        embeddings,
        cell.apply(config, seed),
        taxonomy,
        seed_topics=seed_topics,
        preprocess_config=preprocess_config,
    )
    scores = internal_scores(model.representations, token_lists(train.documents), TOP_N)
    lo, hi = cell.n_gram_range
    return RunRecord(
        config_id=cell.config_id,
        repetition=repetition,
        seed=seed,
        n_gram_range=f"({lo},{hi})",
        nr_topics=str(cell.nr_topics),
        min_topic_size=cell.min_topic_size,
        k=assignment.k,
        nc=scores.nc,
        nd=scores.nd,
        ws=scores.ws,
        wall_time=time.perf_counter() - started,
    )


def aggregate_records(
    records: Sequence[RunRecord], failures: Sequence[RunFailure] = ()
) -> pd.DataFrame:
    """Per-cell means of k, NC, ND and WS, best WS first.

    Cells with any failed repetition are flagged ``partial``; a cell whose
    every repetition failed keeps a row with empty scores.
    """
    columns = ["config_id", "n_gram_range", "nr_topics", "min_topic_size", "runs", "k", "nc", "nd", "ws", "partial"]
    frame = pd.DataFrame([asdict(r) for r in records], columns=RUN_COLUMNS)
    failed_ids = {f.config_id for f in failures}
    if frame.empty:
        table = pd.DataFrame(columns=columns)
    else:
        table = (
            frame.groupby(["config_id", "n_gram_range", "nr_topics", "min_topic_size"], sort=True)
            .agg(runs=("repetition", "size"), k=("k", "mean"), nc=("nc", "mean"), nd=("nd", "mean"))
            .reset_index()
        )
        table["ws"] = [weighted_score(nc, nd) for nc, nd in zip(table["nc"], table["nd"])]
        table["partial"] = table["config_id"].isin(failed_ids)

    missing = sorted(failed_ids - set(table["config_id"]))
    if missing:
        empty = pd.DataFrame(
            [{"config_id": cid, "runs": 0, "partial": True} for cid in missing], columns=columns
        )
        table = empty if table.empty else pd.concat([table, empty], ignore_index=True)

    table = table.sort_values(["ws", "config_id"], ascending=[False, True], na_position="last")
    return table.reset_index(drop=True)[columns]


def run_grid(
    corpus: Corpus,
    embeddings: EmbeddingMatrix,
    grid: GridSpec,
    mode: Mode | str,
    *,
    base_config: PipelineConfig | None = None,
    taxonomy: Taxonomy | None = None,
    seed_topics: Sequence[SeedTopic] | None = None,
    preprocess_config: PreprocessConfig | None = None,
    workers: int = 1,
    show_progress: bool = False,
) -> GridResult:
    """Fit every grid cell ``grid.repetitions`` times and score each fit.

    Repetition ``r`` re-splits the corpus with seed ``base_seed + r``. A
    failed run is logged and recorded; the sweep carries on.
    """
    if workers < 1:
        raise ParameterError("workers must be at least 1", field="workers", value=workers)
    config = replace(base_config or PipelineConfig(), mode=Mode.parse(mode))
    cells = grid.cells()
    order = {cell.config_id: index for index, cell in enumerate(cells)}
    tasks = [(cell, rep, grid.base_seed + rep) for cell in cells for rep in range(grid.repetitions)]
    logger.info("Running %d cells x %d repetitions (%s)", len(cells), grid.repetitions, config.mode.value)

    records: list[RunRecord] = []
    failures: list[RunFailure] = []
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {
            pool.submit(
                _run_cell,
                corpus,
                embeddings,
                cell,
                config,
                rep,
                seed,
                taxonomy=taxonomy,
                seed_topics=seed_topics,
                preprocess_config=preprocess_config,
            ): (cell, rep)
            for cell, rep, seed in tasks
        }
        for future in tqdm(as_completed(futures), total=len(futures), desc="Grid", disable=not show_progress):
            cell, rep = futures[future]
            try:
                records.append(future.result())
            except Exception as e:
                logger.warning("Run %s rep %d failed: %s", cell.config_id, rep, e)
                failures.append(RunFailure(cell.config_id, rep, str(e)))

    records.sort(key=lambda r: (order[r.config_id], r.repetition))
    failures.sort(key=lambda f: (order[f.config_id], f.repetition))
    return GridResult(records, failures, aggregate_records(records, failures))


def compare_embedding_models(
    corpus: Corpus,
    embedding_sets: Mapping[str, EmbeddingMatrix],
    nr_topics_values: Sequence[int | str],
    *,
    base_config: PipelineConfig | None = None,
    repetitions: int = 1,
    base_seed: int = 42,
    workers: int = 1,
    show_progress: bool = False,
) -> pd.DataFrame:
    """WS curve per embedding model over a sweep of topic targets.

    Returns ``model, nr_topics, mean_ws, std_ws, runs`` rows (population
    standard deviation over repetitions).

    Raises:
        ParameterError: If fewer than two sets or no sweep values are given
        ConfigurationError: If the sets cover different documents
    """
    if len(embedding_sets) < 2:  # noqa: PLR2004
        raise ParameterError("Comparison needs at least two embedding sets", field="embeddings")
    if not nr_topics_values:
        raise ParameterError("nr_topics sweep is empty", field="nr_topics")
    reference_name, reference = next(iter(embedding_sets.items()))
    for name, matrix in embedding_sets.items():
        if set(matrix.doc_ids) != set(reference.doc_ids):
            raise ConfigurationError(
                f"Embedding set '{name}' covers different documents than '{reference_name}'",
                field="doc_ids",
            )

    config = base_config or PipelineConfig()
    grid = GridSpec(
        (config.n_gram_range,), tuple(nr_topics_values), (config.min_topic_size,), repetitions, base_seed
    )
    rows = []
    for name, matrix in embedding_sets.items():
        logger.info("Scoring embedding model %s", name)
        result = run_grid(
            corpus, matrix, grid, Mode.UNSUPERVISED, base_config=config, workers=workers, show_progress=show_progress
        )
        for target in grid.nr_topics_values:
            ws = np.array([r.ws for r in result.records if r.nr_topics == str(target)])
            rows.append(
                {
                    "model": name,
                    "nr_topics": str(target),
                    "mean_ws": float(ws.mean()) if ws.size else math.nan,
                    "std_ws": float(ws.std()) if ws.size else math.nan,
                    "runs": int(ws.size),
                }
            )
    return pd.DataFrame(rows, columns=["model", "nr_topics", "mean_ws", "std_ws", "runs"])


def label_levels(labels: Mapping[str, LabelResult]) -> tuple[dict[str, str], dict[str, str]]:
    """Split label results into N1 and N2 lookups by doc_id."""
    return (
        {doc_id: label.n1 for doc_id, label in labels.items()},
        {doc_id: label.n2 for doc_id, label in labels.items()},
    )


def _score_level(level: str, assignment: ClusterAssignment, labels: Mapping[str, str]) -> ExternalScores:
    topics, gold = [], []
    excluded = {"outlier": 0, "no_match": 0, "unlabeled": 0}
    for doc_id, topic in zip(assignment.doc_ids, assignment.labels):
        label = labels.get(doc_id)
        if topic == OUTLIER_TOPIC:
            excluded["outlier"] += 1
        elif label is None:
            excluded["unlabeled"] += 1
        elif label == NO_MATCH:
            excluded["no_match"] += 1
        else:
            topics.append(int(topic))
            gold.append(label)
    if len(topics) < 2:  # noqa: PLR2004
        raise EvaluationError(
            f"Only {len(topics)} documents remain for {level} evaluation",
            field=level,
            details={"excluded": excluded},
        )
    scores = external_scores(level, topics, gold)
    logger.info("%s: ARI %.4f, NMI %.4f over %d documents", level, scores.ari, scores.nmi, len(topics))
    return replace(scores, excluded=excluded)


def evaluate_external(
    assignment: ClusterAssignment,
    labels_n1: Mapping[str, str],
    labels_n2: Mapping[str, str],
) -> tuple[ExternalScores, ExternalScores]:
    """ARI, NMI and contingency of topics against both taxonomy levels.

    Outlier documents, ``no_match`` labels and unlabeled documents are left
    out, and the exclusions are counted per level.

    Raises:
        EvaluationError: If fewer than two documents overlap at a level
    """
    return _score_level("N1", assignment, labels_n1), _score_level("N2", assignment, labels_n2)


def comparison_values(
    internal: InternalScores, external: Sequence[ExternalScores] = ()
) -> dict[str, float]:
    values = {"nc": internal.nc, "nd": internal.nd, "ws": internal.ws}
    for scores in external:
        level = scores.level.lower()
        values[f"ari_{level}"] = scores.ari
        values[f"nmi_{level}"] = scores.nmi
    return values


def build_comparison(unsup: Mapping[str, float], semi: Mapping[str, float]) -> pd.DataFrame:
    """``metric, unsup, semisup, diff, delta_pct`` with Δ% relative to unsup."""
    shared = [m for m in COMPARISON_METRICS if m in unsup and m in semi]
    shared += sorted((set(unsup) & set(semi)) - set(COMPARISON_METRICS))
    rows = []
    for metric in shared:
        base, guided = float(unsup[metric]), float(semi[metric])
        rows.append(
            {
                "metric": metric,
                "unsup": base,
                "semisup": guided,
                "diff": guided - base,
                "delta_pct": (guided - base) / base * 100.0 if base != 0 else math.nan,
            }
        )
    return pd.DataFrame(rows, columns=["metric", "unsup", "semisup", "diff", "delta_pct"])


@dataclass(frozen=True, eq=False)
class ReportScores:
    """Evaluation results that accompany a run table in a report."""

    internal: InternalScores | None = None
    external: tuple[ExternalScores, ...] = ()
    comparison: pd.DataFrame | None = None
    curves: pd.DataFrame | None = None
    documents: pd.DataFrame | None = None
    extra: dict[str, Any] = field(default_factory=dict)


def _to_csv(frame: pd.DataFrame, path: Path) -> None:
    try:
        frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    except OSError as e:
        raise FileSystemError(f"Failed to write report table: {e}", path=str(path)) from e


def write_evaluation(scores: ReportScores, out_dir: str | Path) -> Path:
    """Write the score files of a report; usable without grid records."""
    directory = ensure_directory(out_dir)
    for external in scores.external:
        level = external.level.lower()
        write_contingency(external.contingency, directory / f"contingency_{level}_counts.csv")
        write_contingency(
            external.contingency, directory / f"contingency_{level}_rownorm.csv", normalized="row"
        )
        write_contingency(
            external.contingency, directory / f"contingency_{level}_colnorm.csv", normalized="column"
        )
    if scores.comparison is not None:
        _to_csv(scores.comparison, directory / "comparison.csv")
    if scores.curves is not None:
        _to_csv(scores.curves, directory / "curves.csv")
    if scores.documents is not None:
        _to_csv(scores.documents, directory / "documents.csv")
    payload = scores_to_dict(scores.internal, scores.external)
    if scores.comparison is not None:
        payload["comparison"] = scores.comparison.to_dict(orient="records")
    payload.update(scores.extra)
    write_json(directory / "scores.json", payload)
    return directory


def emit_report(
    records: Sequence[RunRecord],
    scores: ReportScores | None,
    out_dir: str | Path,
    *,
    failures: Sequence[RunFailure] = (),
) -> Path:
    """Write runs.csv, top10.csv and every score file into ``out_dir``.

    Output depends only on the arguments, so re-emitting saved records
    reproduces the same bytes.

    Raises:
        ParameterError: If ``records`` is empty
        FileSystemError: If the directory cannot be written
    """
    if not records:
        raise ParameterError("Cannot build a report from zero runs", field="records")
    directory = ensure_directory(out_dir)
    _to_csv(pd.DataFrame([asdict(r) for r in records], columns=RUN_COLUMNS), directory / "runs.csv")
    _to_csv(aggregate_records(records, failures).head(TOP_ROWS), directory / "top10.csv")
    if failures:
        _to_csv(pd.DataFrame([asdict(f) for f in failures]), directory / "failures.csv")
    write_evaluation(scores or ReportScores(), directory)
    logger.info("Report with %d runs written to %s", len(records), directory)
    return directory


def read_runs(path: str | Path) -> list[RunRecord]:
    """Load records from a runs.csv written by :func:`emit_report`."""
    source = Path(path)
    try:
        frame = pd.read_csv(
            source,
            dtype={"config_id": str, "n_gram_range": str, "nr_topics": str},
            float_precision="round_trip",
        )
    except OSError as e:
        raise FileSystemError(f"Cannot read runs table: {e}", path=str(source)) from e
    missing = sorted(set(RUN_COLUMNS) - set(frame.columns))
    if missing:
        raise ConfigurationError(f"runs table lacks columns {missing}", field="runs")
    return [
        RunRecord(
            config_id=str(row["config_id"]),
            repetition=int(row["repetition"]),
            seed=int(row["seed"]),
            n_gram_range=str(row["n_gram_range"]),
            nr_topics=str(row["nr_topics"]),
            min_topic_size=int(row["min_topic_size"]),
            k=int(row["k"]),
            nc=float(row["nc"]),
            nd=float(row["nd"]),
            ws=float(row["ws"]),
            wall_time=float(row["wall_time"]),
        )
        for row in frame.to_dict(orient="records")
    ]
