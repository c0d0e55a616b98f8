# ABOUTME: Command-line interface for civitopic built on the Click framework
# ABOUTME: Exposes corpus preparation, embedding, fitting, labeling and evaluation commands
# SPDX-License-Identifier: MIT

import logging
from dataclasses import replace
from pathlib import Path
from typing import Any

import click

from .clustering import read_assignment, write_assignment
from .config import (
    CACHE_DIR_ENV,
    EMBEDDING_ENDPOINT_ENV,
    LLM_ENDPOINT_ENV,
    EmbeddingServiceConfig,
    LlmConfig,
    Mode,
    PipelineConfig,
    default_cache_dir,
    load_pipeline_config,
)
from .corpus import (
    RemovalReason,
    dedupe_and_filter,
    load_corpus,
    load_preprocess_config,
    preprocess,
    split,
    token_lists,
    write_corpus,
    write_removal_report,
    write_split,
)
from .embeddings import build_seed_topics, embed_seed_words, fetch_embeddings, load_embeddings, save_embeddings
from .exceptions import CivitopicError, ParameterError
from .experiments import (
    GridSpec,
    ReportScores,
    build_comparison,
    compare_embedding_models,
    comparison_values,
    emit_report,
    evaluate_external,
    label_levels,
    load_grid,
    run_grid,
    write_evaluation,
)
from .llm import apply_topic_labels, label_documents, name_topics, read_labels, write_labels
from .metrics import internal_scores
from .models import Corpus, SeedTopic, Split
from .pipeline import document_info, fit, load_bundle, save_bundle, transform
from .storage import ensure_directory
from .taxonomy import Taxonomy, load_taxonomy
from .topics import write_topic_table

logger = logging.getLogger(__name__)


def _handle_error(e: Exception) -> None:
    """Report errors consistently and abort."""
    if isinstance(e, CivitopicError):
        click.echo(f"✗ {e.user_message()}", err=True)
    else:
        click.echo(f"✗ Unexpected error: {e}", err=True)
    raise click.Abort from e


def _echo(ctx: click.Context, message: str) -> None:
    if not ctx.obj["quiet"]:
        click.echo(message)


def _pipeline_config(config_path: str | None, **overrides: Any) -> PipelineConfig:
    config = load_pipeline_config(config_path) if config_path else PipelineConfig()
    values = {key: value for key, value in overrides.items() if value is not None}
    return replace(config, **values) if values else config


def _prepared_corpus(corpus_path: str, config: PipelineConfig) -> Corpus:
    preprocess_config = load_preprocess_config(
        config.stopwords, config.lemmas, config.min_chars_after_clean
    )
    return preprocess(load_corpus(corpus_path), preprocess_config)


def _training_documents(corpus: Corpus, config: PipelineConfig) -> Corpus:
    """Saved train split when the corpus carries one, otherwise a fresh split."""
    if any(doc.split is Split.TRAIN for doc in corpus.documents):
        return corpus.train()
    return split(corpus, config.train_fraction, config.seed).train()


def _seed_topics(
    taxonomy: Taxonomy,
    seed_vectors: str | None,
    config: PipelineConfig,
    embedding_endpoint: str | None,
) -> list[SeedTopic]:
    if config.blend_threshold > 1.0:
        return []
    if seed_vectors:
        return build_seed_topics(taxonomy.seed_lists(), load_embeddings(seed_vectors))
    service = EmbeddingServiceConfig.from_env(endpoint=embedding_endpoint)
    return embed_seed_words(taxonomy.seed_lists(), service)


def _llm_config(
    endpoint: str | None,
    model: str | None,
    temperature: float | None,
    retries: int | None,
    contract: str | None,
    cache_dir: str | None,
) -> LlmConfig:
    return LlmConfig.from_env(
        endpoint=endpoint,
        model_name=model,
        temperature=temperature,
        retries=retries,
        contract=contract,
        cache_dir=cache_dir,
    )


llm_options = [
    click.option("--endpoint", help=f"LLM endpoint URL (overrides {LLM_ENDPOINT_ENV})"),
    click.option("--model", help="LLM model name"),
    click.option("--temperature", type=float, help="Sampling temperature (default 0.2)"),
    click.option("--retries", type=int, help="Retries per request after the first attempt"),
    click.option("--contract", type=click.Choice(["generate", "chat"]), help="Endpoint request shape"),
    click.option("--cache-dir", help=f"Response cache directory (overrides {CACHE_DIR_ENV})"),
]


def _with_llm_options(func: Any) -> Any:
    for option in reversed(llm_options):
        func = option(func)
    return func


@click.group()
@click.option("--quiet", is_flag=True, help="Only report errors")
@click.option("--verbose", is_flag=True, help="Show debug logging")
@click.version_option(package_name="civitopic")
@click.pass_context
def main(ctx: click.Context, *, quiet: bool, verbose: bool) -> None:
    """Seeded topic modeling and taxonomy-aligned evaluation of citizen proposals.

    Remote services are configured by flag, then environment variable
    (CIVITOPIC_LLM_ENDPOINT, CIVITOPIC_LLM_API_KEY, CIVITOPIC_EMBEDDING_ENDPOINT,
    CIVITOPIC_CACHE_DIR), then built-in default.
    """
    level = logging.DEBUG if verbose else logging.ERROR if quiet else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    ctx.ensure_object(dict)
    ctx.obj["quiet"] = quiet


@main.command()
@click.option("--corpus", "corpus_path", required=True, help="Corpus CSV or JSONL")
@click.option("--out", "out_dir", required=True, help="Output directory")
@click.option("--config", "config_path", help="Pipeline config JSON")
@click.option("--train-fraction", type=float, help="Share of documents used for training")
@click.option("--seed", type=int, help="Split seed")
@click.option("--no-stratify", is_flag=True, help="Ignore declared categories when splitting")
@click.pass_context
def prepare(
    ctx: click.Context,
    corpus_path: str,
    out_dir: str,
    config_path: str | None,
    train_fraction: float | None,
    seed: int | None,
    *,
    no_stratify: bool,
) -> None:
    """Deduplicate, clean and split a corpus."""
    try:
        config = _pipeline_config(config_path, train_fraction=train_fraction, seed=seed)
        _echo(ctx, f"→ Preparing {corpus_path}")
        deduped, report = dedupe_and_filter(load_corpus(corpus_path))
        preprocess_config = load_preprocess_config(
            config.stopwords, config.lemmas, config.min_chars_after_clean
        )
        cleaned = preprocess(deduped, preprocess_config)
        kept = set(cleaned.ids)
        report.entries.extend(
            (doc_id, RemovalReason.EMPTY) for doc_id in deduped.ids if doc_id not in kept
        )
        prepared = split(cleaned, config.train_fraction, config.seed, stratify=not no_stratify)

        directory = ensure_directory(out_dir)
        write_corpus(prepared, directory / "corpus.csv")
        write_removal_report(report, directory / "removed.csv")
        write_split(prepared, directory / "split.csv")
        _echo(
            ctx,
            f"✓ {len(prepared.train())} train / {len(prepared.test())} test documents, "
            f"{len(report)} removed",
        )
    except Exception as e:
        _handle_error(e)


@main.command()
@click.option("--corpus", "corpus_path", required=True, help="Corpus CSV or JSONL")
@click.option("--out", "out_path", required=True, help="Embedding file (.bin or text)")
@click.option("--endpoint", help=f"Embedding service URL (overrides {EMBEDDING_ENDPOINT_ENV})")
@click.option("--model", help="Embedding model name")
@click.option("--batch-size", type=int, help="Texts per request")
@click.option("--cache-dir", help=f"Vector cache directory (overrides {CACHE_DIR_ENV})")
@click.pass_context
def embed(
    ctx: click.Context,
    corpus_path: str,
    out_path: str,
    endpoint: str | None,
    model: str | None,
    batch_size: int | None,
    cache_dir: str | None,
) -> None:
    """Embed every document through the embedding service."""
    try:
        service = EmbeddingServiceConfig.from_env(
            endpoint=endpoint, model_name=model, batch_size=batch_size, cache_dir=cache_dir
        )
        corpus = load_corpus(corpus_path)
        _echo(ctx, f"→ Embedding {len(corpus)} documents with {service.model_name}")
        matrix = fetch_embeddings(
            [doc.raw_text for doc in corpus.documents],
            service,
            doc_ids=corpus.ids,
            cache_dir=cache_dir or default_cache_dir(),
            show_progress=not ctx.obj["quiet"],
        )
        save_embeddings(matrix, out_path)
        _echo(ctx, f"✓ Saved {len(matrix)}x{matrix.dimension} embeddings to {out_path}")
    except Exception as e:
        _handle_error(e)


@main.command(name="fit")
@click.option("--mode", type=click.Choice(["unsup", "semi", "unsupervised", "semisupervised"]), help="Topic-modeling mode")
@click.option("--config", "config_path", help="Pipeline config JSON")
@click.option("--corpus", "corpus_path", required=True, help="Prepared corpus CSV or JSONL")
@click.option("--embeddings", "embeddings_path", required=True, help="Document embeddings")
@click.option("--taxonomy", "taxonomy_path", help="Taxonomy JSON (semisupervised mode)")
@click.option("--seed-vectors", help="Vectors whose ids are the seed phrases")
@click.option("--embedding-endpoint", help="Embedding service for seed phrases")
@click.option("--out", "out_dir", required=True, help="Model bundle directory")
@click.pass_context
def fit_command(
    ctx: click.Context,
    mode: str | None,
    config_path: str | None,
    corpus_path: str,
    embeddings_path: str,
    taxonomy_path: str | None,
    seed_vectors: str | None,
    embedding_endpoint: str | None,
    out_dir: str,
) -> None:
    """Fit a topic model on the training split and save its bundle."""
    try:
        config = _pipeline_config(config_path, mode=Mode.parse(mode) if mode else None)
        train = _training_documents(_prepared_corpus(corpus_path, config), config)
        embeddings = load_embeddings(embeddings_path)

        taxonomy = None
        seed_topics: list[SeedTopic] = []
        if config.semisupervised:
            if not taxonomy_path:
                raise ParameterError("Semisupervised mode requires --taxonomy", field="taxonomy")
            taxonomy = load_taxonomy(taxonomy_path)
            seed_topics = _seed_topics(taxonomy, seed_vectors, config, embedding_endpoint)
        elif taxonomy_path:
            click.echo("⚠ --taxonomy is ignored in unsupervised mode", err=True)

        _echo(ctx, f"→ Fitting {config.mode.value} model on {len(train)} documents")
        preprocess_config = load_preprocess_config(
            config.stopwords, config.lemmas, config.min_chars_after_clean
        )
        model, assignment = fit(
            train,
            embeddings,
            config,
            taxonomy,
            seed_topics=seed_topics,
            preprocess_config=preprocess_config,
        )
        save_bundle(model, assignment, out_dir)
        _echo(ctx, f"✓ {assignment.k} topics, bundle saved to {out_dir}")
    except Exception as e:
        _handle_error(e)


@main.command(name="transform")
@click.option("--run", "run_dir", required=True, help="Model bundle directory")
@click.option("--corpus", "corpus_path", required=True, help="Prepared corpus CSV or JSONL")
@click.option("--embeddings", "embeddings_path", required=True, help="Document embeddings")
@click.option("--out", "out_path", required=True, help="Assignment CSV")
@click.pass_context
def transform_command(
    ctx: click.Context, run_dir: str, corpus_path: str, embeddings_path: str, out_path: str
) -> None:
    """Assign test documents (or all, without a saved split) to fitted topics."""
    try:
        model, _ = load_bundle(run_dir)
        corpus = _prepared_corpus(corpus_path, model.config)
        if any(doc.split is Split.TEST for doc in corpus.documents):
            corpus = corpus.test()
        assignment = transform(model, corpus, load_embeddings(embeddings_path))
        write_assignment(assignment, out_path)
        _echo(ctx, f"✓ Assigned {len(assignment)} documents to {out_path}")
    except Exception as e:
        _handle_error(e)


@main.command()
@click.option("--corpus", "corpus_path", required=True, help="Corpus CSV or JSONL")
@click.option("--taxonomy", "taxonomy_path", required=True, help="Taxonomy JSON")
@click.option("--out", "out_path", required=True, help="Labels CSV")
@_with_llm_options
@click.pass_context
def label(
    ctx: click.Context,
    corpus_path: str,
    taxonomy_path: str,
    out_path: str,
    endpoint: str | None,
    model: str | None,
    temperature: float | None,
    retries: int | None,
    contract: str | None,
    cache_dir: str | None,
) -> None:
    """Label documents with N1/N2 taxonomy terms through the LLM."""
    try:
        config = _llm_config(endpoint, model, temperature, retries, contract, cache_dir)
        corpus = load_corpus(corpus_path)
        _echo(ctx, f"→ Labeling {len(corpus)} documents with {config.model_name}")
        labels = label_documents(
            list(corpus.documents),
            load_taxonomy(taxonomy_path),
            config,
            show_progress=not ctx.obj["quiet"],
        )
        write_labels(labels, out_path)
        _echo(ctx, f"✓ Labels written to {out_path}")
    except Exception as e:
        _handle_error(e)


@main.command(name="name-topics")
@click.option("--run", "run_dir", required=True, help="Model bundle directory")
@_with_llm_options
@click.pass_context
def name_topics_command(
    ctx: click.Context,
    run_dir: str,
    endpoint: str | None,
    model: str | None,
    temperature: float | None,
    retries: int | None,
    contract: str | None,
    cache_dir: str | None,
) -> None:
    """Add short LLM labels to the bundle's topic table."""
    try:
        fitted, _ = load_bundle(run_dir)
        config = _llm_config(endpoint, model, temperature, retries, contract, cache_dir)
        names = name_topics(fitted.representations, config)
        write_topic_table(
            apply_topic_labels(fitted.representations, names), Path(run_dir) / "topics.csv"
        )
        _echo(ctx, f"✓ Named {len(names)} topics")
    except Exception as e:
        _handle_error(e)


@main.command()
@click.option("--grid", "grid_path", help="Grid JSON (default: the standard search space)")
@click.option("--mode", type=click.Choice(["unsup", "semi", "unsupervised", "semisupervised"]), default="unsup")
@click.option("--config", "config_path", help="Base pipeline config JSON")
@click.option("--corpus", "corpus_path", required=True, help="Prepared corpus CSV or JSONL")
@click.option("--embeddings", "embeddings_path", required=True, help="Document embeddings")
@click.option("--taxonomy", "taxonomy_path", help="Taxonomy JSON (semisupervised mode)")
@click.option("--seed-vectors", help="Vectors whose ids are the seed phrases")
@click.option("--repetitions", type=int, help="Override the grid's repetition count")
@click.option("--workers", type=int, default=1, show_default=True, help="Concurrent fits")
@click.option("--out", "out_dir", required=True, help="Report directory")
@click.pass_context
def grid(
    ctx: click.Context,
    grid_path: str | None,
    mode: str,
    config_path: str | None,
    corpus_path: str,
    embeddings_path: str,
    taxonomy_path: str | None,
    seed_vectors: str | None,
    repetitions: int | None,
    workers: int,
    out_dir: str,
) -> None:
    """Grid-search hyperparameters and report the best cells by WS."""
    try:
        config = _pipeline_config(config_path, mode=Mode.parse(mode))
        spec = load_grid(grid_path) if grid_path else GridSpec.default_grid()
        if repetitions is not None:
            spec = replace(spec, repetitions=repetitions)
        corpus = _prepared_corpus(corpus_path, config)

        taxonomy = None
        seed_topics: list[SeedTopic] = []
        if config.semisupervised:
            if not taxonomy_path:
                raise ParameterError("Semisupervised mode requires --taxonomy", field="taxonomy")
            taxonomy = load_taxonomy(taxonomy_path)
            seed_topics = _seed_topics(taxonomy, seed_vectors, config, None)

        _echo(ctx, f"→ Running {len(spec.cells())} cells x {spec.repetitions} repetitions")
        result = run_grid(
            corpus,
            load_embeddings(embeddings_path),
            spec,
            config.mode,
            base_config=config,
            taxonomy=taxonomy,
            seed_topics=seed_topics,
            preprocess_config=load_preprocess_config(
                config.stopwords, config.lemmas, config.min_chars_after_clean
            ),
            workers=workers,
            show_progress=not ctx.obj["quiet"],
        )
        if result.failures:
            click.echo(f"⚠ {len(result.failures)} runs failed", err=True)
        emit_report(result.records, None, out_dir, failures=result.failures)
        _echo(ctx, f"✓ {len(result.records)} runs reported in {out_dir}")
    except Exception as e:
        _handle_error(e)


def _parse_embedding_sets(value: str) -> dict[str, str]:
    sets: dict[str, str] = {}
    for item in value.split(","):
        name, sep, path = item.partition("=")
        if not sep or not name.strip() or not path.strip():
            raise ParameterError("Use name=path pairs separated by commas", field="embeddings", value=item)
        sets[name.strip()] = path.strip()
    return sets


@main.command()
@click.option("--embeddings", "embeddings_spec", required=True, help="name=path pairs, comma separated")
@click.option("--corpus", "corpus_path", required=True, help="Prepared corpus CSV or JSONL")
@click.option("--config", "config_path", help="Base pipeline config JSON")
@click.option("--nr-topics", default="10,30,50,70,90,110,130,auto", show_default=True, help="Sweep values")
@click.option("--repetitions", type=int, default=1, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True, help="Concurrent fits")
@click.option("--out", "out_dir", required=True, help="Report directory")
@click.pass_context
def compare(
    ctx: click.Context,
    embeddings_spec: str,
    corpus_path: str,
    config_path: str | None,
    nr_topics: str,
    repetitions: int,
    workers: int,
    out_dir: str,
) -> None:
    """Compare embedding models by their WS curve over topic targets."""
    try:
        config = _pipeline_config(config_path)
        sets = {name: load_embeddings(path) for name, path in _parse_embedding_sets(embeddings_spec).items()}
        sweep = [value.strip() for value in nr_topics.split(",") if value.strip()]
        _echo(ctx, f"→ Comparing {len(sets)} embedding models over {len(sweep)} targets")
        curves = compare_embedding_models(
            _prepared_corpus(corpus_path, config),
            sets,
            sweep,
            base_config=config,
            repetitions=repetitions,
            base_seed=config.seed,
            workers=workers,
            show_progress=not ctx.obj["quiet"],
        )
        write_evaluation(ReportScores(curves=curves), out_dir)
        _echo(ctx, f"✓ Curves written to {Path(out_dir) / 'curves.csv'}")
    except Exception as e:
        _handle_error(e)


def _evaluate_run(
    run_dir: str,
    labels_path: str,
    corpus: Corpus | None,
    assignment_path: str | None,
) -> tuple[ReportScores, dict[str, float]]:
    model, assignment = load_bundle(run_dir)
    if assignment_path:
        assignment = read_assignment(assignment_path)
    labels = read_labels(labels_path)
    externals = evaluate_external(assignment, *label_levels(labels))

    internal = None
    documents = None
    if corpus is not None:
        train_ids = set(read_assignment(Path(run_dir) / "clusters.csv").doc_ids)
        train_docs = [doc for doc in corpus.documents if doc.id in train_ids]
        internal = internal_scores(model.representations, token_lists(train_docs))
        documents = document_info(corpus, assignment, labels)
    values = comparison_values(internal, externals) if internal else {
        f"{metric}_{s.level.lower()}": getattr(s, metric) for s in externals for metric in ("ari", "nmi")
    }
    scores = ReportScores(internal=internal, external=externals, documents=documents)
    return scores, values


@main.command(name="eval")
@click.option("--run", "run_dir", required=True, help="Model bundle directory")
@click.option("--labels", "labels_path", required=True, help="Labels CSV from `civitopic label`")
@click.option("--out", "out_dir", required=True, help="Report directory")
@click.option("--corpus", "corpus_path", help="Prepared corpus, enables NC/ND/WS and documents.csv")
@click.option("--assignment", "assignment_path", help="Assignment CSV from `civitopic transform`")
@click.option("--baseline", "baseline_dir", help="Unsupervised bundle to compare against")
@click.option("--baseline-assignment", help="Assignment CSV of the baseline run")
@click.pass_context
def eval_command(
    ctx: click.Context,
    run_dir: str,
    labels_path: str,
    out_dir: str,
    corpus_path: str | None,
    assignment_path: str | None,
    baseline_dir: str | None,
    baseline_assignment: str | None,
) -> None:
    """Score a run against LLM labels (ARI, NMI, contingency tables)."""
    try:
        config = load_bundle(run_dir)[0].config
        corpus = _prepared_corpus(corpus_path, config) if corpus_path else None
        scores, values = _evaluate_run(run_dir, labels_path, corpus, assignment_path)
        if baseline_dir:
            _, baseline_values = _evaluate_run(baseline_dir, labels_path, corpus, baseline_assignment)
            scores = replace(scores, comparison=build_comparison(baseline_values, values))
        write_evaluation(scores, out_dir)
        for external in scores.external:
            _echo(ctx, f"✓ {external.level}: ARI {external.ari:.4f}, NMI {external.nmi:.4f}")
    except Exception as e:
        _handle_error(e)


if __name__ == "__main__":
    main()
