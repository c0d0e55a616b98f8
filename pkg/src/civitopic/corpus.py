# ABOUTME: Corpus ingestion, text normalization, deduplication and train/test split
# ABOUTME: Reads CSV or JSONL proposals and produces reproducible preprocessed corpora
# SPDX-License-Identifier: MIT

import logging
import math
import re
import unicodedata
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd

from .exceptions import FileSystemError, FormatError, ParameterError, SchemaError, ValidationError
from .models import Corpus, Document, Split

logger = logging.getLogger(__name__)

REQUIRED_FIELDS = ("id", "text")
STRATIFY_COVERAGE = 0.9

_NON_WORD = re.compile(r"[^\w\s]|_")
_WHITESPACE = re.compile(r"\s+")


class CorpusFormat(Enum):
    """Supported corpus file formats."""

    CSV = "csv"
    JSONL = "jsonl"


class RemovalReason(Enum):
    DUPLICATE = "duplicate"
    EMPTY = "empty"


@dataclass(frozen=True)
class PreprocessConfig:
    """Lexicons and thresholds applied by :func:`preprocess`."""

    stopword_list: frozenset[str] = frozenset()
    lemma_lexicon: Mapping[str, str] = field(default_factory=dict)
    min_chars_after_clean: int = 1

    def __post_init__(self) -> None:
        if self.min_chars_after_clean < 0:
            msg = "min_chars_after_clean must be non-negative"
            raise ParameterError(msg, field="min_chars_after_clean")
        uppercase = [w for w in self.stopword_list if w != w.lower()]
        uppercase += [w for w in self.lemma_lexicon if w != w.lower()]
        if uppercase:
            msg = "Lexicon entries must be lowercase"
            raise ValidationError(msg, field="lexicon", value=sorted(uppercase)[:5])


@dataclass
class RemovalReport:
    """Ids dropped by :func:`dedupe_and_filter` and why."""

    entries: list[tuple[str, RemovalReason]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def count(self, reason: RemovalReason) -> int:
        return sum(1 for _, r in self.entries if r is reason)


def detect_corpus_format(path: str | Path) -> CorpusFormat:
    """Pick the corpus format from the file suffix."""
    suffix = Path(path).suffix.lower()
    if suffix == ".csv":
        return CorpusFormat.CSV
    if suffix in (".jsonl", ".json", ".ndjson"):
        return CorpusFormat.JSONL
    raise ValidationError(
        f"Cannot infer corpus format from '{path}'",
        field="format",
        details={"suggestion": "Use a .csv or .jsonl file, or pass the format explicitly"},
    )


def _read_frame(source: Path, corpus_format: CorpusFormat) -> pd.DataFrame:
    try:
        if corpus_format is CorpusFormat.CSV:
            return pd.read_csv(source, dtype=str, keep_default_na=False, encoding="utf-8")
        if not source.read_text(encoding="utf-8").strip():
            return pd.DataFrame(columns=list(REQUIRED_FIELDS))
        return pd.read_json(source, lines=True, dtype=False, convert_dates=False)
    except pd.errors.EmptyDataError:
        return pd.DataFrame()
    except (pd.errors.ParserError, ValueError) as e:
        msg = f"Cannot parse corpus file: {e}"
        raise FormatError(msg, field="corpus", details={"path": str(source)}) from e
    except OSError as e:
        msg = f"Cannot read corpus file: {e}"
        raise FileSystemError(msg, path=str(source)) from e


def _cell(value: object) -> str:
    if value is None or (not isinstance(value, str) and pd.isna(value)):
        return ""
    return str(value)


def load_corpus(path: str | Path, corpus_format: CorpusFormat | None = None) -> Corpus:
    """Read one Document per row, in file order.

    Optional ``process`` and ``category`` columns fill the matching fields; an
    optional ``split`` column (as written by ``write_corpus``) restores a saved
    train/test assignment.

    Raises:
        SchemaError: If ``id`` or ``text`` is missing, or an id repeats
        FileSystemError: If the file cannot be read
    """
    source = Path(path)
    if not source.is_file():
        raise FileSystemError("Corpus file not found", path=str(source))
    frame = _read_frame(source, corpus_format or detect_corpus_format(source))

    for required in REQUIRED_FIELDS:
        if required not in frame.columns:
            raise SchemaError(
                f"Corpus has no '{required}' column",
                field=required,
                details={"path": str(source)},
            )

    documents: list[Document] = []
    seen: set[str] = set()
    for row in frame.to_dict(orient="records"):
        doc_id = _cell(row["id"])
        if not doc_id:
            raise SchemaError("Row without an id", field="id", details={"row": len(documents)})
        if doc_id in seen:
            raise SchemaError(f"Duplicate document id '{doc_id}'", field="id", value=doc_id)
        seen.add(doc_id)
        category = _cell(row.get("category"))
        split_value = _cell(row.get("split")) or Split.UNASSIGNED.value
        try:
            split_tag = Split(split_value)
        except ValueError as e:
            msg = f"Unknown split '{split_value}' for document '{doc_id}'"
            raise SchemaError(msg, field="split", value=split_value) from e
        documents.append(
            Document(
                id=doc_id,
                raw_text=_cell(row["text"]),
                process=_cell(row.get("process")),
                declared_category=category or None,
                split=split_tag,
            )
        )

    logger.info("Loaded %d documents from %s", len(documents), source)
    return Corpus(documents=tuple(documents))


def normalize_text(text: str) -> str:
    """NFC-compose, lowercase, drop punctuation and collapse whitespace.

    >>> normalize_text("Cidadãos,  unidos!")
    'cidadãos unidos'
    """
    text = _NON_WORD.sub("", unicodedata.normalize("NFC", text).lower())
    return _WHITESPACE.sub(" ", text).strip()


def tokenize(clean_text: str, config: PreprocessConfig) -> tuple[str, ...]:
    """Stopword-filtered, lemmatized tokens of an already normalized text."""
    lexicon = config.lemma_lexicon
    return tuple(
        lexicon.get(token, token)
        for token in clean_text.split()
        if token not in config.stopword_list
    )


def preprocess(corpus: Corpus, config: PreprocessConfig) -> Corpus:
    """Fill clean_text and token_list; drop documents left empty.

    Always starts from raw_text, so applying it twice gives the same result.
    """
    kept: list[Document] = []
    dropped = 0
    for doc in corpus.documents:
        clean = normalize_text(doc.raw_text)
        tokens = tokenize(clean, config)
        if len(clean) < config.min_chars_after_clean or not tokens:
            dropped += 1
            continue
        kept.append(replace(doc, clean_text=clean, token_list=tokens))

    if dropped:
        logger.info("Preprocessing dropped %d of %d documents", dropped, len(corpus))
    return corpus.with_documents(kept)


def _dedupe_key(raw_text: str) -> str:
    return " ".join(unicodedata.normalize("NFC", raw_text).lower().split())


def dedupe_and_filter(corpus: Corpus) -> tuple[Corpus, RemovalReport]:
    """Keep the first occurrence of each normalized text and drop empty ones."""
    report = RemovalReport()
    seen: set[str] = set()
    kept: list[Document] = []
    for doc in corpus.documents:
        key = _dedupe_key(doc.raw_text)
        if not key:
            report.entries.append((doc.id, RemovalReason.EMPTY))
        elif key in seen:
            report.entries.append((doc.id, RemovalReason.DUPLICATE))
        else:
            seen.add(key)
            kept.append(doc)

    logger.info(
        "Deduplication kept %d documents (%d duplicates, %d empty)",
        len(kept),
        report.count(RemovalReason.DUPLICATE),
        report.count(RemovalReason.EMPTY),
    )
    return corpus.with_documents(kept), report


def train_size(n_documents: int, train_fraction: float) -> int:
    """Number of training documents: ``train_fraction * n`` rounded half up."""
    return min(n_documents, math.floor(train_fraction * n_documents + 0.5))


def _allocate(sizes: dict[str, int], n_train: int, n_total: int) -> dict[str, int]:
    """Largest-remainder allocation of ``n_train`` slots across strata."""
    quotas = {key: size * n_train / n_total for key, size in sizes.items()}
    allocation = {key: math.floor(q) for key, q in quotas.items()}
    leftover = n_train - sum(allocation.values())
    by_remainder = sorted(quotas, key=lambda key: (-(quotas[key] - allocation[key]), key))
    for key in by_remainder[:leftover]:
        allocation[key] += 1
    return allocation


def split(
    corpus: Corpus,
    train_fraction: float,
    seed: int,
    *,
    stratify: bool = True,
) -> Corpus:
    """Assign every document to train or test, deterministically for ``seed``.

    When at least 90% of documents declare a category (and ``stratify`` is on)
    each category contributes proportionally to the training set. Document
    order is preserved.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ParameterError(
            "train_fraction must lie strictly between 0 and 1",
            field="train_fraction",
            value=train_fraction,
        )

    documents = corpus.documents
    n_total = len(documents)
    n_train = train_size(n_total, train_fraction)
    rng = np.random.default_rng(seed)
    train_rows: set[int] = set()

    declared = sum(1 for doc in documents if doc.declared_category)
    if stratify and n_total and declared / n_total >= STRATIFY_COVERAGE:
        strata: dict[str, list[int]] = {}
        for row, doc in enumerate(documents):
            strata.setdefault(doc.declared_category or "", []).append(row)
        allocation = _allocate({k: len(v) for k, v in strata.items()}, n_train, n_total)
        for key in sorted(strata):
            members = np.array(strata[key])
            chosen = rng.permutation(members)[: allocation[key]]
            train_rows.update(int(row) for row in chosen)
        logger.debug("Stratified split over %d categories", len(strata))
    else:
        train_rows.update(int(row) for row in rng.permutation(n_total)[:n_train])

    assigned = [
        replace(doc, split=Split.TRAIN if row in train_rows else Split.TEST)
        for row, doc in enumerate(documents)
    ]
    logger.info("Split %d documents: %d train / %d test", n_total, n_train, n_total - n_train)
    return replace(
        corpus, documents=tuple(assigned), split_seed=seed, train_fraction=train_fraction
    )


def load_stopwords(path: str | Path) -> frozenset[str]:
    """One word per line; blank lines ignored, entries lowercased."""
    source = Path(path)
    try:
        lines = source.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise FileSystemError(f"Cannot read stopword file: {e}", path=str(source)) from e
    return frozenset(line.strip().lower() for line in lines if line.strip())


def load_lemma_lexicon(path: str | Path) -> dict[str, str]:
    """Read a ``surface<TAB>lemma`` lexicon."""
    source = Path(path)
    try:
        lines = source.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise FileSystemError(f"Cannot read lemma lexicon: {e}", path=str(source)) from e

    lexicon: dict[str, str] = {}
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():  # noqa: PLR2004
            raise FormatError(
                f"Lemma lexicon line {number} is not 'surface<TAB>lemma'",
                field="lemmas",
                details={"path": str(source), "line": number},
            )
        lexicon[parts[0].strip().lower()] = parts[1].strip().lower()
    return lexicon


def load_preprocess_config(
    stopwords: str | Path | None = None,
    lemmas: str | Path | None = None,
    min_chars_after_clean: int = 1,
) -> PreprocessConfig:
    return PreprocessConfig(
        stopword_list=load_stopwords(stopwords) if stopwords else frozenset(),
        lemma_lexicon=load_lemma_lexicon(lemmas) if lemmas else {},
        min_chars_after_clean=min_chars_after_clean,
    )


def _write_frame(frame: pd.DataFrame, path: str | Path) -> None:
    target = Path(path)
    try:
        frame.to_csv(target, index=False, encoding="utf-8", lineterminator="\n")
    except OSError as e:
        raise FileSystemError(f"Failed to write CSV: {e}", path=str(target)) from e


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write ``id,text,process,category,split`` rows readable by load_corpus."""
    rows = [
        {
            "id": doc.id,
            "text": doc.raw_text,
            "process": doc.process,
            "category": doc.declared_category or "",
            "split": doc.split.value,
        }
        for doc in corpus.documents
    ]
    columns = ["id", "text", "process", "category", "split"]
    _write_frame(pd.DataFrame(rows, columns=columns), path)


def write_removal_report(report: RemovalReport, path: str | Path) -> None:
    rows = [(doc_id, reason.value) for doc_id, reason in report.entries]
    _write_frame(pd.DataFrame(rows, columns=["id", "reason"]), path)


def write_split(corpus: Corpus, path: str | Path) -> None:
    rows = [(doc.id, doc.split.value) for doc in corpus.documents]
    _write_frame(pd.DataFrame(rows, columns=["id", "split"]), path)


def token_lists(documents: Iterable[Document]) -> list[tuple[str, ...]]:
    return [doc.token_list for doc in documents]
