# ABOUTME: LLM client for gold-standard taxonomy labels and short topic names
# ABOUTME: Builds prompts, validates responses against the taxonomy, caches answers
# SPDX-License-Identifier: MIT

import json
import logging
import re
import unicodedata
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, Protocol

import pandas as pd
from tqdm import tqdm

from .config import LlmConfig, default_cache_dir
from .exceptions import (
    ConfigurationError,
    FileSystemError,
    FormatError,
    LabelingError,
    NetworkError,
    ParameterError,
    ProtocolError,
)
from .models import NO_MATCH, OUTLIER_TOPIC, Document, LabelResult, TopicRepresentation
from .storage import JsonCache, content_hash
from .taxonomy import Taxonomy, normalize_option
from .transport import post_json

logger = logging.getLogger(__name__)

OPTION_SEPARATOR = " | "
OUTLIER_LABEL = "Outliers"
MAX_LABEL_WORDS = 3

_WHITESPACE = re.compile(r"\s")
_JSON_OBJECT = re.compile(r"\{.*\}", re.DOTALL)
_WRAPPING = "\"'“”‘’.;:`*"

LABEL_PROMPT = """Você classifica propostas cidadãs segundo um vocabulário controlado de dois níveis.

Termos de nível 1: {n1_options}
Termos de nível 2: {n2_options}

Escolha um termo de cada nível, copiando-o exatamente como aparece nas listas.
Responda somente no formato "<nível 1>, <nível 2>", sem qualquer outro texto.

Proposta:
{document}"""

NAMING_PROMPT = """Abaixo estão tópicos descobertos em propostas cidadãs, cada um com suas palavras-chave.
Dê a cada tópico um rótulo claro de no máximo três palavras.
Responda somente com um objeto JSON cujas chaves são os IDs dos tópicos e cujos valores são os rótulos.

{topics}"""


class ChatContract(Protocol):
    """Request/response shape of an LLM endpoint."""

    def payload(self, prompt: str, config: LlmConfig) -> dict[str, Any]: ...

    def extract(self, body: Mapping[str, Any]) -> str: ...


class GenerateContract:
    """``{model, prompt, temperature, options: {num_ctx}}`` → ``{response}``."""

    def payload(self, prompt: str, config: LlmConfig) -> dict[str, Any]:
        return {
            "model": config.model_name,
            "prompt": prompt,
            "temperature": config.temperature,
            "stream": False,
            "options": {"num_ctx": config.context_tokens, "temperature": config.temperature},
        }

    def extract(self, body: Mapping[str, Any]) -> str:
        response = body.get("response")
        if not isinstance(response, str):
            raise ProtocolError("Response has no 'response' string")
        return response


class MessagesContract:
    """``{model, messages, temperature}`` → ``choices[0].message.content``."""

    def payload(self, prompt: str, config: LlmConfig) -> dict[str, Any]:
        return {
            "model": config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": config.temperature,
        }

    def extract(self, body: Mapping[str, Any]) -> str:
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as e:
            raise ProtocolError("Response has no choices[0].message.content") from e
        if isinstance(content, list):
            content = "".join(part.get("text", "") for part in content if isinstance(part, dict))
        return str(content)


CONTRACTS: dict[str, type[ChatContract]] = {
    "generate": GenerateContract,
    "chat": MessagesContract,
}


class LlmClient:
    """Cached, retrying access to one LLM endpoint."""

    def __init__(self, config: LlmConfig, cache_dir: str | Path | None = None):
        if config.contract not in CONTRACTS:
            raise ConfigurationError(
                f"Unknown LLM contract '{config.contract}'",
                field="contract",
                details={"choices": sorted(CONTRACTS)},
            )
        self.config = config
        self.contract = CONTRACTS[config.contract]()
        base = Path(cache_dir or config.cache_dir or default_cache_dir())
        self.cache = JsonCache(base / "llm")

    def complete(self, prompt: str, *, use_cache: bool = True) -> str:
        key = content_hash(self.config.model_name, prompt)
        if use_cache and (cached := self.cache.get(key)) is not None:
            return cached

        headers = {}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        body = post_json(
            self.config.endpoint,
            self.contract.payload(prompt, self.config),
            timeout=self.config.timeout,
            retries=self.config.retries,
            retry_delay=self.config.retry_delay,
            headers=headers,
        )
        answer = self.contract.extract(body)
        self.cache.put(key, answer)
        return answer


def truncate_text(text: str, limit: int) -> str:
    """NFC-normalize, then cut at the last whitespace at or before ``limit``.

    Text without whitespace in range is cut hard at ``limit`` code points.
    """
    text = unicodedata.normalize("NFC", text).strip()
    if len(text) <= limit:
        return text
    window = text[: limit + 1]
    cut = max((m.start() for m in _WHITESPACE.finditer(window)), default=limit)
    return text[:cut].rstrip()


def build_label_prompt(text: str, taxonomy: Taxonomy, config: LlmConfig) -> str:
    """Prompt listing both option levels followed by the (truncated) document."""
    if not text.strip():
        raise ParameterError("Cannot label an empty document", field="text")
    document = truncate_text(text, config.truncate_chars).replace("|", "\\|")
    return LABEL_PROMPT.format(
        n1_options=OPTION_SEPARATOR.join(taxonomy.n1_options),
        n2_options=OPTION_SEPARATOR.join(taxonomy.n2_options),
        document=document,
    )


def _clean_side(text: str) -> str:
    return text.strip().strip(_WRAPPING).strip()


def _find_unique_option(response: str, options: Sequence[str]) -> str | None:
    """The one option named inside free text, ignoring options nested in longer hits."""
    haystack = f" {normalize_option(response)} "
    hits = [opt for opt in options if f" {normalize_option(opt)} " in haystack]
    keys = {opt: normalize_option(opt) for opt in hits}
    maximal = [
        opt for opt in hits
        if not any(other != opt and f" {keys[opt]} " in f" {keys[other]} " for other in hits)
    ]
    return maximal[0] if len(maximal) == 1 else None


def parse_label_response(raw: str, taxonomy: Taxonomy, doc_id: str = "") -> LabelResult:
    """Validate an ``"<N1>, <N2>"`` answer against the taxonomy.

    Each side must equal an option exactly or after accent/case normalization.
    A side that does not is searched for exactly one option of its level,
    within that side when the answer has a comma, else within the whole
    answer; failing that it becomes ``no_match``.
    """
    if not raw or not raw.strip():
        return LabelResult(doc_id, NO_MATCH, NO_MATCH, raw or "")

    left, comma, right = raw.strip().partition(",")
    n1 = taxonomy.match_n1(_clean_side(left)) if comma else None
    n2 = taxonomy.match_n2(_clean_side(right)) if comma else None

    if n1 is None:
        n1 = _find_unique_option(left if comma else raw, taxonomy.n1_options)
    if n2 is None:
        n2 = _find_unique_option(right if comma else raw, taxonomy.n2_options)

    return LabelResult(doc_id, n1 or NO_MATCH, n2 or NO_MATCH, raw)


def label_document(
    doc: Document,
    taxonomy: Taxonomy,
    config: LlmConfig,
    client: LlmClient | None = None,
) -> LabelResult:
    """Ask the LLM for one N1 and one N2 term for ``doc``.

    Raises:
        LabelingError: If the endpoint fails after all retries
    """
    client = client or LlmClient(config)
    prompt = build_label_prompt(doc.raw_text, taxonomy, config)
    try:
        raw = client.complete(prompt)
    except NetworkError as e:
        raise LabelingError(e.user_message(), doc_id=doc.id) from e
    result = parse_label_response(raw, taxonomy, doc.id)
    if NO_MATCH in (result.n1, result.n2):
        logger.debug("Document %s: unmatched response %r", doc.id, raw)
    return result


def label_documents(
    documents: Sequence[Document],
    taxonomy: Taxonomy,
    config: LlmConfig,
    client: LlmClient | None = None,
    *,
    show_progress: bool = False,
) -> dict[str, LabelResult]:
    """Label documents concurrently (``config.max_in_flight`` at a time).

    Documents with identical text share one request. Results are keyed by
    doc_id in input order.
    """
    client = client or LlmClient(config)
    representatives: dict[str, Document] = {}
    for doc in documents:
        representatives.setdefault(content_hash(config.model_name, doc.raw_text), doc)
    unique = list(representatives.values())
    if len(unique) < len(documents):
        logger.debug(
            "%d documents repeat an earlier text; %d requests needed",
            len(documents) - len(unique),
            len(unique),
        )

    with ThreadPoolExecutor(max_workers=config.max_in_flight) as pool:
        answers = list(
            tqdm(
                pool.map(lambda doc: label_document(doc, taxonomy, config, client), unique),
                total=len(unique),
                desc="Labeling",
                unit="doc",
                disable=not show_progress,
            )
        )
    by_key = dict(zip(representatives, answers))
    results = [
        replace(by_key[content_hash(config.model_name, doc.raw_text)], doc_id=doc.id)
        for doc in documents
    ]
    labels = {result.doc_id: result for result in results}
    unmatched = sum(1 for r in results if NO_MATCH in (r.n1, r.n2))
    if unmatched:
        logger.warning("%d of %d documents have a no_match label", unmatched, len(results))
    return labels


def write_labels(labels: Mapping[str, LabelResult], path: str | Path) -> None:
    """Write ``doc_id,n1,n2,raw_response_hash`` rows."""
    rows = [
        (r.doc_id, r.n1, r.n2, content_hash(r.raw_response)) for r in labels.values()
    ]
    frame = pd.DataFrame(rows, columns=["doc_id", "n1", "n2", "raw_response_hash"])
    target = Path(path)
    try:
        frame.to_csv(target, index=False, encoding="utf-8", lineterminator="\n")
    except OSError as e:
        raise FileSystemError(f"Failed to write labels: {e}", path=str(target)) from e


def read_labels(path: str | Path) -> dict[str, LabelResult]:
    source = Path(path)
    try:
        frame = pd.read_csv(source, dtype=str, keep_default_na=False, encoding="utf-8")
    except OSError as e:
        raise FileSystemError(f"Cannot read labels: {e}", path=str(source)) from e
    missing = {"doc_id", "n1", "n2"} - set(frame.columns)
    if missing:
        raise FormatError(
            f"Label file lacks columns {sorted(missing)}",
            field="labels",
            details={"path": str(source)},
        )
    return {
        row["doc_id"]: LabelResult(row["doc_id"], row["n1"] or NO_MATCH, row["n2"] or NO_MATCH)
        for row in frame.to_dict(orient="records")
    }


def build_naming_prompt(topics: Sequence[TopicRepresentation]) -> str:
    lines = [f"{t.topic_id}: {', '.join(t.words)}" for t in topics]
    return NAMING_PROMPT.format(topics="\n".join(lines))


def _parse_names(raw: str, wanted: set[int]) -> dict[int, str]:
    match = _JSON_OBJECT.search(raw or "")
    if not match:
        return {}
    try:
        data = json.loads(match.group(0))
    except json.JSONDecodeError:
        return {}
    if not isinstance(data, dict):
        return {}

    names: dict[int, str] = {}
    for key, value in data.items():
        try:
            topic_id = int(key)
        except (TypeError, ValueError):
            continue
        label = " ".join(str(value).split())
        if topic_id in wanted and label and len(label.split()) <= MAX_LABEL_WORDS:
            names[topic_id] = label
    return names


def name_topics(
    topics: Sequence[TopicRepresentation],
    config: LlmConfig,
    client: LlmClient | None = None,
) -> dict[int, str]:
    """Short LLM labels for every topic; the outlier topic is always "Outliers".

    All topics are named in one request. Topics left without a valid label
    (unknown to the answer, or longer than three words) are asked once more,
    then fall back to their automatic name.
    """
    names: dict[int, str] = {}
    pending = []
    for topic in topics:
        if topic.topic_id == OUTLIER_TOPIC:
            names[OUTLIER_TOPIC] = OUTLIER_LABEL
        else:
            pending.append(topic)
    if not pending:
        return names

    client = client or LlmClient(config)
    for attempt in range(2):
        wanted = {t.topic_id for t in pending}
        raw = client.complete(build_naming_prompt(pending), use_cache=attempt == 0)
        names.update(_parse_names(raw, wanted))
        pending = [t for t in pending if t.topic_id not in names]
        if not pending:
            break
        logger.warning("%d topics without a valid label (attempt %d)", len(pending), attempt + 1)

    for topic in pending:
        names[topic.topic_id] = topic.name
    return {t.topic_id: names[t.topic_id] for t in topics}


def apply_topic_labels(
    representations: Sequence[TopicRepresentation], names: Mapping[int, str]
) -> list[TopicRepresentation]:
    return [replace(r, llm_label=names.get(r.topic_id)) for r in representations]
