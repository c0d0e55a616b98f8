# ABOUTME: Configuration objects for pipeline runs and remote model services
# ABOUTME: Loads JSON config files and resolves environment variable defaults
# SPDX-License-Identifier: MIT

import logging
import os
from dataclasses import asdict, dataclass, fields
from enum import Enum
from pathlib import Path
from typing import Any

from .exceptions import ConfigurationError, ParameterError
from .storage import read_json

logger = logging.getLogger(__name__)

AUTO = "auto"
MIN_NR_TOPICS = 2
MIN_TOPIC_SIZE = 2
MAX_NGRAM = 2

LLM_ENDPOINT_ENV = "CIVITOPIC_LLM_ENDPOINT"
LLM_API_KEY_ENV = "CIVITOPIC_LLM_API_KEY"
EMBEDDING_ENDPOINT_ENV = "CIVITOPIC_EMBEDDING_ENDPOINT"
CACHE_DIR_ENV = "CIVITOPIC_CACHE_DIR"


class Mode(Enum):
    """Topic-modeling mode."""

    UNSUPERVISED = "unsupervised"
    SEMISUPERVISED = "semisupervised"

    @classmethod
    def parse(cls, value: "str | Mode") -> "Mode":
        if isinstance(value, Mode):
            return value
        aliases = {"unsup": cls.UNSUPERVISED, "semi": cls.SEMISUPERVISED}
        normalized = str(value).strip().lower()
        if normalized in aliases:
            return aliases[normalized]
        try:
            return cls(normalized)
        except ValueError as e:
            msg = "Mode must be unsupervised/unsup or semisupervised/semi"
            raise ParameterError(msg, field="mode", value=value) from e


def parse_nr_topics(value: Any) -> int | str:
    """Accept an integer target ≥ 2 or the literal ``"auto"``."""
    if value is None or (isinstance(value, str) and value.strip().lower() == AUTO):
        return AUTO
    try:
        target = int(value)
    except (TypeError, ValueError) as e:
        msg = "nr_topics must be an integer or 'auto'"
        raise ParameterError(msg, field="nr_topics", value=value) from e
    if target < MIN_NR_TOPICS:
        msg = f"nr_topics must be at least {MIN_NR_TOPICS}"
        raise ParameterError(msg, field="nr_topics", value=value)
    return target


def parse_ngram_range(value: Any) -> tuple[int, int]:
    """Validate an n-gram range with 1 ≤ lo ≤ hi ≤ 2."""
    try:
        lo, hi = (int(part) for part in value)
    except (TypeError, ValueError) as e:
        msg = "n_gram_range must be a pair of integers"
        raise ParameterError(msg, field="n_gram_range", value=value) from e
    if not 1 <= lo <= hi <= MAX_NGRAM:
        msg = f"n_gram_range must satisfy 1 <= lo <= hi <= {MAX_NGRAM}"
        raise ParameterError(msg, field="n_gram_range", value=value)
    return lo, hi


@dataclass(frozen=True)
class PipelineConfig:
    """Settings for one fit of the topic pipeline."""

    mode: Mode = Mode.UNSUPERVISED
    n_gram_range: tuple[int, int] = (1, 1)
    nr_topics: int | str = 70
    min_topic_size: int = 10
    min_samples: int | None = None
    seed: int = 42
    seed_multiplier: float = 2.0
    blend_threshold: float = 0.0
    target_dim: int = 5
    k_top: int = 10
    train_fraction: float = 0.8
    stopwords: str | None = None
    lemmas: str | None = None
    min_chars_after_clean: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        object.__setattr__(self, "n_gram_range", parse_ngram_range(self.n_gram_range))
        object.__setattr__(self, "nr_topics", parse_nr_topics(self.nr_topics))
        if self.min_topic_size < MIN_TOPIC_SIZE:
            msg = f"min_topic_size must be at least {MIN_TOPIC_SIZE}"
            raise ParameterError(msg, field="min_topic_size", value=self.min_topic_size)
        if self.min_samples is not None and not 1 <= self.min_samples <= self.min_topic_size:
            msg = "min_samples must lie in [1, min_topic_size]"
            raise ParameterError(msg, field="min_samples", value=self.min_samples)
        if self.seed_multiplier <= 0:
            msg = "seed_multiplier must be positive"
            raise ParameterError(msg, field="seed_multiplier", value=self.seed_multiplier)
        if not 0.0 < self.train_fraction < 1.0:
            msg = "train_fraction must lie in (0, 1)"
            raise ParameterError(msg, field="train_fraction", value=self.train_fraction)
        if self.k_top < 1:
            raise ParameterError("k_top must be positive", field="k_top", value=self.k_top)
        if self.min_chars_after_clean < 0:
            msg = "min_chars_after_clean must be non-negative"
            raise ParameterError(msg, field="min_chars_after_clean")

    @property
    def effective_min_samples(self) -> int:
        return self.min_samples if self.min_samples is not None else self.min_topic_size

    @property
    def semisupervised(self) -> bool:
        return self.mode is Mode.SEMISUPERVISED

    def snapshot(self) -> dict[str, Any]:
        """JSON-ready copy of every setting, embedded in artifacts."""
        data = asdict(self)
        data["mode"] = self.mode.value
        data["n_gram_range"] = list(self.n_gram_range)
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any], base_dir: Path | None = None) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            msg = f"Unknown configuration keys: {', '.join(unknown)}"
            raise ConfigurationError(msg, field="config", value=unknown)
        values = dict(data)
        if base_dir is not None:
            for key in ("stopwords", "lemmas"):
                if values.get(key):
                    candidate = Path(values[key])
                    if not candidate.is_absolute():
                        values[key] = str(base_dir / candidate)
        return cls(**values)


def load_pipeline_config(path: str | Path) -> PipelineConfig:
    """Load a PipelineConfig from JSON; relative lexicon paths follow the file."""
    source = Path(path)
    data = read_json(source)
    if not isinstance(data, dict):
        msg = "Configuration file must contain a JSON object"
        raise ConfigurationError(msg, field="config", value=str(source))
    config = PipelineConfig.from_dict(data, base_dir=source.parent)
    logger.debug("Loaded pipeline config from %s: %s", source, config)
    return config


def default_cache_dir() -> Path:
    """Cache location: CIVITOPIC_CACHE_DIR > ~/.cache/civitopic."""
    if cache_dir := os.environ.get(CACHE_DIR_ENV):
        return Path(cache_dir).expanduser()
    return Path.home() / ".cache" / "civitopic"


@dataclass(frozen=True)
class LlmConfig:
    """Chat endpoint settings for document labeling and topic naming."""

    endpoint: str = "http://localhost:11434/api/generate"
    model_name: str = "gemma3:12b"
    temperature: float = 0.2
    context_tokens: int = 2048
    truncate_chars: int = 1500
    retries: int = 3
    timeout: float = 60.0
    retry_delay: float = 1.0
    max_in_flight: int = 4
    contract: str = "generate"
    api_key: str | None = None
    cache_dir: str | None = None

    def __post_init__(self) -> None:
        if self.truncate_chars < 1:
            msg = "truncate_chars must be positive"
            raise ParameterError(msg, field="truncate_chars", value=self.truncate_chars)
        if self.temperature < 0:
            raise ParameterError(
                "temperature must be non-negative", field="temperature", value=self.temperature
            )
        if self.retries < 0:
            raise ParameterError("retries must be non-negative", field="retries")
        if self.max_in_flight < 1:
            raise ParameterError("max_in_flight must be positive", field="max_in_flight")

    @classmethod
    def from_env(cls, **overrides: Any) -> "LlmConfig":
        """Build from CIVITOPIC_LLM_* variables; explicit overrides win."""
        values: dict[str, Any] = {}
        if endpoint := os.environ.get(LLM_ENDPOINT_ENV):
            values["endpoint"] = endpoint
        if api_key := os.environ.get(LLM_API_KEY_ENV):
            values["api_key"] = api_key
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass(frozen=True)
class EmbeddingServiceConfig:
    """HTTP embedding service settings."""

    endpoint: str = "http://localhost:8080/embed"
    model_name: str = "bertimbau-large"
    batch_size: int = 32
    retries: int = 3
    timeout: float = 60.0
    retry_delay: float = 1.0
    max_in_flight: int = 4
    cache_dir: str | None = None

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ParameterError("batch_size must be positive", field="batch_size")
        if self.max_in_flight < 1:
            raise ParameterError("max_in_flight must be positive", field="max_in_flight")

    @classmethod
    def from_env(cls, **overrides: Any) -> "EmbeddingServiceConfig":
        values: dict[str, Any] = {}
        if endpoint := os.environ.get(EMBEDDING_ENDPOINT_ENV):
            values["endpoint"] = endpoint
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)
