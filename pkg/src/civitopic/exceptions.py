# ABOUTME: Error hierarchy for corpus, model, service and file failures
# ABOUTME: Each error carries a details dict and a one-line message for the CLI
# SPDX-License-Identifier: MIT

from typing import Any


class CivitopicError(Exception):
    """Root of every error civitopic raises on purpose.

    ``details`` holds structured context (field, path, url, stage, ...) for
    logs; :meth:`user_message` is the line the CLI prints.
    """

    def __init__(self, message: str, details: dict[str, Any] | None = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def user_message(self) -> str:
        """Message shown by the CLI."""
        return self.message


class NetworkError(CivitopicError):
    """Transport failures talking to embedding or LLM services."""

    def user_message(self) -> str:
        return f"Network error: {self.message}"


class HTTPError(NetworkError):
    """The service answered with an error status."""

    def __init__(
        self,
        message: str,
        status_code: int | None = None,
        url: str | None = None,
        details: dict[str, Any] | None = None,
    ):
        details = details or {}
        if status_code is not None:
            details["status_code"] = status_code
        if url is not None:
            details["url"] = url
        super().__init__(message, details)
        self.status_code = status_code
        self.url = url

    def user_message(self) -> str:
        if self.status_code:
            return f"HTTP {self.status_code}: {self.message}"
        return f"HTTP error: {self.message}"


class ProtocolError(NetworkError):
    """A service answered, but not in the agreed shape."""

    def user_message(self) -> str:
        return f"Protocol error: {self.message}"


class LabelingError(NetworkError):
    """Labeling a single document failed after all retries."""

    def __init__(
        self,
        message: str,
        doc_id: str | None = None,
        details: dict[str, Any] | None = None,
    ):
        details = details or {}
        if doc_id is not None:
            details["doc_id"] = doc_id
        super().__init__(message, details)
        self.doc_id = doc_id

    def user_message(self) -> str:
        if self.doc_id:
            return f"Labeling failed for document '{self.doc_id}': {self.message}"
        return f"Labeling failed: {self.message}"


class FileSystemError(CivitopicError):
    """A file or directory could not be read or written."""

    def __init__(
        self,
        message: str,
        path: str | None = None,
        details: dict[str, Any] | None = None,
    ):
        details = details or {}
        if path is not None:
            details["path"] = path
        super().__init__(message, details)
        self.path = path

    def user_message(self) -> str:
        if self.path:
            return f"File system error with '{self.path}': {self.message}"
        return f"File system error: {self.message}"


class ValidationError(CivitopicError):
    """Bad input: a file, a parameter or data that breaks an invariant."""

    def __init__(
        self,
        message: str,
        field: str | None = None,
        value: Any | None = None,
        details: dict[str, Any] | None = None,
    ):
        details = details or {}
        if field is not None:
            details["field"] = field
        if value is not None:
            details["value"] = value
        super().__init__(message, details)
        self.field = field
        self.value = value

    def user_message(self) -> str:
        if self.field:
            return f"Invalid {self.field}: {self.message}"
        return f"Validation error: {self.message}"


class SchemaError(ValidationError):
    """A required corpus field is missing."""

    def user_message(self) -> str:
        if self.field:
            return f"Missing required field '{self.field}': {self.message}"
        return f"Schema error: {self.message}"


class ParameterError(ValidationError):
    """A parameter lies outside its accepted domain."""


class ConfigurationError(ValidationError):
    """Settings that are individually valid but inconsistent together."""

    def user_message(self) -> str:
        return f"Configuration error: {self.message}"


class FormatError(ValidationError):
    """A file does not follow its declared format."""

    def user_message(self) -> str:
        return f"Format error: {self.message}"


class DataError(ValidationError):
    """Numeric data contains values the engine cannot use (NaN, Inf)."""


class UndefinedSimilarityError(ValidationError):
    """Cosine similarity requested for a zero vector."""


class EmptyTopicError(ValidationError):
    """A topic has no terms left to weight."""

    def __init__(self, message: str, topic_id: int | None = None):
        super().__init__(message, field="topic", value=topic_id)
        self.topic_id = topic_id


class EvaluationError(ValidationError):
    """External evaluation has nothing to compare."""


class StageError(CivitopicError):
    """An error raised inside a named pipeline stage."""

    def __init__(
        self,
        message: str,
        stage: str,
        details: dict[str, Any] | None = None,
    ):
        details = details or {}
        details["stage"] = stage
        super().__init__(message, details)
        self.stage = stage

    def user_message(self) -> str:
        cause = self.__cause__
        if isinstance(cause, CivitopicError):
            return f"Stage '{self.stage}' failed: {cause.user_message()}"
        return f"Stage '{self.stage}' failed: {self.message}"
