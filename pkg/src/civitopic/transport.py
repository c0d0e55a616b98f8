# ABOUTME: JSON-over-HTTP client with exponential backoff retry logic
# ABOUTME: Shared transport for the embedding service and the LLM endpoint
# SPDX-License-Identifier: MIT

import logging
import time
from collections.abc import Callable, Iterator, Mapping
from dataclasses import dataclass
from typing import Any, TypeVar
from urllib.parse import urlparse

import requests

from .exceptions import HTTPError, NetworkError, ProtocolError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_RETRIES = 3
DEFAULT_RETRY_DELAY = 1.0  # seconds
DEFAULT_BACKOFF = 2.0
DEFAULT_TIMEOUT = 60.0
HTTP_SERVER_ERROR = 500

T = TypeVar("T")


@dataclass(frozen=True)
class RetryPolicy:
    """How often and how patiently a service call is repeated.

    ``retries`` counts the attempts after the first one; the wait before
    retry ``n`` (0-based) is ``initial_delay * backoff**n``.
    """

    retries: int = DEFAULT_RETRIES
    initial_delay: float = DEFAULT_RETRY_DELAY
    backoff: float = DEFAULT_BACKOFF

    def __post_init__(self) -> None:
        if self.retries < 0:
            raise ValidationError("retries cannot be negative", field="retries", value=self.retries)
        if self.initial_delay < 0 or self.backoff < 1:
            raise ValidationError(
                "Retry delays must be non-negative and non-shrinking",
                field="retry_delay",
                value=(self.initial_delay, self.backoff),
            )

    def delay(self, retry: int) -> float:
        return self.initial_delay * self.backoff**retry

    def delays(self) -> Iterator[float]:
        for retry in range(self.retries):
            yield self.delay(retry)

    def call(self, func: Callable[[], T], retry_on: tuple[type[Exception], ...]) -> T:
        """Run ``func``, sleeping and repeating it while it raises ``retry_on``.

        Other exceptions propagate at once; once the retries are spent the
        last transient failure is re-raised.
        """
        waits = self.delays()
        attempt = 1
        while True:
            try:
                return func()
            except retry_on as e:
                wait = next(waits, None)
                if wait is None:
                    raise
                logger.debug("Attempt %d failed (%s); retrying in %.2fs", attempt, e, wait)
                time.sleep(wait)
                attempt += 1


class _ServerError(Exception):
    """A 5xx answer; retried like a dropped connection."""

    def __init__(self, response: requests.Response):
        super().__init__(f"server answered {response.status_code}")
        self.response = response


def validate_endpoint(url: str, field: str = "endpoint") -> None:
    """Reject endpoints that are not absolute HTTP(S) URLs."""
    parsed = urlparse(url) if isinstance(url, str) else None
    if parsed is None or parsed.scheme not in ("http", "https") or not parsed.netloc:
        raise ValidationError(
            f"Endpoint {url!r} is not an http(s) URL with a host", field=field, value=url
        )


def post_json(
    url: str,
    payload: Mapping[str, Any],
    *,
    timeout: float = DEFAULT_TIMEOUT,
    retries: int = DEFAULT_RETRIES,
    retry_delay: float = DEFAULT_RETRY_DELAY,
    headers: Mapping[str, str] | None = None,
) -> dict[str, Any]:
    """POST a JSON payload and return the decoded JSON object.

    Timeouts, dropped connections and 5xx answers are retried with
    exponential backoff; 4xx answers fail at once.

    Raises:
        NetworkError: If the service stays unreachable after all retries
        HTTPError: If the service answers with an error status
        ProtocolError: If the body is not a JSON object
    """
    validate_endpoint(url)
    policy = RetryPolicy(retries=retries, initial_delay=retry_delay)

    def attempt() -> requests.Response:
        response = requests.post(url, json=dict(payload), headers=dict(headers or {}), timeout=timeout)
        if response.status_code >= HTTP_SERVER_ERROR:
            raise _ServerError(response)
        return response

    try:
        response = policy.call(
            attempt,
            (requests.exceptions.Timeout, requests.exceptions.ConnectionError, _ServerError),
        )
    except requests.exceptions.Timeout as e:
        raise NetworkError(
            f"Request timed out after {timeout:g} seconds ({retries} retries)", details={"url": url}
        ) from e
    except requests.exceptions.ConnectionError as e:
        raise NetworkError(f"Connection failed after {retries} retries: {e}", details={"url": url}) from e
    except _ServerError as e:
        raise HTTPError(
            f"Service kept failing after {retries} retries", status_code=e.response.status_code, url=url
        ) from e
    except requests.exceptions.RequestException as e:
        raise NetworkError(f"Request failed: {e}", details={"url": url}) from e

    if not response.ok:
        raise HTTPError(
            f"Service rejected the request: {response.status_code} {response.reason}",
            status_code=response.status_code,
            url=url,
        )

    try:
        body = response.json()
    except ValueError as e:
        raise ProtocolError("Response body is not valid JSON", details={"url": url}) from e
    if not isinstance(body, dict):
        raise ProtocolError(f"Expected a JSON object, got {type(body).__name__}", details={"url": url})
    return body
