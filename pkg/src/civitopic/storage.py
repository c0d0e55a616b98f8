# ABOUTME: File storage helpers, deterministic JSON output and on-disk caches
# ABOUTME: Handles directory creation, content hashing and cache serialization
# SPDX-License-Identifier: MIT

import hashlib
import json
import logging
import threading
from pathlib import Path
from typing import Any

import numpy as np

from .exceptions import FileSystemError, FormatError

logger = logging.getLogger(__name__)


def ensure_directory(path: str | Path) -> Path:
    """Create directory if it doesn't exist.

    Args:
        path: Directory path to create

    Returns:
        Path: The directory path

    Raises:
        FileSystemError: If the directory cannot be created
    """
    directory = Path(path)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        msg = f"Cannot create directory: {e}"
        raise FileSystemError(msg, path=str(directory)) from e
    return directory


def content_hash(*parts: str) -> str:
    """Return a stable SHA-256 hex digest over the given string parts."""
    digest = hashlib.sha256()
    for part in parts:
        digest.update(part.encode("utf-8"))
        digest.update(b"\x00")
    return digest.hexdigest()


def write_json(path: str | Path, payload: Any) -> None:
    """Write JSON with sorted keys so identical payloads give identical bytes."""
    target = Path(path)
    try:
        target.write_text(
            json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    except OSError as e:
        msg = f"Failed to write JSON: {e}"
        raise FileSystemError(msg, path=str(target)) from e


def read_json(path: str | Path) -> Any:
    """Read a JSON file, mapping I/O and syntax failures to civitopic errors."""
    source = Path(path)
    try:
        text = source.read_text(encoding="utf-8")
    except OSError as e:
        msg = f"Cannot read file: {e}"
        raise FileSystemError(msg, path=str(source)) from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        msg = f"Invalid JSON: {e}"
        raise FormatError(msg, field="json", details={"path": str(source)}) from e


class JsonCache:
    """String values stored one file per key under a cache directory.

    Reads are lock-free; writes are serialized so concurrent workers never
    interleave partial files.
    """

    def __init__(self, directory: str | Path):
        self.directory = ensure_directory(directory)
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> str | None:
        path = self._path(key)
        if not path.exists():
            return None
        try:
            return str(json.loads(path.read_text(encoding="utf-8"))["value"])
        except (OSError, json.JSONDecodeError, KeyError) as e:
            logger.warning("Ignoring unreadable cache entry %s: %s", path, e)
            return None

    def put(self, key: str, value: str) -> None:
        with self._lock:
            tmp = self._path(key).with_suffix(".tmp")
            try:
                tmp.write_text(json.dumps({"value": value}), encoding="utf-8")
                tmp.replace(self._path(key))
            except OSError as e:
                msg = f"Failed to write cache entry: {e}"
                raise FileSystemError(msg, path=str(tmp)) from e


class VectorCache:
    """float32 vectors stored as ``.npy`` files keyed by content hash."""

    def __init__(self, directory: str | Path):
        self.directory = ensure_directory(directory)
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.npy"

    def get(self, key: str) -> np.ndarray | None:
        path = self._path(key)
        if not path.exists():
            return None
        try:
            return np.load(path, allow_pickle=False)
        except (OSError, ValueError) as e:
            logger.warning("Ignoring unreadable vector cache entry %s: %s", path, e)
            return None

    def put(self, key: str, vector: np.ndarray) -> None:
        with self._lock:
            tmp = self.directory / f"{key}.tmp.npy"
            try:
                np.save(tmp, np.asarray(vector, dtype="<f4"), allow_pickle=False)
                tmp.replace(self._path(key))
            except OSError as e:
                msg = f"Failed to write vector cache entry: {e}"
                raise FileSystemError(msg, path=str(tmp)) from e
