# ABOUTME: Two-level controlled vocabulary (N1 domains, N2 subterms) and seed lists
# ABOUTME: Loads the taxonomy JSON, validates it and normalizes options for matching
# SPDX-License-Identifier: MIT

import logging
import re
import unicodedata
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path

from .exceptions import FormatError
from .storage import read_json

logger = logging.getLogger(__name__)

MAX_SEED_SUBTERMS = 5
OTHER_PREFIX = "outros"

_PUNCTUATION = re.compile(r"[^\w\s]|_")
_WHITESPACE = re.compile(r"\s+")


def normalize_option(text: str) -> str:
    """Accent- and case-insensitive comparison key for taxonomy options.

    >>> normalize_option("  Saneamento  Básico ")
    'saneamento basico'
    """
    decomposed = unicodedata.normalize("NFKD", text)
    stripped = "".join(ch for ch in decomposed if not unicodedata.combining(ch))
    stripped = _PUNCTUATION.sub(" ", stripped.casefold())
    return _WHITESPACE.sub(" ", stripped).strip()


def is_other_entry(name: str) -> bool:
    """True for catch-all entries such as "Outros em Saúde"."""
    return normalize_option(name).split(" ", 1)[0] == OTHER_PREFIX


@dataclass(frozen=True)
class Taxonomy:
    """N1 domains mapped to their N2 subterms, in file order."""

    n1_to_n2: dict[str, tuple[str, ...]]
    _n1_index: dict[str, str] = field(init=False, repr=False, compare=False)
    _n2_index: dict[str, str] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        mapping = {n1: tuple(n2s) for n1, n2s in self.n1_to_n2.items()}
        object.__setattr__(self, "n1_to_n2", mapping)
        if not mapping:
            raise FormatError("Taxonomy has no N1 entries", field="taxonomy")

        n1_index: dict[str, str] = {}
        n2_index: dict[str, str] = {}
        for n1, n2s in mapping.items():
            _check_option(n1, "N1")
            key = normalize_option(n1)
            if key in n1_index:
                raise FormatError(
                    f"Duplicate N1 option '{n1}'", field="taxonomy", value=n1
                )
            n1_index[key] = n1
            for n2 in n2s:
                _check_option(n2, "N2")
                key = normalize_option(n2)
                if key in n2_index:
                    msg = f"N2 option '{n2}' appears more than once"
                    raise FormatError(msg, field="taxonomy", value=n2)
                n2_index[key] = n2
        object.__setattr__(self, "_n1_index", n1_index)
        object.__setattr__(self, "_n2_index", n2_index)

    @property
    def n1_options(self) -> list[str]:
        return list(self.n1_to_n2)

    @property
    def n2_options(self) -> list[str]:
        return [n2 for n2s in self.n1_to_n2.values() for n2 in n2s]

    def match_n1(self, candidate: str) -> str | None:
        """Exact option first, then the accent/case-normalized form."""
        return _match(candidate, self.n1_to_n2, self._n1_index)

    def match_n2(self, candidate: str) -> str | None:
        return _match(candidate, set(self.n2_options), self._n2_index)

    def parent_of(self, n2: str) -> str | None:
        for n1, n2s in self.n1_to_n2.items():
            if n2 in n2s:
                return n1
        return None

    def seed_lists(self, max_subterms: int = MAX_SEED_SUBTERMS) -> dict[str, list[str]]:
        """Per N1: its name followed by up to ``max_subterms`` N2 terms.

        Catch-all "Outros" entries are dropped before truncation so they never
        take a slot.
        """
        seeds: dict[str, list[str]] = {}
        for n1, n2s in self.n1_to_n2.items():
            kept = [n2 for n2 in n2s if not is_other_entry(n2)]
            seeds[n1] = [n1, *kept[:max_subterms]]
        return seeds


def _check_option(name: object, level: str) -> None:
    if not isinstance(name, str) or not name.strip():
        raise FormatError(f"{level} options must be non-empty strings", field="taxonomy")
    if "," in name:
        # Label responses are split on the first comma.
        msg = f"{level} option '{name}' contains a comma"
        raise FormatError(msg, field="taxonomy", value=name)


def _match(candidate: str, exact: Mapping[str, object] | set[str], index: dict[str, str]) -> str | None:
    text = candidate.strip()
    if text in exact:
        return text
    return index.get(normalize_option(text))


def load_taxonomy(path: str | Path) -> Taxonomy:
    """Load a taxonomy JSON object mapping N1 names to lists of N2 names."""
    data = read_json(path)
    if not isinstance(data, dict) or not all(isinstance(v, list) for v in data.values()):
        raise FormatError(
            "Taxonomy must be a JSON object mapping N1 names to lists of N2 names",
            field="taxonomy",
            details={"path": str(path)},
        )
    taxonomy = Taxonomy(data)
    logger.debug(
        "Loaded taxonomy from %s: %d N1, %d N2 options",
        path,
        len(taxonomy.n1_options),
        len(taxonomy.n2_options),
    )
    return taxonomy
