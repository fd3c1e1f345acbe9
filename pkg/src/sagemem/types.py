"""Core value types: knowledge sections, TTL math, and category normalization.

Everything downstream (index, store, pipeline, consolidation) speaks in terms
of these types. They are deliberately plain dataclasses with no I/O.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator, Literal, Mapping, Sequence

logger = logging.getLogger(__name__)


# =============================================================================
# Stores and query types
# =============================================================================

STAGING = "staging"
CANONICAL = "canonical"
STORES: tuple[str, ...] = (STAGING, CANONICAL)

StoreName = Literal["staging", "canonical"]

QueryType = Literal["factual", "coding", "conversational"]
QUERY_TYPES: tuple[str, ...] = ("factual", "coding", "conversational")


# =============================================================================
# Refresh (TTL) handling
# =============================================================================

# Unit -> minutes. Months are 30 days, years 365 days.
UNIT_MINUTES: dict[str, int] = {
    "none": 0,
    "minutes": 1,
    "hours": 60,
    "days": 1440,
    "weeks": 10080,
    "months": 43200,
    "years": 525600,
}

# Teachers frequently emit singular unit names; accept both spellings.
_UNIT_ALIASES: dict[str, str] = {
    "minute": "minutes",
    "hour": "hours",
    "day": "days",
    "week": "weeks",
    "month": "months",
    "year": "years",
}


class RefreshParseError(ValueError):
    """A refresh spec could not be interpreted (bad unit or negative value)."""


@dataclass(frozen=True)
class RefreshSpec:
    """A time-to-live as emitted by teachers: an integer count of a unit."""

    value: int
    unit: str

    @classmethod
    def parse(cls, obj: object) -> "RefreshSpec":
        """Build a RefreshSpec from a decoded JSON object like {"value": 1, "unit": "year"}."""
        if not isinstance(obj, Mapping):
            raise RefreshParseError(f"refresh spec must be an object, got {type(obj).__name__}")
        raw_value = obj.get("value")
        raw_unit = obj.get("unit")
        if isinstance(raw_value, bool) or not isinstance(raw_value, (int, float)):
            raise RefreshParseError(f"refresh value must be a number, got {raw_value!r}")
        if isinstance(raw_value, float) and not raw_value.is_integer():
            raise RefreshParseError(f"refresh value must be an integer, got {raw_value!r}")
        value = int(raw_value)
        if value < 0:
            raise RefreshParseError(f"refresh value must be >= 0, got {value}")
        if not isinstance(raw_unit, str):
            raise RefreshParseError(f"refresh unit must be a string, got {raw_unit!r}")
        unit = raw_unit.strip().lower()
        unit = _UNIT_ALIASES.get(unit, unit)
        if unit not in UNIT_MINUTES:
            raise RefreshParseError(f"unrecognized refresh unit: {raw_unit!r}")
        return cls(value=value, unit=unit)


def normalize_refresh(spec: RefreshSpec) -> int:
    """Convert a RefreshSpec to whole minutes.

    A unit of "none" always yields 0 (ephemeral), regardless of value.
    """
    if spec.unit not in UNIT_MINUTES:
        raise RefreshParseError(f"unrecognized refresh unit: {spec.unit!r}")
    if spec.value < 0:
        raise RefreshParseError(f"refresh value must be >= 0, got {spec.value}")
    if spec.unit == "none":
        return 0
    return spec.value * UNIT_MINUTES[spec.unit]


def utc_now() -> datetime:
    """Default clock: timezone-aware UTC now."""
    return datetime.now(timezone.utc)


# =============================================================================
# Sections
# =============================================================================


@dataclass(frozen=True)
class Section:
    """One unit of teacher-compiled knowledge.

    ``refresh_minutes`` is the normalized TTL; 0 means ephemeral (good for the
    acquiring turn only). ``category`` must be a canonical taxonomy entry,
    byte-equal, which is what makes category filtering at query time an exact
    string match. ``store`` says which tier currently owns the section.
    """

    id: str
    topic: str
    summary: str
    content: str
    refresh_minutes: int
    category: str
    created_at: datetime
    store: str = STAGING

    def __post_init__(self) -> None:
        if not self.content:
            raise ValueError("section content must be non-empty")
        if self.refresh_minutes < 0:
            raise ValueError(f"refresh_minutes must be >= 0, got {self.refresh_minutes}")
        if self.store not in STORES:
            raise ValueError(f"store must be one of {STORES}, got {self.store!r}")
        if self.created_at.tzinfo is None:
            raise ValueError("created_at must be timezone-aware (UTC)")

    def with_store(self, store: str) -> "Section":
        return replace(self, store=store)


def is_expired(section: Section, now: datetime) -> bool:
    """True once a section's age strictly exceeds its TTL.

    At the exact creation instant nothing is expired, not even an ephemeral
    (ttl=0) section — that is what lets the acquiring turn use it. One tick
    later an ephemeral section is already stale.
    """
    if section.refresh_minutes == 0:
        return now > section.created_at
    elapsed_minutes = (now - section.created_at).total_seconds() / 60.0
    return elapsed_minutes > section.refresh_minutes


def minutes_remaining(section: Section, now: datetime) -> float:
    """Minutes until expiry (negative if already past)."""
    elapsed_minutes = (now - section.created_at).total_seconds() / 60.0
    return section.refresh_minutes - elapsed_minutes


# =============================================================================
# Taxonomy and category normalization
# =============================================================================


class TaxonomyError(ValueError):
    """The taxonomy file is malformed (empty, duplicates, non-strings)."""


@dataclass(frozen=True)
class Taxonomy:
    """The flat list of canonical category names, in file order."""

    categories: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.categories:
            raise TaxonomyError("taxonomy must contain at least one category")
        seen: set[str] = set()
        for name in self.categories:
            if not isinstance(name, str) or not name.strip():
                raise TaxonomyError(f"taxonomy entries must be non-empty strings, got {name!r}")
            folded = name.casefold()
            if folded in seen:
                raise TaxonomyError(f"duplicate taxonomy entry (case-insensitive): {name!r}")
            seen.add(folded)

    @classmethod
    def load(cls, path: str | Path) -> "Taxonomy":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, list):
            raise TaxonomyError(f"taxonomy file must hold a JSON array, got {type(data).__name__}")
        return cls(categories=tuple(data))

    def __iter__(self) -> Iterator[str]:
        return iter(self.categories)

    def __len__(self) -> int:
        return len(self.categories)

    def __contains__(self, name: object) -> bool:
        return name in self.categories


def normalize_category(raw: str, taxonomy: Taxonomy) -> str | None:
    """Map a model-produced category string onto a canonical taxonomy entry.

    Tries a case-insensitive exact match first, then falls back to
    case-insensitive substring containment (either direction), taking the
    first hit in taxonomy order. Returns None when nothing matches.
    """
    if not isinstance(raw, str):
        return None
    needle = raw.strip().casefold()
    if not needle:
        return None
    for name in taxonomy:
        if name.casefold() == needle:
            return name
    for name in taxonomy:
        folded = name.casefold()
        if needle in folded or folded in needle:
            return name
    return None


# =============================================================================
# Category-search pairs and classification results
# =============================================================================


@dataclass(frozen=True)
class CategorySearchPair:
    """A retrieval target: canonical category + self-contained search text."""

    category: str
    search: str

    def __post_init__(self) -> None:
        if not self.category:
            raise ValueError("pair category must be non-empty")
        if not self.search:
            raise ValueError("pair search text must be non-empty")


def normalize_pairs(
    raw_pairs: Iterable[Mapping[str, object] | Sequence[str]],
    taxonomy: Taxonomy,
) -> list[CategorySearchPair]:
    """Normalize classifier pair output against the taxonomy.

    Each raw pair has its category normalized; pairs whose category does not
    resolve (or whose search text is blank) are dropped with a warning. Exact
    duplicates (canonical category, search text) collapse to the first
    occurrence, preserving order.
    """
    out: list[CategorySearchPair] = []
    seen: set[tuple[str, str]] = set()
    for raw in raw_pairs:
        if isinstance(raw, Mapping):
            raw_category = raw.get("category")
            raw_search = raw.get("search")
        else:
            try:
                raw_category, raw_search = raw[0], raw[1]
            except (IndexError, TypeError):
                logger.warning("dropping malformed pair: %r", raw)
                continue
        if not isinstance(raw_search, str) or not raw_search.strip():
            logger.warning("dropping pair with empty search text: %r", raw)
            continue
        category = normalize_category(raw_category if isinstance(raw_category, str) else "", taxonomy)
        if category is None:
            logger.warning("dropping pair with unmappable category %r", raw_category)
            continue
        search = raw_search.strip()
        key = (category, search)
        if key in seen:
            continue
        seen.add(key)
        out.append(CategorySearchPair(category=category, search=search))
    return out


@dataclass(frozen=True)
class QueryClassification:
    """Classifier verdict: the query type plus retrieval pairs (factual only)."""

    query_type: str
    pairs: tuple[CategorySearchPair, ...] = field(default=())

    def __post_init__(self) -> None:
        if self.query_type not in QUERY_TYPES:
            raise ValueError(f"query_type must be one of {QUERY_TYPES}, got {self.query_type!r}")
        if self.query_type != "factual" and self.pairs:
            raise ValueError("only factual classifications carry search pairs")
