"""In-memory brute-force cosine index over two collections (staging/canonical).

Records are immutable; the index state is a single dict snapshot that writers
replace wholesale under a lock (copy-on-write). Readers grab the current
snapshot reference once and compute over it, so every search sees exactly one
consistent state — a replace is all-or-nothing from any reader's view.

Persistence is a line-oriented JSON file: a header line carrying the format
version, vector dimension, and record count, then one record per line with
its collection tag.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, replace as dc_replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from sagemem.types import CANONICAL, STAGING, STORES

FORMAT_VERSION = 1

DOC = "doc"
CHUNK = "chunk"
RECORD_KINDS = (DOC, CHUNK)


# =============================================================================
# Errors
# =============================================================================


class VectorIndexError(Exception):
    """Base class for index failures."""


class DuplicateRecordError(VectorIndexError):
    pass


class UnknownRecordError(VectorIndexError):
    pass


class DimensionMismatchError(VectorIndexError):
    pass


class ZeroVectorError(VectorIndexError):
    pass


class PersistenceError(VectorIndexError):
    pass


# =============================================================================
# Records and hits
# =============================================================================


@dataclass(frozen=True)
class EmbeddingRecord:
    """One indexed vector.

    ``record_id`` is the index key. Document-level records use the parent
    section's id verbatim; chunk records extend it (``<section_id>::chunk<i>``)
    so one section can own several rows while ids stay unique per collection.
    """

    record_id: str
    section_id: str
    vector: np.ndarray
    topic: str
    summary: str
    category: str
    collection: str
    kind: str = DOC

    def __post_init__(self) -> None:
        if self.collection not in STORES:
            raise VectorIndexError(f"collection must be one of {STORES}, got {self.collection!r}")
        if self.kind not in RECORD_KINDS:
            raise VectorIndexError(f"kind must be one of {RECORD_KINDS}, got {self.kind!r}")
        object.__setattr__(self, "vector", np.asarray(self.vector, dtype=np.float64))


@dataclass(frozen=True)
class SearchHit:
    record_id: str
    section_id: str
    similarity: float
    collection: str
    category: str
    kind: str


@dataclass(frozen=True)
class _Stored:
    record: EmbeddingRecord
    unit: np.ndarray  # pre-normalized vector, so search is a dot product


def _unit(vector: np.ndarray, what: str) -> np.ndarray:
    arr = np.asarray(vector, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionMismatchError(f"{what} must be a 1-d vector, got shape {arr.shape}")
    norm = float(np.linalg.norm(arr))
    if norm == 0.0 or not np.isfinite(norm):
        raise ZeroVectorError(f"{what} has zero or non-finite norm")
    return arr / norm


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; rejects zero-norm input."""
    ua = _unit(np.asarray(a, dtype=np.float64), "vector a")
    ub = _unit(np.asarray(b, dtype=np.float64), "vector b")
    if ua.shape != ub.shape:
        raise DimensionMismatchError(f"vector shapes differ: {ua.shape} vs {ub.shape}")
    return float(np.dot(ua, ub))


# =============================================================================
# Index
# =============================================================================

_Key = tuple[str, str]  # (collection, record_id)


class VectorIndex:
    """Brute-force cosine search over staging + canonical collections."""

    def __init__(self, dimension: int | None = None):
        self._dimension = dimension
        self._state: dict[_Key, _Stored] = {}
        self._write_lock = threading.Lock()

    @property
    def dimension(self) -> int | None:
        return self._dimension

    # -- write path ----------------------------------------------------------

    def _check_dimension(self, record: EmbeddingRecord) -> None:
        if self._dimension is None:
            self._dimension = int(record.vector.size)
        elif record.vector.size != self._dimension:
            raise DimensionMismatchError(
                f"record {record.record_id!r} has dimension {record.vector.size}, index holds {self._dimension}"
            )

    def add(self, record: EmbeddingRecord) -> None:
        self.replace([], [record])

    def remove(self, record_id: str, collection: str) -> None:
        self.replace([(record_id, collection)], [])

    def replace(
        self,
        removals: Sequence[tuple[str, str]],
        additions: Sequence[EmbeddingRecord],
    ) -> None:
        """Atomically remove then add. Rejects the whole batch on any problem.

        ``removals`` are (record_id, collection) pairs that must exist;
        additions must not collide with surviving ids in their collection.
        """
        with self._write_lock:
            new_state = dict(self._state)
            for record_id, collection in removals:
                if collection not in STORES:
                    raise VectorIndexError(f"unknown collection {collection!r}")
                key = (collection, record_id)
                if key not in new_state:
                    raise UnknownRecordError(f"no record {record_id!r} in collection {collection!r}")
                del new_state[key]
            for record in additions:
                self._check_dimension(record)
                key = (record.collection, record.record_id)
                if key in new_state:
                    raise DuplicateRecordError(
                        f"record {record.record_id!r} already present in collection {record.collection!r}"
                    )
                new_state[key] = _Stored(record=record, unit=_unit(record.vector, f"record {record.record_id!r}"))
            self._state = new_state  # single reference assignment = publish point

    def move_section(self, section_id: str, source: str, destination: str) -> int:
        """Move every record of a section between collections, atomically."""
        snapshot = self._state
        moving = [s.record for s in snapshot.values() if s.record.section_id == section_id and s.record.collection == source]
        if not moving:
            raise UnknownRecordError(f"no records for section {section_id!r} in collection {source!r}")
        removals = [(r.record_id, source) for r in moving]
        additions = [dc_replace(r, collection=destination) for r in moving]
        self.replace(removals, additions)
        return len(moving)

    # -- read path -----------------------------------------------------------

    def search(
        self,
        collections: Sequence[str],
        query_vector: np.ndarray,
        category: str,
        threshold: float,
        limit: int | None = None,
        kind: str | None = None,
    ) -> list[SearchHit]:
        """Cosine search over the named collections, filtered by exact category.

        Results carry similarity >= threshold, sorted by similarity descending
        with ties broken by ascending section_id then record_id. ``limit=None``
        means no truncation.
        """
        for collection in collections:
            if collection not in STORES:
                raise VectorIndexError(f"unknown collection {collection!r}")
        if limit is not None and limit < 1:
            raise VectorIndexError(f"limit must be positive or None, got {limit}")
        q = _unit(np.asarray(query_vector, dtype=np.float64), "query vector")
        snapshot = self._state  # one consistent state for the whole search
        wanted = set(collections)
        hits: list[SearchHit] = []
        for stored in snapshot.values():
            record = stored.record
            if record.collection not in wanted:
                continue
            if record.category != category:  # categories are canonical: byte-equal match
                continue
            if kind is not None and record.kind != kind:
                continue
            if stored.unit.shape != q.shape:
                raise DimensionMismatchError(
                    f"query dimension {q.size} does not match index dimension {stored.unit.size}"
                )
            similarity = float(np.dot(stored.unit, q))
            if similarity >= threshold:
                hits.append(
                    SearchHit(
                        record_id=record.record_id,
                        section_id=record.section_id,
                        similarity=similarity,
                        collection=record.collection,
                        category=record.category,
                        kind=record.kind,
                    )
                )
        hits.sort(key=lambda h: (-h.similarity, h.section_id, h.record_id))
        return hits if limit is None else hits[:limit]

    def get(self, record_id: str, collection: str) -> EmbeddingRecord | None:
        stored = self._state.get((collection, record_id))
        return stored.record if stored else None

    def records_for_section(self, section_id: str, collection: str) -> list[EmbeddingRecord]:
        snapshot = self._state
        records = [s.record for s in snapshot.values() if s.record.section_id == section_id and s.record.collection == collection]
        records.sort(key=lambda r: r.record_id)
        return records

    def count(self, collection: str | None = None) -> int:
        snapshot = self._state
        if collection is None:
            return len(snapshot)
        return sum(1 for s in snapshot.values() if s.record.collection == collection)

    def all_records(self) -> list[EmbeddingRecord]:
        records = [s.record for s in self._state.values()]
        records.sort(key=lambda r: (r.collection, r.record_id))
        return records

    # -- persistence ---------------------------------------------------------

    def persist(self, path: str | Path) -> None:
        """Write header + one JSON record per line. Atomic via temp file rename."""
        records = self.all_records()
        dimension = self._dimension if self._dimension is not None else 0
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            header = {"format": FORMAT_VERSION, "dimension": dimension, "count": len(records)}
            fh.write(json.dumps(header) + "\n")
            for record in records:
                row = {
                    "record_id": record.record_id,
                    "section_id": record.section_id,
                    "collection": record.collection,
                    "kind": record.kind,
                    "category": record.category,
                    "topic": record.topic,
                    "summary": record.summary,
                    "vector": record.vector.tolist(),
                }
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")
        tmp.replace(path)

    @classmethod
    def load(cls, path: str | Path, expected_dimension: int | None = None) -> "VectorIndex":
        path = Path(path)
        try:
            with open(path, "r", encoding="utf-8") as fh:
                lines = fh.read().splitlines()
        except OSError as exc:
            raise PersistenceError(f"cannot read index file {path}: {exc}") from exc
        if not lines:
            raise PersistenceError(f"index file {path} is empty")
        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError as exc:
            raise PersistenceError(f"corrupt index header in {path}: {exc}") from exc
        if not isinstance(header, Mapping) or header.get("format") != FORMAT_VERSION:
            raise PersistenceError(
                f"unsupported index format in {path}: expected version {FORMAT_VERSION}, got {header!r}"
            )
        dimension = header.get("dimension")
        count = header.get("count")
        if not isinstance(dimension, int) or not isinstance(count, int):
            raise PersistenceError(f"corrupt index header in {path}: {header!r}")
        if expected_dimension is not None and count > 0 and dimension != expected_dimension:
            raise PersistenceError(
                f"index file {path} has dimension {dimension}, expected {expected_dimension}"
            )
        body = [line for line in lines[1:] if line.strip()]
        if len(body) != count:
            raise PersistenceError(f"index file {path} declares {count} records but holds {len(body)}")
        index = cls(dimension=dimension if count > 0 else expected_dimension)
        additions: list[EmbeddingRecord] = []
        for lineno, line in enumerate(body, start=2):
            try:
                row = json.loads(line)
                record = EmbeddingRecord(
                    record_id=row["record_id"],
                    section_id=row["section_id"],
                    vector=np.asarray(row["vector"], dtype=np.float64),
                    topic=row["topic"],
                    summary=row["summary"],
                    category=row["category"],
                    collection=row["collection"],
                    kind=row.get("kind", DOC),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise PersistenceError(f"corrupt record at {path}:{lineno}: {exc}") from exc
            if record.vector.size != dimension:
                raise PersistenceError(
                    f"record at {path}:{lineno} has dimension {record.vector.size}, header says {dimension}"
                )
            additions.append(record)
        index.replace([], additions)
        return index
