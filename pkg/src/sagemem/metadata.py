"""SQLite-backed section metadata store — the source of truth for sections.

The vector index is derived data; this store owns section rows. Timestamps
are persisted as UTC epoch milliseconds. Writes are serialized through one
connection + lock; ``transactional_replace`` gives consolidation and refresh
their all-or-nothing delete+insert.

Schema changes go through numbered migrations recorded in the
``schema_migrations`` table.
"""

from __future__ import annotations

import logging
import sqlite3
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Sequence

from sagemem.types import CANONICAL, STAGING, STORES, Section, Taxonomy

logger = logging.getLogger(__name__)


class MetadataError(Exception):
    """Base class for metadata store failures."""


class UnknownSectionError(MetadataError):
    pass


class CategoryNotCanonicalError(MetadataError):
    """A write carried a category that is not byte-equal to a taxonomy entry."""


# Numbered migrations; each runs at most once, recorded in schema_migrations.
_MIGRATIONS: list[tuple[int, str]] = [
    (
        1,
        """
        CREATE TABLE sections (
            id              TEXT PRIMARY KEY,
            topic           TEXT NOT NULL,
            summary         TEXT NOT NULL,
            content         TEXT NOT NULL,
            refresh_minutes INTEGER NOT NULL CHECK (refresh_minutes >= 0),
            category        TEXT NOT NULL,
            created_at      INTEGER NOT NULL,
            store           TEXT NOT NULL CHECK (store IN ('staging', 'canonical'))
        );
        CREATE INDEX idx_sections_store ON sections (store);
        CREATE INDEX idx_sections_category ON sections (category);
        """,
    ),
]


def _to_millis(dt: datetime) -> int:
    return round(dt.timestamp() * 1000)


def _from_millis(ms: int) -> datetime:
    return datetime.fromtimestamp(ms / 1000.0, tz=timezone.utc)


class SectionStore:
    """Persistent section metadata with transactional replace.

    When built with a taxonomy, every write asserts that section categories
    are canonical (normalization is the caller's job; this is the backstop).
    """

    def __init__(self, path: str | Path = ":memory:", taxonomy: Taxonomy | None = None):
        self.path = str(path)
        self.taxonomy = taxonomy
        self._conn = sqlite3.connect(self.path, check_same_thread=False)
        self._conn.execute("PRAGMA foreign_keys = ON")
        self._lock = threading.RLock()
        self._migrate()

    # -- schema ---------------------------------------------------------------

    def _migrate(self) -> None:
        with self._lock:
            self._conn.execute(
                "CREATE TABLE IF NOT EXISTS schema_migrations (version INTEGER PRIMARY KEY, applied_at TEXT NOT NULL)"
            )
            applied = {row[0] for row in self._conn.execute("SELECT version FROM schema_migrations")}
            for version, ddl in _MIGRATIONS:
                if version in applied:
                    continue
                logger.info("applying metadata migration %d", version)
                self._conn.executescript(ddl)
                self._conn.execute(
                    "INSERT INTO schema_migrations (version, applied_at) VALUES (?, ?)",
                    (version, datetime.now(timezone.utc).isoformat()),
                )
            self._conn.commit()

    def migration_versions(self) -> list[int]:
        with self._lock:
            return [row[0] for row in self._conn.execute("SELECT version FROM schema_migrations ORDER BY version")]

    # -- validation -----------------------------------------------------------

    def _check_category(self, section: Section) -> None:
        if self.taxonomy is not None and section.category not in self.taxonomy:
            raise CategoryNotCanonicalError(
                f"category {section.category!r} is not a canonical taxonomy entry; normalize before persisting"
            )

    # -- row mapping ------------------------------------------------------------

    @staticmethod
    def _row_to_section(row: Sequence) -> Section:
        return Section(
            id=row[0],
            topic=row[1],
            summary=row[2],
            content=row[3],
            refresh_minutes=row[4],
            category=row[5],
            created_at=_from_millis(row[6]),
            store=row[7],
        )

    _COLUMNS = "id, topic, summary, content, refresh_minutes, category, created_at, store"

    @classmethod
    def _section_params(cls, section: Section) -> tuple:
        return (
            section.id,
            section.topic,
            section.summary,
            section.content,
            section.refresh_minutes,
            section.category,
            _to_millis(section.created_at),
            section.store,
        )

    # -- operations -------------------------------------------------------------

    def upsert(self, section: Section) -> None:
        self._check_category(section)
        with self._lock:
            self._conn.execute(
                f"INSERT OR REPLACE INTO sections ({self._COLUMNS}) VALUES (?, ?, ?, ?, ?, ?, ?, ?)",
                self._section_params(section),
            )
            self._conn.commit()

    def get(self, section_id: str) -> Section | None:
        with self._lock:
            row = self._conn.execute(
                f"SELECT {self._COLUMNS} FROM sections WHERE id = ?", (section_id,)
            ).fetchone()
        return self._row_to_section(row) if row else None

    def delete(self, section_id: str) -> None:
        with self._lock:
            cur = self._conn.execute("DELETE FROM sections WHERE id = ?", (section_id,))
            if cur.rowcount == 0:
                self._conn.rollback()
                raise UnknownSectionError(f"no section with id {section_id!r}")
            self._conn.commit()

    def list(self, store: str | None = None, category: str | None = None) -> list[Section]:
        """Sections filtered by store/category, ordered by created_at then id."""
        clauses = []
        params: list = []
        if store is not None:
            if store not in STORES:
                raise MetadataError(f"unknown store {store!r}")
            clauses.append("store = ?")
            params.append(store)
        if category is not None:
            clauses.append("category = ?")
            params.append(category)
        where = f" WHERE {' AND '.join(clauses)}" if clauses else ""
        sql = f"SELECT {self._COLUMNS} FROM sections{where} ORDER BY created_at ASC, id ASC"
        with self._lock:
            rows = self._conn.execute(sql, params).fetchall()
        return [self._row_to_section(row) for row in rows]

    def count(self, store: str | None = None) -> int:
        with self._lock:
            if store is None:
                return self._conn.execute("SELECT COUNT(*) FROM sections").fetchone()[0]
            if store not in STORES:
                raise MetadataError(f"unknown store {store!r}")
            return self._conn.execute("SELECT COUNT(*) FROM sections WHERE store = ?", (store,)).fetchone()[0]

    def transactional_replace(self, removals: Iterable[str], additions: Iterable[Section]) -> None:
        """Delete ``removals`` and insert ``additions`` as one transaction.

        Any failure (unknown removal id, duplicate insert, non-canonical
        category) rolls the whole thing back.
        """
        removals = list(removals)
        additions = list(additions)
        with self._lock:
            try:
                for section_id in removals:
                    cur = self._conn.execute("DELETE FROM sections WHERE id = ?", (section_id,))
                    if cur.rowcount == 0:
                        raise UnknownSectionError(f"no section with id {section_id!r}")
                for section in additions:
                    self._check_category(section)
                    self._conn.execute(
                        f"INSERT INTO sections ({self._COLUMNS}) VALUES (?, ?, ?, ?, ?, ?, ?, ?)",
                        self._section_params(section),
                    )
            except Exception:
                self._conn.rollback()
                raise
            else:
                self._conn.commit()

    def move_store(self, section_id: str, destination: str) -> None:
        if destination not in STORES:
            raise MetadataError(f"unknown store {destination!r}")
        with self._lock:
            cur = self._conn.execute("UPDATE sections SET store = ? WHERE id = ?", (destination, section_id))
            if cur.rowcount == 0:
                self._conn.rollback()
                raise UnknownSectionError(f"no section with id {section_id!r}")
            self._conn.commit()

    def close(self) -> None:
        with self._lock:
            self._conn.close()
