"""Retrieval: embedding strategies over the index plus the two-pool gather.

Two interchangeable strategies decide what gets embedded per section:

* section — one embedding of the whole composite text (topic, summary,
  content). Simple, one vector per section.
* chunk — fixed-size character windows over the content (500 chars,
  100 overlap), retrieved individually and deduplicated back to their
  parent sections. Better for long sections.

Both keep a document-level embedding per section; consolidation's overlap
detection always works on those, regardless of strategy.

``gather_pools`` runs every category/search pair of a classification against
the index and splits results into two pools: sections that were already
stored (ranked, capped) and sections freshly written by teachers for pairs
that found nothing.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from datetime import datetime
from typing import Sequence

import numpy as np

from sagemem.gateway import GatewayError, LlmGateway, ModelEndpoint, TeacherService
from sagemem.metadata import SectionStore
from sagemem.types import CANONICAL, STAGING, CategorySearchPair, QueryClassification, Section, is_expired
from sagemem.vectorindex import CHUNK, DOC, EmbeddingRecord, VectorIndex

logger = logging.getLogger(__name__)

CHUNK_SIZE = 500
CHUNK_OVERLAP = 100
DEFAULT_CHUNK_TOP_K = 8
DEFAULT_POOL_CAP = 15


class RetrievalError(Exception):
    pass


class IndexConsistencyError(RetrievalError):
    """The index pointed at a section the metadata store does not have."""


# =============================================================================
# Chunking
# =============================================================================


def chunk_text(content: str, size: int = CHUNK_SIZE, overlap: int = CHUNK_OVERLAP) -> list[str]:
    """Fixed-size character windows with overlap.

    Offsets are 0, size-overlap, 2*(size-overlap), ...; generation stops once
    an offset reaches the end of the text, so every character lands in at
    least one chunk and adjacent chunks share exactly ``overlap`` characters
    (less only at the tail, where the final chunk may be short).
    """
    if size <= 0:
        raise ValueError(f"chunk size must be positive, got {size}")
    if not (0 <= overlap < size):
        raise ValueError(f"overlap must satisfy 0 <= overlap < size, got {overlap}")
    stride = size - overlap
    chunks: list[str] = []
    start = 0
    while start < len(content):
        chunks.append(content[start : start + size])
        start += stride
    return chunks


def composite_text(section: Section) -> str:
    """The document-level text both strategies embed: topic, summary, content."""
    return f"{section.topic}\n\n{section.summary}\n\n{section.content}"


def chunk_record_id(section_id: str, i: int) -> str:
    return f"{section_id}::chunk{i}"


# =============================================================================
# Strategies
# =============================================================================


class RetrievalStrategy(ABC):
    """Indexing + retrieval policy bound to an index, store, and embedder."""

    mode: str

    def __init__(
        self,
        index: VectorIndex,
        store: SectionStore,
        gateway: LlmGateway,
        embed_endpoint: ModelEndpoint,
    ):
        self.index = index
        self.store = store
        self.gateway = gateway
        self.embed_endpoint = embed_endpoint

    def embed_texts(self, texts: list[str]) -> list[np.ndarray]:
        return self.gateway.embed(self.embed_endpoint, texts)

    @abstractmethod
    def build_records(self, section: Section) -> list[EmbeddingRecord]:
        """Embed a section into the records this strategy maintains for it."""

    def index_section(self, section: Section) -> None:
        """Embed and add a persisted section's records to its collection."""
        if self.store.get(section.id) is None:
            raise IndexConsistencyError(f"section {section.id!r} must be persisted before indexing")
        self.index.replace([], self.build_records(section))

    def deindex_section(self, section_id: str, collection: str) -> list[tuple[str, str]]:
        """Return the (record_id, collection) pairs a section holds (for replace calls)."""
        records = self.index.records_for_section(section_id, collection)
        return [(r.record_id, collection) for r in records]

    def doc_vector(self, section_id: str, collection: str) -> np.ndarray:
        """The stored document-level vector for a section."""
        for record in self.index.records_for_section(section_id, collection):
            if record.kind == DOC:
                return record.vector
        raise IndexConsistencyError(f"no document-level record for section {section_id!r} in {collection!r}")

    @abstractmethod
    def retrieve(self, pair: CategorySearchPair, threshold: float) -> list[tuple[Section, float]]:
        """Sections matching the pair at or above threshold, best first."""

    def _hydrate(self, section_id: str) -> Section:
        section = self.store.get(section_id)
        if section is None:
            raise IndexConsistencyError(f"index hit for section {section_id!r} missing from metadata store")
        return section


class SectionRetrieval(RetrievalStrategy):
    """One document-level embedding per section; hits are whole sections."""

    mode = "section"

    def build_records(self, section: Section) -> list[EmbeddingRecord]:
        [vector] = self.embed_texts([composite_text(section)])
        return [
            EmbeddingRecord(
                record_id=section.id,
                section_id=section.id,
                vector=vector,
                topic=section.topic,
                summary=section.summary,
                category=section.category,
                collection=section.store,
                kind=DOC,
            )
        ]

    def retrieve(self, pair: CategorySearchPair, threshold: float) -> list[tuple[Section, float]]:
        [query_vector] = self.embed_texts([pair.search])
        hits = self.index.search(
            (STAGING, CANONICAL), query_vector, pair.category, threshold, limit=None, kind=DOC
        )
        return [(self._hydrate(h.section_id), h.similarity) for h in hits]


class ChunkRetrieval(RetrievalStrategy):
    """Content chunks retrieved individually, deduplicated to parent sections.

    A document-level record is still kept per section (for consolidation);
    retrieval itself only searches chunk records.
    """

    mode = "chunk"

    def __init__(
        self,
        index: VectorIndex,
        store: SectionStore,
        gateway: LlmGateway,
        embed_endpoint: ModelEndpoint,
        *,
        top_k: int = DEFAULT_CHUNK_TOP_K,
        size: int = CHUNK_SIZE,
        overlap: int = CHUNK_OVERLAP,
    ):
        super().__init__(index, store, gateway, embed_endpoint)
        self.top_k = top_k
        self.size = size
        self.overlap = overlap

    def build_records(self, section: Section) -> list[EmbeddingRecord]:
        chunks = chunk_text(section.content, self.size, self.overlap)
        vectors = self.embed_texts([composite_text(section)] + chunks)
        doc_vector, chunk_vectors = vectors[0], vectors[1:]
        records = [
            EmbeddingRecord(
                record_id=section.id,
                section_id=section.id,
                vector=doc_vector,
                topic=section.topic,
                summary=section.summary,
                category=section.category,
                collection=section.store,
                kind=DOC,
            )
        ]
        for i, vector in enumerate(chunk_vectors):
            records.append(
                EmbeddingRecord(
                    record_id=chunk_record_id(section.id, i),
                    section_id=section.id,
                    vector=vector,
                    topic=section.topic,
                    summary=section.summary,
                    category=section.category,
                    collection=section.store,
                    kind=CHUNK,
                )
            )
        return records

    def retrieve(self, pair: CategorySearchPair, threshold: float) -> list[tuple[Section, float]]:
        [query_vector] = self.embed_texts([pair.search])
        hits = self.index.search(
            (STAGING, CANONICAL), query_vector, pair.category, threshold, limit=self.top_k, kind=CHUNK
        )
        best: dict[str, float] = {}
        for hit in hits:
            if hit.section_id not in best or hit.similarity > best[hit.section_id]:
                best[hit.section_id] = hit.similarity
        ordered = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))
        return [(self._hydrate(section_id), similarity) for section_id, similarity in ordered]


# =============================================================================
# Two-pool gather
# =============================================================================


@dataclass(frozen=True)
class PairOutcome:
    """What happened for one category/search pair."""

    pair: CategorySearchPair
    hits: int
    expired_hits: int
    acquired: bool
    error: str | None = None


@dataclass
class PoolResult:
    """Gathered context: stored knowledge vs fresh teacher output.

    ``store_pool`` is ranked by best similarity (max over pairs) and capped;
    ``teacher_pool`` is every section acquired this turn, uncapped. A section
    never appears in both.
    """

    store_pool: list[tuple[Section, float]] = field(default_factory=list)
    teacher_pool: list[Section] = field(default_factory=list)
    outcomes: list[PairOutcome] = field(default_factory=list)
    teacher_calls: int = 0

    @property
    def degraded(self) -> bool:
        return any(outcome.error for outcome in self.outcomes)

    @property
    def cache_hits(self) -> int:
        return sum(1 for outcome in self.outcomes if outcome.hits > 0)

    def sections(self) -> list[Section]:
        return [s for s, _ in self.store_pool] + list(self.teacher_pool)


def gather_pools(
    classification: QueryClassification,
    strategy: RetrievalStrategy,
    teacher: TeacherService,
    *,
    threshold: float,
    cap: int = DEFAULT_POOL_CAP,
    now: datetime | None = None,
) -> PoolResult:
    """Retrieve every pair; teachers fill the gaps.

    Pairs with hits contribute to the store pool under max-pooling (a section
    reached by several pairs keeps its best similarity) with a global rank-cap.
    A pair with zero hits triggers one teacher acquire; the new section is
    persisted, indexed into staging, and added to the uncapped teacher pool.
    A failing pair (embed or teacher error) is recorded and skipped — the
    other pairs still proceed.
    """
    result = PoolResult()
    best: dict[str, tuple[Section, float]] = {}
    teacher_ids: set[str] = set()

    for pair in classification.pairs:
        try:
            matches = strategy.retrieve(pair, threshold)
        except (GatewayError, RetrievalError) as exc:
            logger.warning("pair (%s, %r) failed during retrieval: %s", pair.category, pair.search, exc)
            result.outcomes.append(PairOutcome(pair=pair, hits=0, expired_hits=0, acquired=False, error=str(exc)))
            continue

        if matches:
            expired_count = sum(1 for s, _ in matches if now is not None and is_expired(s, now))
            for section, similarity in matches:
                if section.id in teacher_ids:
                    continue  # already serving this turn via the teacher pool
                held = best.get(section.id)
                if held is None or similarity > held[1]:
                    best[section.id] = (section, similarity)
            result.outcomes.append(
                PairOutcome(pair=pair, hits=len(matches), expired_hits=expired_count, acquired=False)
            )
            continue

        result.teacher_calls += 1
        try:
            section = teacher.acquire(pair.category, pair.search)
        except GatewayError as exc:
            logger.warning("teacher acquire failed for (%s, %r): %s", pair.category, pair.search, exc)
            result.outcomes.append(PairOutcome(pair=pair, hits=0, expired_hits=0, acquired=False, error=str(exc)))
            continue
        strategy.store.upsert(section)
        strategy.index_section(section)
        result.teacher_pool.append(section)
        teacher_ids.add(section.id)
        result.outcomes.append(PairOutcome(pair=pair, hits=0, expired_hits=0, acquired=True))

    ranked = sorted(best.values(), key=lambda held: (-held[1], held[0].id))
    result.store_pool = ranked[:cap]
    return result
