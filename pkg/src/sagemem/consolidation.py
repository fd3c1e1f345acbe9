"""The offline sleep cycle: staging drains into the canonical store.

Processing order is section age (created_at, then id). For each staged
section, in one pass:

1. Ephemeral (ttl 0) or expired sections are discarded outright.
2. Otherwise its document-level embedding is searched against canonical
   material of the same category. No overlap at or above the threshold means
   a direct promotion (the only path that moves a section unchanged).
3. Overlap means the category's teacher compiles the staged section together
   with everything it overlapped; the outputs replace all of the inputs in
   the canonical store in one atomic swap. An empty compile result just
   deletes the staged section — the canonical store is already sufficient.

Expiry is judged against the cycle's start time, so a section can't age out
halfway through a run. Sections promoted earlier in the same cycle are live
overlap targets for later ones (material staged minutes apart converges);
compile *outputs*, though, are excluded until the next cycle so a pathological
teacher can't feed the cycle forever. A teacher failure leaves the staged
section where it is — it stays in staging for the next cycle (deferred).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import datetime
from typing import Callable

from sagemem.gateway import GatewayError, TeacherService
from sagemem.metadata import SectionStore
from sagemem.retrieval import RetrievalStrategy
from sagemem.types import CANONICAL, STAGING, Section, is_expired, utc_now
from sagemem.vectorindex import DOC, VectorIndex

logger = logging.getLogger(__name__)

DEFAULT_OVERLAP_THRESHOLD = 0.85


class ConsolidationError(Exception):
    pass


@dataclass
class CompileEvent:
    """One teacher compile: which sections went in, which came out."""

    staged_id: str
    overlap_ids: list[str]
    output_ids: list[str]


@dataclass
class ConsolidationReport:
    started_at: datetime
    finished_at: datetime | None = None
    staging_in: int = 0
    discarded: int = 0
    direct_moves: int = 0
    compile_calls: int = 0
    compiled_out: int = 0
    canonical_consumed: int = 0
    deferred: int = 0
    canonical_before: int = 0
    canonical_after: int = 0
    compile_events: list[CompileEvent] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "started_at": self.started_at.isoformat(),
            "finished_at": self.finished_at.isoformat() if self.finished_at else None,
            "staging_in": self.staging_in,
            "discarded": self.discarded,
            "direct_moves": self.direct_moves,
            "compile_calls": self.compile_calls,
            "compiled_out": self.compiled_out,
            "canonical_consumed": self.canonical_consumed,
            "deferred": self.deferred,
            "canonical_before": self.canonical_before,
            "canonical_after": self.canonical_after,
            "compile_events": [
                {"staged_id": e.staged_id, "overlap_ids": e.overlap_ids, "output_ids": e.output_ids}
                for e in self.compile_events
            ],
        }


class SleepConsolidator:
    """Runs sleep cycles over one store/index pair."""

    def __init__(
        self,
        store: SectionStore,
        index: VectorIndex,
        strategy: RetrievalStrategy,
        teacher: TeacherService,
        *,
        overlap_threshold: float = DEFAULT_OVERLAP_THRESHOLD,
        clock: Callable[[], datetime] = utc_now,
    ):
        self.store = store
        self.index = index
        self.strategy = strategy
        self.teacher = teacher
        self.overlap_threshold = overlap_threshold
        self.clock = clock

    def detect_overlaps(self, section: Section, exclude_ids: set[str]) -> list[Section]:
        """Canonical same-category sections overlapping a staged section.

        Compares document-level embeddings only; similarity >= threshold,
        best first. ``exclude_ids`` filters out this cycle's compile outputs.
        """
        vector = self.strategy.doc_vector(section.id, STAGING)
        hits = self.index.search(
            (CANONICAL,), vector, section.category, self.overlap_threshold, limit=None, kind=DOC
        )
        overlaps = []
        for hit in hits:
            if hit.section_id in exclude_ids:
                continue
            match = self.store.get(hit.section_id)
            if match is None:
                raise ConsolidationError(
                    f"index hit {hit.section_id!r} in canonical has no metadata row"
                )
            overlaps.append(match)
        return overlaps

    def _discard(self, section: Section) -> None:
        removals = self.strategy.deindex_section(section.id, STAGING)
        self.store.delete(section.id)
        if removals:
            self.index.replace(removals, [])

    def _promote(self, section: Section) -> None:
        self.store.move_store(section.id, CANONICAL)
        self.index.move_section(section.id, STAGING, CANONICAL)

    def _compile(self, section: Section, overlaps: list[Section], report: ConsolidationReport, exclude: set[str]) -> None:
        outputs = [s.with_store(CANONICAL) for s in self.teacher.compile(section, overlaps)]
        report.compile_calls += 1
        report.compile_events.append(
            CompileEvent(
                staged_id=section.id,
                overlap_ids=[s.id for s in overlaps],
                output_ids=[s.id for s in outputs],
            )
        )

        if not outputs:
            # the canonical material already covers it; only the staged copy goes
            self._discard(section)
            return

        # embed first so a gateway failure defers the section with nothing changed
        additions = []
        for output in outputs:
            additions.extend(self.strategy.build_records(output))
        removals = self.strategy.deindex_section(section.id, STAGING)
        for overlap in overlaps:
            removals.extend(self.strategy.deindex_section(overlap.id, CANONICAL))

        # staged + consumed canonical out, outputs in: one transaction, one swap
        self.store.transactional_replace([section.id] + [s.id for s in overlaps], outputs)
        self.index.replace(removals, additions)

        report.compiled_out += len(outputs)
        report.canonical_consumed += len(overlaps)
        exclude.update(s.id for s in outputs)

    def sleep_cycle(self) -> ConsolidationReport:
        """Drain staging. Returns the accounting report."""
        now = self.clock()
        report = ConsolidationReport(started_at=now)
        report.canonical_before = self.store.count(CANONICAL)

        staged = self.store.list(store=STAGING)  # created_at then id order
        report.staging_in = len(staged)
        compile_outputs: set[str] = set()

        for section in staged:
            if section.refresh_minutes == 0 or is_expired(section, now):
                self._discard(section)
                report.discarded += 1
                continue
            try:
                overlaps = self.detect_overlaps(section, compile_outputs)
                if not overlaps:
                    self._promote(section)
                    report.direct_moves += 1
                else:
                    self._compile(section, overlaps, report, compile_outputs)
            except GatewayError as exc:
                logger.warning("teacher unavailable for %r; deferring to next cycle: %s", section.id, exc)
                report.deferred += 1
                continue

        report.canonical_after = self.store.count(CANONICAL)
        report.finished_at = self.clock()

        remaining = self.store.count(STAGING)
        if remaining != report.deferred:
            raise ConsolidationError(
                f"staging should hold only deferred sections after a cycle: {remaining} left, {report.deferred} deferred"
            )
        return report
