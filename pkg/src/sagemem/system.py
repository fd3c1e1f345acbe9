"""Assembly: build a complete running system from a Config (or mock parts).

One KnowledgeSystem owns the store, index, strategy, orchestrator, and
consolidator. The CLI, HTTP service, and benchmark harness all drive one of
these.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Callable

from sagemem.config import Config
from sagemem.consolidation import SleepConsolidator
from sagemem.gateway import HttpTransport, LlmGateway, TeacherRegistry, TeacherService, Transport
from sagemem.metadata import SectionStore
from sagemem.pipeline import ConversationHistory, Orchestrator
from sagemem.prompts import PromptEngine
from sagemem.retrieval import ChunkRetrieval, RetrievalStrategy, SectionRetrieval
from sagemem.types import Taxonomy, utc_now
from sagemem.vectorindex import VectorIndex


@dataclass
class KnowledgeSystem:
    config: Config
    taxonomy: Taxonomy
    store: SectionStore
    index: VectorIndex
    strategy: RetrievalStrategy
    gateway: LlmGateway
    teacher: TeacherService
    orchestrator: Orchestrator
    consolidator: SleepConsolidator
    clock: Callable[[], datetime]
    persistent: bool = True

    def persist_index(self) -> None:
        if self.persistent:
            self.index.persist(self.config.vector_path)

    def stats(self) -> dict:
        pipeline_stats = self.orchestrator.stats()
        return {
            "staging_count": self.store.count("staging"),
            "canonical_count": self.store.count("canonical"),
            "cache_hit_rate": pipeline_stats["cache_hit_rate"],
            "teacher_calls_total": pipeline_stats["teacher_calls_total"],
            "queries": pipeline_stats["queries"],
        }

    def new_history(self) -> ConversationHistory:
        return ConversationHistory()

    def close(self) -> None:
        self.store.close()


def build_system(
    config: Config,
    *,
    transport: Transport | None = None,
    clock: Callable[[], datetime] | None = None,
    id_factory: Callable[[], str] | None = None,
    sleep: Callable[[float], None] | None = None,
    in_memory: bool = False,
) -> KnowledgeSystem:
    """Wire up a KnowledgeSystem.

    ``transport`` defaults to real HTTP; pass a mock/recording transport for
    offline runs. ``in_memory`` skips the on-disk store and vector file
    (used by tests and mock benchmarks).
    """
    clock = clock or utc_now
    taxonomy = Taxonomy.load(config.taxonomy_path)
    prompts = PromptEngine(config.prompts_dir)
    transport = transport or HttpTransport()
    gateway_kwargs = {} if sleep is None else {"sleep": sleep}
    gateway = LlmGateway(transport, **gateway_kwargs)

    registry = TeacherRegistry(default=config.default_teacher, teachers=config.teachers)
    teacher = TeacherService(gateway, registry, prompts, clock=clock, id_factory=id_factory)

    store = SectionStore(":memory:" if in_memory else config.db_path, taxonomy=taxonomy)
    if not in_memory and Path(config.vector_path).exists():
        index = VectorIndex.load(config.vector_path)
    else:
        index = VectorIndex()

    if config.retrieval_mode == "chunk":
        strategy: RetrievalStrategy = ChunkRetrieval(
            index, store, gateway, config.embedder, top_k=config.chunk_top_k
        )
    else:
        strategy = SectionRetrieval(index, store, gateway, config.embedder)

    orchestrator = Orchestrator(
        taxonomy,
        prompts,
        gateway,
        teacher,
        strategy,
        config.local,
        similarity_threshold=config.similarity_threshold,
        pool_cap=config.pool_cap,
        generation_mode=config.generation_mode,
        clock=clock,
    )
    consolidator = SleepConsolidator(
        store,
        index,
        strategy,
        teacher,
        overlap_threshold=config.overlap_threshold,
        clock=clock,
    )
    return KnowledgeSystem(
        config=config,
        taxonomy=taxonomy,
        store=store,
        index=index,
        strategy=strategy,
        gateway=gateway,
        teacher=teacher,
        orchestrator=orchestrator,
        consolidator=consolidator,
        clock=clock,
        persistent=not in_memory,
    )


def mock_config(**overrides) -> Config:
    """A Config pointing at mock endpoints and bundled assets."""
    from sagemem.mocks import MOCK_EMBEDDER, MOCK_JUDGE, MOCK_LOCAL, MOCK_TEACHER

    kwargs = dict(
        local=MOCK_LOCAL,
        embedder=MOCK_EMBEDDER,
        judge=MOCK_JUDGE,
        default_teacher=MOCK_TEACHER,
    )
    kwargs.update(overrides)
    config = Config(**kwargs)
    config.validate()
    return config


def build_mock_system(
    *,
    config: Config | None = None,
    clock=None,
    local=None,
    teacher=None,
    judge=None,
    embed_dim: int | None = None,
    record: bool = False,
    **config_overrides,
):
    """A fully offline system on the deterministic mock stack.

    Returns (system, mock_transport, recording_transport_or_None).
    """
    from sagemem.mocks import (
        DEFAULT_EMBED_DIM,
        ManualClock,
        MockTransport,
        RecordingTransport,
        ScriptedLocalModel,
        SequenceIds,
    )

    config = config or mock_config(**config_overrides)
    clock = clock or ManualClock()
    taxonomy = Taxonomy.load(config.taxonomy_path)
    if local is None:
        local = ScriptedLocalModel(taxonomy=tuple(taxonomy))
    mock = MockTransport(
        local=local,
        teacher=teacher,
        judge=judge,
        embed_dim=embed_dim or DEFAULT_EMBED_DIM,
    )
    transport = RecordingTransport(mock) if record else mock
    system = build_system(
        config,
        transport=transport,
        clock=clock,
        id_factory=SequenceIds(),
        sleep=lambda _s: None,
        in_memory=True,
    )
    return system, mock, (transport if record else None)
