"""The online answer path: classify -> retrieve -> refresh -> generate.

Conversational and coding queries bypass the knowledge machinery entirely and
go straight to the local model. Factual queries run the two-pool gather,
refresh any expired store hits inline through the teachers, then generate an
answer grounded in the surviving sections.

Every stage failure surfaces as a PipelineError tagged with the stage name.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from datetime import datetime
from typing import Callable, Mapping, Sequence

from sagemem.gateway import (
    GatewayError,
    JsonExtractionError,
    LlmGateway,
    ModelEndpoint,
    TeacherService,
    extract_json,
)
from sagemem.prompts import PromptEngine
from sagemem.retrieval import DEFAULT_POOL_CAP, RetrievalStrategy, gather_pools
from sagemem.types import (
    CategorySearchPair,
    QueryClassification,
    Section,
    Taxonomy,
    is_expired,
    normalize_category,
    normalize_pairs,
    utc_now,
)

logger = logging.getLogger(__name__)

GENERATION_MODES = ("suppress", "augment")

ROUTE_FACTUAL = "factual"
ROUTE_CODING = "coding_bypass"
ROUTE_CONVERSATIONAL = "conversational_bypass"

_BYPASS_ROUTES = {"coding": ROUTE_CODING, "conversational": ROUTE_CONVERSATIONAL}

# Leading words stripped when falling back to the raw query as a search string.
_INTERROGATIVES = {
    "what", "whats", "who", "whom", "whose", "when", "where", "why", "how",
    "which", "is", "are", "was", "were", "do", "does", "did", "can", "could",
    "will", "would", "should", "shall", "may", "might", "tell", "me", "about",
    "explain", "describe", "define", "a", "an", "the",
}


class PipelineError(Exception):
    """A stage of the answer path failed; ``stage`` names which one."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def strip_interrogatives(query: str) -> str:
    """Drop leading question words and trailing punctuation from a query.

    Used when the classifier produced no usable pairs and the raw query has
    to serve as the search string. Never returns an empty string.
    """
    words = query.strip().rstrip("?!.").split()
    i = 0
    while i < len(words) and re.sub(r"[^a-z]", "", words[i].lower()) in _INTERROGATIVES:
        i += 1
    stripped = " ".join(words[i:]).strip()
    return stripped if stripped else query.strip()


# =============================================================================
# Conversation state
# =============================================================================


@dataclass(frozen=True)
class ConversationTurn:
    user: str
    assistant: str


class ConversationHistory:
    """Per-session turn log, rendered into prompts."""

    def __init__(self, turns: Sequence[ConversationTurn] = ()):
        self.turns: list[ConversationTurn] = list(turns)

    def add(self, user: str, assistant: str) -> None:
        self.turns.append(ConversationTurn(user=user, assistant=assistant))

    def transcript(self) -> str:
        if not self.turns:
            return "(no prior turns)"
        lines = []
        for turn in self.turns:
            lines.append(f"User: {turn.user}")
            lines.append(f"Assistant: {turn.assistant}")
        return "\n".join(lines)

    def as_messages(self) -> list[dict[str, str]]:
        messages: list[dict[str, str]] = []
        for turn in self.turns:
            messages.append({"role": "user", "content": turn.user})
            messages.append({"role": "assistant", "content": turn.assistant})
        return messages

    def __len__(self) -> int:
        return len(self.turns)


# =============================================================================
# Responses
# =============================================================================


@dataclass
class QueryMetrics:
    pairs: int = 0
    cache_hits: int = 0
    teacher_calls: int = 0
    refreshed_sections: int = 0
    latency_ms: float = 0.0

    def to_dict(self) -> dict:
        return {
            "pairs": self.pairs,
            "cache_hits": self.cache_hits,
            "teacher_calls": self.teacher_calls,
            "refreshed_sections": self.refreshed_sections,
            "latency_ms": self.latency_ms,
        }


@dataclass
class QueryResponse:
    answer: str
    route: str
    references: list[dict[str, str]] = field(default_factory=list)
    metrics: QueryMetrics = field(default_factory=QueryMetrics)
    degraded: bool = False  # stale sections served or raw-text fallback used
    mode: str | None = None

    def to_dict(self) -> dict:
        return {
            "answer": self.answer,
            "route": self.route,
            "references": self.references,
            "metrics": self.metrics.to_dict(),
            "degraded": self.degraded,
            "mode": self.mode,
        }


@dataclass
class RefreshResult:
    """Outcome of one inline refresh pass."""

    replacements: list[Section] = field(default_factory=list)
    refreshed_originals: int = 0
    calls: int = 0
    failed_categories: set[str] = field(default_factory=set)


@dataclass
class PreparedQuery:
    """Everything up to (but not including) generation, reusable across modes."""

    query: str
    route: str
    classification: QueryClassification
    sections: list[Section]
    history_messages: list[dict[str, str]]
    store_hit: bool
    metrics: QueryMetrics
    degraded: bool
    started_at: datetime


# =============================================================================
# Section block rendering (the scripted mocks parse this exact shape)
# =============================================================================


def render_sections_block(sections: Sequence[Section]) -> str:
    blocks = []
    for i, section in enumerate(sections, start=1):
        blocks.append(f"[{i}] id={section.id} topic={section.topic}\n{section.content}")
    return "\n\n".join(blocks) if blocks else "(none)"


_SECTION_HEADER_RE = re.compile(r"^\[(\d+)\] id=(\S+) topic=(.*)$", re.MULTILINE)


def parse_sections_block(block: str) -> list[dict[str, str]]:
    """Inverse of render_sections_block, good enough for scripted models."""
    entries = []
    headers = list(_SECTION_HEADER_RE.finditer(block))
    for j, match in enumerate(headers):
        end = headers[j + 1].start() if j + 1 < len(headers) else len(block)
        body = block[match.end() : end].strip("\n")
        entries.append(
            {
                "number": match.group(1),
                "id": match.group(2),
                "topic": match.group(3).strip(),
                "content": body.strip(),
            }
        )
    return entries


# =============================================================================
# Orchestrator
# =============================================================================


class Orchestrator:
    """Owns the online path; one instance serves many sessions."""

    def __init__(
        self,
        taxonomy: Taxonomy,
        prompts: PromptEngine,
        gateway: LlmGateway,
        teacher: TeacherService,
        strategy: RetrievalStrategy,
        local_endpoint: ModelEndpoint,
        *,
        similarity_threshold: float = 0.80,
        pool_cap: int = DEFAULT_POOL_CAP,
        generation_mode: str = "suppress",
        clock: Callable[[], datetime] = utc_now,
    ):
        if generation_mode not in GENERATION_MODES:
            raise ValueError(f"generation_mode must be one of {GENERATION_MODES}, got {generation_mode!r}")
        self.taxonomy = taxonomy
        self.prompts = prompts
        self.gateway = gateway
        self.teacher = teacher
        self.strategy = strategy
        self.local_endpoint = local_endpoint
        self.similarity_threshold = similarity_threshold
        self.pool_cap = pool_cap
        self.generation_mode = generation_mode
        self.clock = clock
        # running totals surfaced by /stats
        self.totals = {"queries": 0, "factual_queries": 0, "store_hits": 0, "teacher_calls": 0}

    # -- classify --------------------------------------------------------------

    def classify(self, query: str, history: ConversationHistory) -> QueryClassification:
        """Route the query and derive category/search pairs via the local model."""
        taxonomy_listing = "\n".join(f"- {name}" for name in self.taxonomy)
        prompt = self.prompts.render(
            "classify",
            taxonomy=taxonomy_listing,
            history=history.transcript(),
            query=query,
        )
        try:
            raw = self.gateway.chat(
                self.local_endpoint, [{"role": "user", "content": prompt}], role_kind="classify", op="classify"
            )
            payload = extract_json(raw)
        except GatewayError as exc:
            raise PipelineError("classify", str(exc)) from exc

        if not isinstance(payload, Mapping):
            raise PipelineError("classify", f"classifier returned non-object JSON: {payload!r}")
        query_type = payload.get("query_type")
        if not isinstance(query_type, str) or query_type.strip().lower() not in ("factual", "coding", "conversational"):
            raise PipelineError("classify", f"unrecognized query_type: {query_type!r}")
        query_type = query_type.strip().lower()

        if query_type != "factual":
            return QueryClassification(query_type=query_type)

        raw_pairs = payload.get("pairs", [])
        if not isinstance(raw_pairs, list):
            raw_pairs = []
        pairs = normalize_pairs(raw_pairs, self.taxonomy)
        if not pairs:
            pairs = [self._fallback_pair(query, raw_pairs)]
        return QueryClassification(query_type="factual", pairs=tuple(pairs))

    def _fallback_pair(self, query: str, raw_pairs: list) -> CategorySearchPair:
        """A factual query must retrieve something: synthesize one pair."""
        category = None
        for raw in raw_pairs:
            if isinstance(raw, Mapping) and isinstance(raw.get("category"), str):
                category = normalize_category(raw["category"], self.taxonomy)
                if category:
                    break
        if category is None:
            category = normalize_category(query, self.taxonomy)
        if category is None:
            category = self.taxonomy.categories[0]
        return CategorySearchPair(category=category, search=strip_interrogatives(query))

    # -- refresh ----------------------------------------------------------------

    def inline_refresh(
        self, expired: Sequence[Section], now: datetime
    ) -> "RefreshResult":
        """Replace expired sections through their teachers, one call per category.

        On teacher failure the category's originals stay persisted (to be
        served stale); on success the originals are deleted and de-indexed
        atomically in favor of their successors.
        """
        result = RefreshResult()
        by_category: dict[str, list[Section]] = {}
        for section in expired:
            by_category.setdefault(section.category, []).append(section)

        for category, originals in sorted(by_category.items()):
            result.calls += 1
            try:
                fresh = self.teacher.refresh(originals)
            except GatewayError as exc:
                logger.warning("refresh failed for category %s; serving stale: %s", category, exc)
                result.failed_categories.add(category)
                continue
            # successors in, originals out: metadata first, then one index swap
            self.strategy.store.transactional_replace([s.id for s in originals], fresh)
            removals: list[tuple[str, str]] = []
            for original in originals:
                removals.extend(self.strategy.deindex_section(original.id, original.store))
            additions = []
            for section in fresh:
                additions.extend(self.strategy.build_records(section))
            self.strategy.index.replace(removals, additions)
            result.replacements.extend(fresh)
            result.refreshed_originals += len(originals)
        return result

    # -- generate ---------------------------------------------------------------

    def generate(self, query: str, sections: Sequence[Section], mode: str) -> tuple[str, list[dict[str, str]], bool]:
        """One grounded generation pass. Returns (answer, references, fallback flag)."""
        if mode not in GENERATION_MODES:
            raise PipelineError("generate", f"unknown generation mode {mode!r}")
        if mode == "suppress" and not sections:
            raise PipelineError("generate", "suppress mode requires at least one knowledge section")
        prompt = self.prompts.render(
            f"generate_{mode}",
            sections=render_sections_block(sections),
            query=query,
        )
        try:
            raw = self.gateway.chat(
                self.local_endpoint,
                [{"role": "user", "content": prompt}],
                role_kind="generate",
                op=f"generate.{mode}",
            )
        except GatewayError as exc:
            raise PipelineError("generate", str(exc)) from exc

        by_id = {s.id: s for s in sections}
        by_number = {str(i): s for i, s in enumerate(sections, start=1)}
        try:
            payload = extract_json(raw)
            answer = payload.get("answer") if isinstance(payload, Mapping) else None
            if not isinstance(answer, str) or not answer.strip():
                raise JsonExtractionError(raw)
        except JsonExtractionError:
            # the model ignored the output contract; serve its text, flagged
            return raw, [], True

        references: list[dict[str, str]] = []
        seen: set[str] = set()
        raw_refs = payload.get("references", []) if isinstance(payload, Mapping) else []
        if isinstance(raw_refs, list):
            for ref in raw_refs:
                section = None
                if isinstance(ref, str):
                    section = by_id.get(ref) or by_number.get(ref.strip())
                elif isinstance(ref, int) and not isinstance(ref, bool):
                    section = by_number.get(str(ref))
                if section is not None and section.id not in seen:
                    seen.add(section.id)
                    references.append({"id": section.id, "topic": section.topic})
        return answer, references, False

    # -- full turn ---------------------------------------------------------------

    def prepare(self, query: str, history: ConversationHistory) -> PreparedQuery:
        """Run everything before generation: classify, gather, refresh."""
        started_at = self.clock()
        classification = self.classify(query, history)

        if classification.query_type in _BYPASS_ROUTES:
            return PreparedQuery(
                query=query,
                route=_BYPASS_ROUTES[classification.query_type],
                classification=classification,
                sections=[],
                history_messages=history.as_messages(),
                store_hit=False,
                metrics=QueryMetrics(),
                degraded=False,
                started_at=started_at,
            )

        try:
            pools = gather_pools(
                classification,
                self.strategy,
                self.teacher,
                threshold=self.similarity_threshold,
                cap=self.pool_cap,
                now=started_at,
            )
        except GatewayError as exc:
            raise PipelineError("retrieve", str(exc)) from exc

        expired = [s for s, _ in pools.store_pool if is_expired(s, started_at)]
        try:
            refresh = self.inline_refresh(expired, started_at)
        except GatewayError as exc:
            raise PipelineError("refresh", str(exc)) from exc

        # Store pool in rank order with expired entries dropped in favor of
        # their successors; a category whose refresh failed keeps its stale
        # originals (availability beats freshness here).
        expired_ids = {s.id for s in expired}
        surviving: list[Section] = []
        for section, _ in pools.store_pool:
            if section.id not in expired_ids:
                surviving.append(section)
            elif section.category in refresh.failed_categories:
                surviving.append(section)  # stale but the teacher was unavailable
        sections = surviving + refresh.replacements + list(pools.teacher_pool)

        metrics = QueryMetrics(
            pairs=len(classification.pairs),
            cache_hits=pools.cache_hits,
            teacher_calls=pools.teacher_calls + refresh.calls,
            refreshed_sections=refresh.refreshed_originals,
        )
        return PreparedQuery(
            query=query,
            route=ROUTE_FACTUAL,
            classification=classification,
            sections=sections,
            history_messages=history.as_messages(),
            store_hit=pools.cache_hits > 0,
            metrics=metrics,
            degraded=pools.degraded or bool(refresh.failed_categories),
            started_at=started_at,
        )

    def respond(self, prepared: PreparedQuery, mode: str | None = None) -> QueryResponse:
        """Generate from a prepared query (one generation call per mode)."""
        mode = mode or self.generation_mode
        if prepared.route != ROUTE_FACTUAL:
            messages = [{"role": "system", "content": self.prompts.render("chat_direct")}]
            messages.extend(prepared.history_messages)
            messages.append({"role": "user", "content": prepared.query})
            try:
                answer = self.gateway.chat(self.local_endpoint, messages, role_kind="generate", op="generate.direct")
            except GatewayError as exc:
                raise PipelineError("generate", str(exc)) from exc
            return QueryResponse(answer=answer, route=prepared.route, mode=mode, metrics=prepared.metrics)

        answer, references, fallback = self.generate(prepared.query, prepared.sections, mode)
        return QueryResponse(
            answer=answer,
            route=ROUTE_FACTUAL,
            references=references,
            metrics=prepared.metrics,
            degraded=prepared.degraded or fallback,
            mode=mode,
        )

    def answer_query(
        self, query: str, history: ConversationHistory, mode: str | None = None
    ) -> QueryResponse:
        """The full turn: prepare, generate, record the turn in history."""
        prepared = self.prepare(query, history)
        response = self.respond(prepared, mode=mode)
        finished = self.clock()
        response.metrics.latency_ms = max(0.0, (finished - prepared.started_at).total_seconds() * 1000.0)

        self.totals["queries"] += 1
        if prepared.route == ROUTE_FACTUAL:
            self.totals["factual_queries"] += 1
            if prepared.store_hit:
                self.totals["store_hits"] += 1
            self.totals["teacher_calls"] += prepared.metrics.teacher_calls
        history.add(query, response.answer)
        return response

    def stats(self) -> dict:
        factual = self.totals["factual_queries"]
        return {
            "queries": self.totals["queries"],
            "cache_hit_rate": (self.totals["store_hits"] / factual) if factual else 0.0,
            "teacher_calls_total": self.totals["teacher_calls"],
        }
