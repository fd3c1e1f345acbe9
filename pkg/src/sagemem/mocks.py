"""Deterministic offline stand-ins for every external dependency.

These back the CLI's ``--mock`` flag and the test suite: a hash-based
embedder, scripted local/teacher/judge models keyed off the prompt they
receive, a controllable clock, and a recording transport wrapper. Everything
here is pure computation — no network, no randomness beyond seeded hashes —
so full benchmark runs are reproducible byte for byte.

The embedder hashes per token and sums (a seeded bag-of-tokens projection):
identical texts always map to identical unit vectors (cosine 1.0), texts with
disjoint tokens land nearly orthogonal, and a section whose body echoes its
search text points the same way the search does. That last property is what
makes warm-pass cache behavior provable offline.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Callable, Sequence

import numpy as np

from sagemem.gateway import ModelEndpoint
from sagemem.pipeline import parse_sections_block, strip_interrogatives
from sagemem.types import Taxonomy

DEFAULT_EMBED_DIM = 64
DEFAULT_EMBED_SEED = 13

MOCK_LOCAL = ModelEndpoint(base_url="mock://local", model_id="mock-local", temperature=0.7)
MOCK_EMBEDDER = ModelEndpoint(base_url="mock://embed", model_id="mock-embed")
MOCK_TEACHER = ModelEndpoint(base_url="mock://teacher", model_id="mock-teacher")
MOCK_JUDGE = ModelEndpoint(base_url="mock://judge", model_id="mock-judge")


# =============================================================================
# Clock and ids
# =============================================================================


class ManualClock:
    """A frozen clock tests move by hand."""

    def __init__(self, start: datetime | None = None):
        self.now = start or datetime(2024, 6, 1, 12, 0, 0, tzinfo=timezone.utc)

    def __call__(self) -> datetime:
        return self.now

    def advance(self, *, minutes: float = 0.0, seconds: float = 0.0) -> datetime:
        self.now = self.now + timedelta(minutes=minutes, seconds=seconds)
        return self.now


class SequenceIds:
    """Deterministic UUIDs (v5 over a counter) for reproducible runs."""

    def __init__(self, namespace: str = "mock"):
        self.namespace = namespace
        self._n = 0
        self._lock = threading.Lock()

    def __call__(self) -> str:
        with self._lock:
            self._n += 1
            n = self._n
        return str(uuid.uuid5(uuid.NAMESPACE_URL, f"sagemem://{self.namespace}/{n}"))


# =============================================================================
# Hash embedder
# =============================================================================

_TOKEN_RE = re.compile(r"[a-z0-9]+")
_token_cache: dict[tuple[int, int, str], np.ndarray] = {}


def _token_vector(token: str, dim: int, seed: int) -> np.ndarray:
    key = (seed, dim, token)
    cached = _token_cache.get(key)
    if cached is None:
        digest = hashlib.sha256(f"{seed}:{token}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
        cached = rng.standard_normal(dim)
        _token_cache[key] = cached
    return cached


def hash_embed(text: str, dim: int = DEFAULT_EMBED_DIM, seed: int = DEFAULT_EMBED_SEED) -> np.ndarray:
    """Seeded token-bag hash of the text, expanded to a unit vector."""
    tokens = _TOKEN_RE.findall(text.lower())
    if not tokens:
        tokens = [f"<empty:{len(text)}>"]
    acc = np.zeros(dim, dtype=np.float64)
    for token in tokens:
        acc += _token_vector(token, dim, seed)
    norm = float(np.linalg.norm(acc))
    if norm == 0.0:  # astronomically unlikely token cancellation
        acc = _token_vector("\x00fallback", dim, seed)
        norm = float(np.linalg.norm(acc))
    return acc / norm


# =============================================================================
# Prompt field extraction (matches the shipped templates)
# =============================================================================

_TAGGED_RE = {
    "sections": re.compile(r"<sections>\n?(.*?)\n?</sections>", re.DOTALL),
    "response": re.compile(r"<response>\n?(.*?)\n?</response>", re.DOTALL),
}


def _line_after(content: str, prefix: str) -> str:
    """Last line starting with the prefix, without it."""
    found = ""
    for line in content.splitlines():
        if line.startswith(prefix):
            found = line[len(prefix) :].strip()
    return found


def _tagged_blocks(content: str, tag: str) -> list[str]:
    return [m.group(1) for m in _TAGGED_RE[tag].finditer(content)]


# =============================================================================
# Scripted models
# =============================================================================


@dataclass
class ScriptedLocalModel:
    """Deterministic classifier + generator.

    ``classify_fn(query)`` returns the classifier payload dict. The default
    scans the query for a taxonomy category name (first match wins, else the
    first taxonomy entry) and emits a single factual pair whose search string
    is the query stripped of question framing — so one query always maps to
    one search text, which is what makes cache warm-up observable.

    ``generate_fn(query, sections)`` returns the generation payload dict. The
    default answers with every supplied section's content and cites them all.
    """

    taxonomy: Sequence[str] = ()
    classify_fn: Callable[[str], dict] | None = None
    generate_fn: Callable[[str, list[dict]], dict] | None = None
    direct_fn: Callable[[str], str] | None = None

    _GREETINGS = ("hi", "hello", "hey", "thanks", "thank you", "good morning", "how are you")

    def classify(self, content: str) -> str:
        query = _line_after(content, "Query: ")
        if self.classify_fn is not None:
            return json.dumps(self.classify_fn(query))
        lowered = query.lower().strip()
        if any(lowered.startswith(g) for g in self._GREETINGS):
            return json.dumps({"query_type": "conversational", "pairs": []})
        if "```" in query or lowered.startswith(("write a function", "write code", "fix this code")):
            return json.dumps({"query_type": "coding", "pairs": []})
        category = next((name for name in self.taxonomy if name.lower() in lowered), None)
        if category is None and self.taxonomy:
            category = self.taxonomy[0]
        return json.dumps(
            {
                "query_type": "factual",
                "pairs": [{"category": category or "General", "search": strip_interrogatives(query)}],
            }
        )

    def generate(self, content: str, op: str | None) -> str:
        if op == "generate.direct":
            # bypass path: content here is the raw user message
            if self.direct_fn is not None:
                return self.direct_fn(content)
            return f"(direct) {content}"
        query = _line_after(content, "Question: ")
        blocks = _tagged_blocks(content, "sections")
        entries = parse_sections_block(blocks[0]) if blocks else []
        if self.generate_fn is not None:
            return json.dumps(self.generate_fn(query, entries))
        if not entries:
            return json.dumps({"answer": f"No stored knowledge covers: {query}", "references": []})
        answer = " ".join(entry["content"] for entry in entries)
        return json.dumps({"answer": answer, "references": [entry["id"] for entry in entries]})


@dataclass
class ScriptedTeacher:
    """Deterministic teacher. The default *echoes* the query into the section.

    Echoing (topic = summary = content = query) makes the section's composite
    document text point exactly along the query's embedding direction, so a
    later identical search hits it with similarity 1.0.
    """

    refresh_spec: dict | Callable[[str], dict] = field(default_factory=lambda: {"value": 1, "unit": "years"})
    acquire_fn: Callable[[str, str], dict] | None = None
    refresh_fn: Callable[[str, list[dict]], dict] | None = None
    compile_fn: Callable[[str, list[dict], list[dict]], dict] | None = None
    fail: bool = False  # raise on every call (for degraded-path tests)
    acquire_calls: int = 0
    refresh_calls: int = 0
    compile_calls: int = 0

    def _spec_for(self, query: str) -> dict:
        if callable(self.refresh_spec):
            return self.refresh_spec(query)
        return self.refresh_spec

    def _maybe_fail(self):
        if self.fail:
            from sagemem.gateway import TransportError

            raise TransportError("scripted teacher outage")

    def dispatch(self, content: str, op: str | None) -> str:
        if op == "teacher.acquire":
            return self.acquire(content)
        if op == "teacher.refresh":
            return self.refresh(content)
        if op == "teacher.compile":
            return self.compile(content)
        raise AssertionError(f"unexpected teacher op {op!r}")

    def acquire(self, content: str) -> str:
        self.acquire_calls += 1
        self._maybe_fail()
        category = _line_after(content, "Domain category: ")
        query = _line_after(content, "Query: ")
        if self.acquire_fn is not None:
            return json.dumps(self.acquire_fn(category, query))
        return json.dumps(
            {
                "query_context": query,
                "section": {
                    "topic": query,
                    "refresh": self._spec_for(query),
                    "summary": query,
                    "content": query,
                },
            }
        )

    @staticmethod
    def _sections_json(content: str, which: int = 0) -> list[dict]:
        blocks = _tagged_blocks(content, "sections")
        if which >= len(blocks):
            return []
        try:
            return json.loads(blocks[which])
        except json.JSONDecodeError:
            return []

    def refresh(self, content: str) -> str:
        self.refresh_calls += 1
        self._maybe_fail()
        category = _line_after(content, "Domain category: ")
        rows = self._sections_json(content)
        if self.refresh_fn is not None:
            return json.dumps(self.refresh_fn(category, rows))
        out = [
            {
                "topic": row.get("topic", ""),
                "refresh": self._spec_for(row.get("topic", "")),
                "summary": row.get("summary", ""),
                "content": row.get("content", ""),
            }
            for row in rows
        ]
        return json.dumps({"sections": out})

    def compile(self, content: str) -> str:
        self.compile_calls += 1
        self._maybe_fail()
        category = _line_after(content, "Domain category: ")
        staged = self._sections_json(content, 0)
        canonical = self._sections_json(content, 1)
        if self.compile_fn is not None:
            return json.dumps(self.compile_fn(category, staged, canonical))
        primary = staged[0] if staged else {"topic": "", "summary": "", "content": ""}
        merged_content = " ".join(
            [primary.get("content", "")] + [row.get("content", "") for row in canonical]
        ).strip()
        return json.dumps(
            {
                "sections": [
                    {
                        "topic": primary.get("topic", "merged"),
                        "refresh": self._spec_for(primary.get("topic", "")),
                        "summary": primary.get("summary", ""),
                        "content": merged_content or "merged",
                    }
                ]
            }
        )


@dataclass
class ScriptedJudge:
    """Deterministic grading: substring containment against the gold answer."""

    judge_fn: Callable[[str, str, str], str] | None = None

    def judge(self, content: str) -> str:
        question = _line_after(content, "Question: ")
        gold = _line_after(content, "Gold answer: ")
        blocks = _tagged_blocks(content, "response")
        response = blocks[0] if blocks else ""
        if self.judge_fn is not None:
            verdict = self.judge_fn(question, gold, response)
        else:
            verdict = self._default_verdict(gold, response)
        return json.dumps({"judgment": verdict})

    @staticmethod
    def _default_verdict(gold: str, response: str) -> str:
        resp = response.casefold()
        if not resp.strip() or "no stored knowledge covers" in resp or "cannot answer" in resp:
            return "refused"
        if gold.casefold() in resp:
            return "correct"
        gold_tokens = [t for t in _TOKEN_RE.findall(gold.lower()) if len(t) > 3]
        if gold_tokens and any(t in resp for t in gold_tokens):
            return "partial"
        return "wrong"


# =============================================================================
# Transports
# =============================================================================


class MockTransport:
    """Routes chat calls to the scripted models and embeds with the hash embedder."""

    def __init__(
        self,
        *,
        local: ScriptedLocalModel | None = None,
        teacher: ScriptedTeacher | None = None,
        judge: ScriptedJudge | None = None,
        embed_dim: int = DEFAULT_EMBED_DIM,
        embed_seed: int = DEFAULT_EMBED_SEED,
    ):
        self.local = local or ScriptedLocalModel()
        self.teacher = teacher or ScriptedTeacher()
        self.judge = judge or ScriptedJudge()
        self.embed_dim = embed_dim
        self.embed_seed = embed_seed

    def chat(self, endpoint, messages, temperature, role_kind, op=None):
        content = messages[-1]["content"]
        if role_kind == "classify":
            return self.local.classify(content)
        if role_kind == "generate":
            return self.local.generate(content, op)
        if role_kind == "teacher":
            return self.teacher.dispatch(content, op)
        if role_kind == "judge":
            return self.judge.judge(content)
        raise AssertionError(f"unexpected role_kind {role_kind!r}")

    def embed(self, endpoint, texts):
        return [hash_embed(text, self.embed_dim, self.embed_seed) for text in texts]


@dataclass(frozen=True)
class RecordedCall:
    role_kind: str
    op: str | None
    temperature: float
    model_id: str


class RecordingTransport:
    """Wraps a transport, logging every chat call (role, op, temperature)."""

    def __init__(self, inner):
        self.inner = inner
        self.calls: list[RecordedCall] = []
        self.embed_batches: list[int] = []
        self._lock = threading.Lock()

    def chat(self, endpoint, messages, temperature, role_kind, op=None):
        with self._lock:
            self.calls.append(
                RecordedCall(role_kind=role_kind, op=op, temperature=temperature, model_id=endpoint.model_id)
            )
        return self.inner.chat(endpoint, messages, temperature, role_kind, op)

    def embed(self, endpoint, texts):
        with self._lock:
            self.embed_batches.append(len(texts))
        return self.inner.embed(endpoint, texts)

    def calls_for(self, *role_kinds: str) -> list[RecordedCall]:
        return [c for c in self.calls if c.role_kind in role_kinds]
