"""LLM access: endpoints, transports, retries, JSON extraction, teacher ops.

All model traffic funnels through ``LlmGateway.chat`` and ``LlmGateway.embed``
so two rules hold everywhere by construction:

* Temperature: classify, teacher, and judge calls always go out at 0.0 —
  only generation uses the endpoint's configured temperature.
* Retries: empty/None completions and transient transport failures retry
  with exponential backoff (1s base, doubling, 5 attempts).

Teacher operations (acquire / refresh / compile) live here too, as
``TeacherService``: they render their prompts, dispatch to the right teacher
via the category router, and validate the returned JSON into Sections.
"""

from __future__ import annotations

import json
import logging
import re
import time
import uuid
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Callable, Mapping, Protocol, Sequence

import numpy as np
import requests

from sagemem.prompts import PromptEngine
from sagemem.types import (
    STAGING,
    RefreshParseError,
    RefreshSpec,
    Section,
    normalize_refresh,
    utc_now,
)

logger = logging.getLogger(__name__)

# Roles whose requests must always be deterministic.
PINNED_TEMPERATURE_ROLES = ("classify", "teacher", "judge")

DEFAULT_MAX_ATTEMPTS = 5
DEFAULT_BACKOFF_BASE = 1.0
DEFAULT_BACKOFF_FACTOR = 2.0


# =============================================================================
# Errors
# =============================================================================


class GatewayError(Exception):
    """Base class for model-access failures."""


class TransportError(GatewayError):
    """The request never produced a usable completion (network, 5xx, empty)."""


class RequestRejectedError(GatewayError):
    """The server rejected the request outright (4xx); retrying won't help."""

    def __init__(self, status_code: int, body: str):
        super().__init__(f"request rejected with status {status_code}: {body[:500]}")
        self.status_code = status_code
        self.body = body


class JsonExtractionError(GatewayError):
    """No strategy recovered valid JSON from the model output."""

    def __init__(self, raw: str):
        preview = raw if len(raw) <= 500 else raw[:500] + "..."
        super().__init__(f"could not extract JSON from model output: {preview!r}")
        self.raw = raw


class TeacherResponseError(GatewayError):
    """A teacher returned JSON that does not fit the section schema."""

    def __init__(self, message: str, payload: Any = None):
        super().__init__(message)
        self.payload = payload


class EmbeddingError(GatewayError):
    """Embedding call failed or returned vectors of the wrong shape."""


# =============================================================================
# Endpoints and registry
# =============================================================================


@dataclass(frozen=True)
class ModelEndpoint:
    """One chat- or embeddings-capable server + model."""

    base_url: str
    model_id: str
    api_key: str = ""
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if not self.base_url:
            raise ValueError("endpoint base_url must be non-empty")
        if not self.model_id:
            raise ValueError("endpoint model_id must be non-empty")
        if not (0.0 <= self.temperature <= 2.0):
            raise ValueError(f"temperature must be in [0, 2], got {self.temperature}")


@dataclass(frozen=True)
class TeacherSpec:
    """A teacher endpoint plus the taxonomy categories it owns."""

    endpoint: ModelEndpoint
    categories: tuple[str, ...] = ()


class TeacherRegistry:
    """Maps categories to specialist teachers, with a default for the rest."""

    def __init__(self, default: ModelEndpoint, teachers: Sequence[TeacherSpec] = ()):
        self.default = default
        self.teachers = tuple(teachers)
        owners: dict[str, ModelEndpoint] = {}
        for spec in self.teachers:
            for category in spec.categories:
                if category in owners:
                    raise ValueError(f"category {category!r} is assigned to more than one teacher")
                owners[category] = spec.endpoint
        self._owners = owners

    def route(self, category: str) -> ModelEndpoint:
        """Pure lookup: the category's specialist, or the default teacher."""
        return self._owners.get(category, self.default)


# =============================================================================
# Transports
# =============================================================================


class Transport(Protocol):
    """Wire-level access to chat and embeddings servers.

    ``role_kind`` and ``op`` describe why the call is being made ("classify",
    "teacher" / "teacher.acquire", ...). The HTTP transport ignores them; test
    doubles use them to dispatch scripted replies and to assert the
    temperature rule.
    """

    def chat(
        self,
        endpoint: ModelEndpoint,
        messages: list[dict[str, str]],
        temperature: float,
        role_kind: str,
        op: str | None = None,
    ) -> str | None: ...

    def embed(self, endpoint: ModelEndpoint, texts: list[str]) -> list[list[float]]: ...


class HttpTransport:
    """Talks to OpenAI-compatible /v1/chat/completions and /v1/embeddings."""

    def __init__(self, timeout: float = 120.0, session: requests.Session | None = None):
        self.timeout = timeout
        self.session = session or requests.Session()

    def _headers(self, endpoint: ModelEndpoint) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if endpoint.api_key:
            headers["Authorization"] = f"Bearer {endpoint.api_key}"
        return headers

    def _post(self, endpoint: ModelEndpoint, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        url = endpoint.base_url.rstrip("/") + path
        try:
            resp = self.session.post(url, json=payload, headers=self._headers(endpoint), timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"request to {url} failed: {exc}") from exc
        if 400 <= resp.status_code < 500:
            raise RequestRejectedError(resp.status_code, resp.text)
        if resp.status_code != 200:
            raise TransportError(f"{url} returned status {resp.status_code}: {resp.text[:500]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise TransportError(f"{url} returned non-JSON body") from exc

    def chat(
        self,
        endpoint: ModelEndpoint,
        messages: list[dict[str, str]],
        temperature: float,
        role_kind: str,
        op: str | None = None,
    ) -> str | None:
        payload = {"model": endpoint.model_id, "messages": messages, "temperature": temperature}
        data = self._post(endpoint, "/v1/chat/completions", payload)
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed chat completion response: {data!r}") from exc

    def embed(self, endpoint: ModelEndpoint, texts: list[str]) -> list[list[float]]:
        payload = {"model": endpoint.model_id, "input": texts}
        data = self._post(endpoint, "/v1/embeddings", payload)
        try:
            rows = sorted(data["data"], key=lambda row: row["index"])
            return [row["embedding"] for row in rows]
        except (KeyError, TypeError) as exc:
            raise TransportError(f"malformed embeddings response: {data!r}") from exc


# =============================================================================
# JSON extraction
# =============================================================================

_FENCE_RE = re.compile(r"```[A-Za-z0-9_+\-]*[ \t]*\r?\n?(.*?)```", re.DOTALL)
# A backslash not starting a legal JSON escape.
_BAD_ESCAPE_RE = re.compile(r'\\(?!["\\/bfnrtu])')


def _repair_escapes(text: str) -> str:
    return _BAD_ESCAPE_RE.sub(r"\\\\", text)


def _balanced_regions(text: str):
    """Yield substrings spanning balanced {...} / [...] pairs, string-aware."""
    openers = {"{": "}", "[": "]"}
    n = len(text)
    for start, ch in enumerate(text):
        if ch not in openers:
            continue
        depth = 0
        in_string = False
        escaped = False
        for i in range(start, n):
            c = text[i]
            if in_string:
                if escaped:
                    escaped = False
                elif c == "\\":
                    escaped = True
                elif c == '"':
                    in_string = False
                continue
            if c == '"':
                in_string = True
            elif c in "{[":
                depth += 1
            elif c in "}]":
                depth -= 1
                if depth == 0:
                    yield text[start : i + 1]
                    break
                if depth < 0:
                    break


def extract_json(raw: str) -> Any:
    """Recover a JSON value from raw model output.

    Tries, in order: the text as-is; the contents of fenced code blocks;
    the text with stray backslashes repaired; balanced brace/bracket
    regions (raw, then escape-repaired). First successful parse wins.
    """
    if not isinstance(raw, str):
        raise JsonExtractionError(repr(raw))

    candidates: list[str] = [raw]
    candidates.extend(m.group(1) for m in _FENCE_RE.finditer(raw))
    candidates.append(_repair_escapes(raw))
    candidates.extend(_repair_escapes(m.group(1)) for m in _FENCE_RE.finditer(raw))

    for candidate in candidates:
        try:
            return json.loads(candidate)
        except (json.JSONDecodeError, ValueError):
            pass

    for region in _balanced_regions(raw):
        for candidate in (region, _repair_escapes(region)):
            try:
                return json.loads(candidate)
            except (json.JSONDecodeError, ValueError):
                pass

    raise JsonExtractionError(raw)


# =============================================================================
# Gateway
# =============================================================================


class LlmGateway:
    """Single funnel for chat and embedding calls, with retry and temperature rules."""

    def __init__(
        self,
        transport: Transport,
        *,
        max_attempts: int = DEFAULT_MAX_ATTEMPTS,
        backoff_base: float = DEFAULT_BACKOFF_BASE,
        backoff_factor: float = DEFAULT_BACKOFF_FACTOR,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.transport = transport
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.backoff_factor = backoff_factor
        self._sleep = sleep
        self._dimensions: dict[tuple[str, str], int] = {}

    def chat(
        self,
        endpoint: ModelEndpoint,
        messages: list[dict[str, str]],
        role_kind: str,
        op: str | None = None,
    ) -> str:
        """Run a chat completion; returns non-empty content or raises.

        classify/teacher/judge traffic is pinned to temperature 0.0; only
        "generate" uses the endpoint's configured temperature.
        """
        temperature = 0.0 if role_kind in PINNED_TEMPERATURE_ROLES else endpoint.temperature
        delay = self.backoff_base
        last_error: Exception | None = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                content = self.transport.chat(endpoint, messages, temperature, role_kind, op)
            except RequestRejectedError:
                raise
            except GatewayError as exc:
                last_error = exc
                content = None
            except Exception as exc:  # transport bug — same retry budget
                last_error = TransportError(str(exc))
                content = None
            if content:
                return content
            if last_error is None:
                last_error = TransportError(f"empty completion from {endpoint.model_id} (role {role_kind})")
            if attempt < self.max_attempts:
                logger.warning(
                    "chat attempt %d/%d failed (%s); retrying in %.1fs",
                    attempt,
                    self.max_attempts,
                    last_error,
                    delay,
                )
                self._sleep(delay)
                delay *= self.backoff_factor
        raise last_error if isinstance(last_error, GatewayError) else TransportError(str(last_error))

    def embed(self, endpoint: ModelEndpoint, texts: list[str]) -> list[np.ndarray]:
        """Embed texts; one vector per text, dimension locked per endpoint."""
        if not texts:
            return []
        vectors = self.transport.embed(endpoint, list(texts))
        if len(vectors) != len(texts):
            raise EmbeddingError(f"expected {len(texts)} vectors, got {len(vectors)}")
        arrays = [np.asarray(v, dtype=np.float64) for v in vectors]
        key = (endpoint.base_url, endpoint.model_id)
        for arr in arrays:
            if arr.ndim != 1 or arr.size == 0:
                raise EmbeddingError(f"embedding is not a non-empty 1-d vector: shape {arr.shape}")
            expected = self._dimensions.get(key)
            if expected is None:
                self._dimensions[key] = arr.size
            elif arr.size != expected:
                raise EmbeddingError(
                    f"embedding dimension changed for {endpoint.model_id}: got {arr.size}, expected {expected}"
                )
        return arrays


# =============================================================================
# Teacher operations
# =============================================================================


def _require_str(obj: Mapping[str, Any], key: str, *, allow_empty: bool = False) -> str:
    value = obj.get(key)
    if not isinstance(value, str) or (not allow_empty and not value.strip()):
        raise TeacherResponseError(f"section field {key!r} must be a non-empty string, got {value!r}", obj)
    return value


def _section_from_payload(
    payload: Mapping[str, Any],
    *,
    category: str,
    created_at: datetime,
    section_id: str,
) -> Section:
    if not isinstance(payload, Mapping):
        raise TeacherResponseError(f"section payload must be an object, got {type(payload).__name__}", payload)
    topic = _require_str(payload, "topic")
    summary = _require_str(payload, "summary", allow_empty=True)
    content = _require_str(payload, "content")
    try:
        refresh_minutes = normalize_refresh(RefreshSpec.parse(payload.get("refresh")))
    except RefreshParseError as exc:
        raise TeacherResponseError(f"bad refresh spec: {exc}", payload) from exc
    return Section(
        id=section_id,
        topic=topic.strip(),
        summary=summary.strip(),
        content=content,
        refresh_minutes=refresh_minutes,
        category=category,
        created_at=created_at,
        store=STAGING,
    )


def _sections_list(payload: Any) -> list[Mapping[str, Any]]:
    """Accept {"sections": [...]} (documented shape) or a bare array."""
    if isinstance(payload, Mapping):
        sections = payload.get("sections")
    else:
        sections = payload
    if not isinstance(sections, list):
        raise TeacherResponseError(f"expected a 'sections' array, got {type(payload).__name__}", payload)
    return sections


def serialize_sections(sections: Sequence[Section]) -> str:
    """Render sections as a JSON array for teacher prompts."""
    rows = [
        {
            "topic": s.topic,
            "summary": s.summary,
            "content": s.content,
            "category": s.category,
        }
        for s in sections
    ]
    return json.dumps(rows, ensure_ascii=False, indent=2)


class TeacherService:
    """Teacher-side knowledge operations, routed by category."""

    def __init__(
        self,
        gateway: LlmGateway,
        registry: TeacherRegistry,
        prompts: PromptEngine,
        *,
        clock: Callable[[], datetime] = utc_now,
        id_factory: Callable[[], str] | None = None,
    ):
        self.gateway = gateway
        self.registry = registry
        self.prompts = prompts
        self.clock = clock
        self.id_factory = id_factory or (lambda: str(uuid.uuid4()))

    def _call(self, category: str, prompt: str, op: str) -> Any:
        endpoint = self.registry.route(category)
        raw = self.gateway.chat(endpoint, [{"role": "user", "content": prompt}], role_kind="teacher", op=op)
        return extract_json(raw)

    def acquire(self, category: str, query: str) -> Section:
        """Ask the category's teacher for exactly one new section."""
        prompt = self.prompts.render("teacher_acquire", category=category, query=query)
        payload = self._call(category, prompt, op="teacher.acquire")
        if not isinstance(payload, Mapping) or "section" not in payload:
            raise TeacherResponseError("acquire response must be an object with a 'section' key", payload)
        return _section_from_payload(
            payload["section"],
            category=category,
            created_at=self.clock(),
            section_id=self.id_factory(),
        )

    def refresh(self, sections: Sequence[Section]) -> list[Section]:
        """Ask for current replacements of expired sections (one category per call)."""
        if not sections:
            return []
        categories = {s.category for s in sections}
        if len(categories) > 1:
            raise ValueError(f"refresh batch spans categories {sorted(categories)}; dispatch per category")
        category = sections[0].category
        prompt = self.prompts.render(
            "teacher_refresh",
            category=category,
            sections=serialize_sections(sections),
        )
        payload = self._call(category, prompt, op="teacher.refresh")
        created_at = self.clock()
        return [
            _section_from_payload(row, category=category, created_at=created_at, section_id=self.id_factory())
            for row in _sections_list(payload)
        ]

    def compile(self, staged: Section, overlapping: Sequence[Section]) -> list[Section]:
        """Merge a staged section with the canonical material it overlaps.

        Returns the replacement set, possibly empty (meaning the staged
        section was redundant). Outputs are stamped as staging; the caller
        decides their destination store.
        """
        category = staged.category
        prompt = self.prompts.render(
            "teacher_compile",
            category=category,
            staging=serialize_sections([staged]),
            canonical=serialize_sections(overlapping),
        )
        payload = self._call(category, prompt, op="teacher.compile")
        created_at = self.clock()
        return [
            _section_from_payload(row, category=category, created_at=created_at, section_id=self.id_factory())
            for row in _sections_list(payload)
        ]
