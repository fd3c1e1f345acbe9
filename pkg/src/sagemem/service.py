"""HTTP surface over one knowledge system.

Endpoints:

* ``POST /query``        — run one pipeline turn within a session
* ``GET  /sections``     — store listings with live TTL status
* ``GET  /sections/{id}``— one full section
* ``POST /consolidate``  — run a sleep cycle, return its report
* ``GET  /stats``        — store counts and pipeline totals
* ``GET  /health``       — liveness probe

Errors are structured JSON: ``{"stage": ..., "message": ...}``.

Queries against the same session id are serialized (the conversation history
is shared state); different sessions run concurrently. A sleep cycle takes
the exclusive writer role: it waits for in-flight queries to drain, and while
it runs, factual traffic is either rejected with 409 or queued until the
cycle finishes, per the configured policy.
"""

from __future__ import annotations

import logging
import threading
from contextlib import contextmanager

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from sagemem.pipeline import GENERATION_MODES, ConversationHistory, PipelineError
from sagemem.system import KnowledgeSystem
from sagemem.types import STORES, is_expired, minutes_remaining

logger = logging.getLogger(__name__)

POLICY_REJECT = "reject"
POLICY_QUEUE = "queue"


class ServiceError(Exception):
    """An API-level failure with a stage tag and an HTTP status."""

    def __init__(self, stage: str, message: str, status_code: int = 400):
        super().__init__(message)
        self.stage = stage
        self.message = message
        self.status_code = status_code


class ConsolidationGate:
    """Readers-writer coordination between queries and sleep cycles.

    Queries hold read slots; a sleep cycle is the writer. The writer waits
    for readers to drain and blocks new ones. Readers either wait for the
    writer (queue policy) or bail out immediately (reject policy).
    """

    def __init__(self):
        self._cond = threading.Condition()
        self._readers = 0
        self._writing = False

    @contextmanager
    def read(self, wait: bool):
        with self._cond:
            if self._writing and not wait:
                raise ServiceError(
                    "consolidation",
                    "a sleep cycle is running; retry when it finishes",
                    status_code=409,
                )
            while self._writing:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                self._cond.notify_all()

    @contextmanager
    def write(self):
        with self._cond:
            while self._writing:
                self._cond.wait()
            self._writing = True
            while self._readers:
                self._cond.wait()
        try:
            yield
        finally:
            with self._cond:
                self._writing = False
                self._cond.notify_all()

    @property
    def writing(self) -> bool:
        with self._cond:
            return self._writing


class SessionRegistry:
    """Conversation history plus a lock per session id."""

    def __init__(self):
        self._sessions: dict[str, tuple[threading.Lock, ConversationHistory]] = {}
        self._lock = threading.Lock()

    def get(self, session_id: str) -> tuple[threading.Lock, ConversationHistory]:
        with self._lock:
            if session_id not in self._sessions:
                self._sessions[session_id] = (threading.Lock(), ConversationHistory())
            return self._sessions[session_id]

    def __len__(self) -> int:
        with self._lock:
            return len(self._sessions)


class QueryRequest(BaseModel):
    text: str
    session_id: str = "default"
    mode: str | None = None


def _section_summary(section, now) -> dict:
    return {
        "id": section.id,
        "topic": section.topic,
        "summary": section.summary,
        "category": section.category,
        "store": section.store,
        "created_at": section.created_at.isoformat(),
        "refresh_minutes": section.refresh_minutes,
        "expired": is_expired(section, now),
        "minutes_remaining": minutes_remaining(section, now),
    }


def create_app(system: KnowledgeSystem) -> FastAPI:
    app = FastAPI(title="sagemem", version="0.1.0")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    gate = ConsolidationGate()
    sessions = SessionRegistry()
    queue_queries = system.config.consolidation_policy == POLICY_QUEUE
    app.state.system = system
    app.state.gate = gate
    app.state.sessions = sessions

    @app.exception_handler(ServiceError)
    async def service_error_handler(request: Request, exc: ServiceError):
        return JSONResponse(
            status_code=exc.status_code,
            content={"stage": exc.stage, "message": exc.message},
        )

    @app.exception_handler(PipelineError)
    async def pipeline_error_handler(request: Request, exc: PipelineError):
        return JSONResponse(status_code=502, content={"stage": exc.stage, "message": str(exc)})

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/query")
    def query(request: QueryRequest):
        if not request.text.strip():
            raise ServiceError("request", "text must be non-empty")
        if request.mode is not None and request.mode not in GENERATION_MODES:
            raise ServiceError(
                "request", f"mode must be one of {list(GENERATION_MODES)}, got {request.mode!r}"
            )
        with gate.read(wait=queue_queries):
            lock, history = sessions.get(request.session_id)
            with lock:
                response = system.orchestrator.answer_query(
                    request.text, history, mode=request.mode
                )
            if response.metrics.teacher_calls:
                system.persist_index()
        return response.to_dict()

    @app.get("/sections")
    def list_sections(store: str | None = None, category: str | None = None):
        if store is not None and store not in STORES:
            raise ServiceError("request", f"store must be one of {sorted(STORES)}, got {store!r}")
        now = system.clock()
        sections = system.store.list(store=store, category=category)
        return [_section_summary(s, now) for s in sections]

    @app.get("/sections/{section_id}")
    def get_section(section_id: str):
        section = system.store.get(section_id)
        if section is None:
            raise ServiceError("sections", f"no section with id {section_id!r}", status_code=404)
        payload = _section_summary(section, system.clock())
        payload["content"] = section.content
        return payload

    @app.post("/consolidate")
    def consolidate():
        with gate.write():
            report = system.consolidator.sleep_cycle()
            system.persist_index()
        return report.to_dict()

    @app.get("/stats")
    def stats():
        return system.stats()

    console_dir = system.config.console_dir
    if console_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=console_dir, html=True), name="console")

    return app


def serve(system: KnowledgeSystem, *, host: str = "127.0.0.1", port: int | None = None) -> None:
    """Run the service until interrupted."""
    import uvicorn

    uvicorn.run(create_app(system), host=host, port=port or system.config.port, log_level="info")
