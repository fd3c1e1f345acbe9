"""Benchmark harness: lifecycle conditions, model judging, scored accuracy.

A run answers a fixture of questions under one of four store conditions —

* baseline — the local model alone, no knowledge machinery at all;
* cold — the full pipeline starting from an empty store;
* warm — the same questions again, so the store is already populated;
* post_consolidation — after a sleep cycle has reorganized the store.

For each question the pipeline runs once up to retrieval and refresh, then
generates once per requested mode (classification and any teacher work are
shared across modes). A judge model grades every response as correct,
partial, wrong, or refused; an unparseable grade is recorded as judge_error.
Refusals and judge errors stay in the denominator and score zero.

Latency is taken from the system clock, so runs on a frozen mock clock
report exactly 0.0 and produce byte-identical CSVs; live runs measure wall
clock.

Outputs: one CSV per condition (columns id, mode, response, judgment,
cache_hit, teacher_calls, blocks, latency_ms) plus a JSON summary holding
per-mode judgment counts, scored accuracy, and the Wilson interval on the
strict correct-rate.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from sagemem.gateway import GatewayError, JsonExtractionError, extract_json
from sagemem.pipeline import ConversationHistory, PipelineError, PreparedQuery, QueryMetrics
from sagemem.system import KnowledgeSystem

logger = logging.getLogger(__name__)

JUDGMENTS = ("correct", "partial", "wrong", "refused")
JUDGE_ERROR = "judge_error"
BUCKETS = ("specialist", "synthesis", "control", "external")
CONDITIONS = ("baseline", "cold", "warm", "post_consolidation")
DEFAULT_MODES = ("suppress", "augment")
BASELINE_MODE = "direct"

CSV_COLUMNS = ("id", "mode", "response", "judgment", "cache_hit", "teacher_calls", "blocks", "latency_ms")


class BenchmarkError(Exception):
    pass


# =============================================================================
# Questions
# =============================================================================


@dataclass(frozen=True)
class BenchmarkQuestion:
    id: str
    question: str
    gold: str
    source: str = ""
    bucket: str = "external"

    def __post_init__(self):
        if not self.id or not str(self.id).strip():
            raise BenchmarkError("question id must be non-empty")
        if not self.question.strip():
            raise BenchmarkError(f"question {self.id!r} has empty text")
        if not self.gold.strip():
            raise BenchmarkError(f"question {self.id!r} has an empty gold answer")
        if self.bucket not in BUCKETS:
            raise BenchmarkError(f"question {self.id!r} bucket must be one of {BUCKETS}, got {self.bucket!r}")


def demo_questions_path() -> Path:
    """The bundled 20-question fixture used by mock benchmark runs."""
    return Path(__file__).parent / "assets" / "benchmark_demo.json"


def load_questions(path: str | Path) -> list[BenchmarkQuestion]:
    """Read a JSON array of question objects."""
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    if not isinstance(payload, list):
        raise BenchmarkError(f"{path}: expected a JSON array of questions")
    questions = []
    seen: set[str] = set()
    for i, row in enumerate(payload):
        if not isinstance(row, Mapping):
            raise BenchmarkError(f"{path}: entry {i} is not an object")
        try:
            question = BenchmarkQuestion(
                id=str(row["id"]),
                question=row["question"],
                gold=row["gold"],
                source=row.get("source", ""),
                bucket=row.get("bucket", "external"),
            )
        except KeyError as exc:
            raise BenchmarkError(f"{path}: entry {i} missing key {exc}") from exc
        if question.id in seen:
            raise BenchmarkError(f"{path}: duplicate question id {question.id!r}")
        seen.add(question.id)
        questions.append(question)
    return questions


# =============================================================================
# Scoring
# =============================================================================


def score_accuracy(correct: int, partial: int, total: int) -> float:
    """Scored accuracy: full credit for correct, half for partial."""
    if total <= 0:
        raise ValueError(f"total must be positive, got {total}")
    if correct < 0 or partial < 0:
        raise ValueError("counts must be non-negative")
    if correct + partial > total:
        raise ValueError(f"correct ({correct}) + partial ({partial}) exceed total ({total})")
    return (2 * correct + partial) / (2 * total)


def wilson_interval(successes: int, n: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion, clamped to [0, 1]."""
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    if not 0 <= successes <= n:
        raise ValueError(f"successes must be in [0, {n}], got {successes}")
    p = successes / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (p + z2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1.0 - p) / n + z2 / (4 * n * n)) / denom
    lo = max(0.0, center - half)
    hi = min(1.0, center + half)
    # the degenerate proportions have exact bounds; don't let rounding drift them
    if successes == 0:
        lo = 0.0
    if successes == n:
        hi = 1.0
    return lo, hi


# =============================================================================
# Judging
# =============================================================================


class Judge:
    """Grades one response against a gold answer via the judge endpoint."""

    def __init__(self, gateway, endpoint, prompts):
        self.gateway = gateway
        self.endpoint = endpoint
        self.prompts = prompts

    def judge(self, question: str, gold: str, response: str) -> str:
        prompt = self.prompts.render("judge", question=question, gold=gold, response=response)
        try:
            raw = self.gateway.chat(
                self.endpoint, [{"role": "user", "content": prompt}], role_kind="judge", op="judge"
            )
            payload = extract_json(raw)
        except (GatewayError, JsonExtractionError) as exc:
            logger.warning("judge call failed: %s", exc)
            return JUDGE_ERROR
        verdict = payload.get("judgment") if isinstance(payload, Mapping) else None
        if isinstance(verdict, str) and verdict.strip().lower() in JUDGMENTS:
            return verdict.strip().lower()
        logger.warning("judge returned an unrecognized verdict: %r", verdict)
        return JUDGE_ERROR


def system_judge(system: KnowledgeSystem) -> Judge:
    return Judge(system.gateway, system.config.judge, system.orchestrator.prompts)


# =============================================================================
# Records
# =============================================================================


@dataclass
class ModeOutcome:
    response: str
    judgment: str
    error: str | None = None  # pipeline failure tag, if any


@dataclass
class RunRecord:
    question_id: str
    condition: str
    outcomes: dict[str, ModeOutcome] = field(default_factory=dict)
    cache_hit: bool = False
    teacher_calls: int = 0
    blocks: int = 0
    latency_ms: float = 0.0

    def rows(self) -> list[dict[str, str]]:
        rows = []
        for mode, outcome in self.outcomes.items():
            rows.append(
                {
                    "id": self.question_id,
                    "mode": mode,
                    "response": outcome.response,
                    "judgment": outcome.judgment,
                    "cache_hit": "true" if self.cache_hit else "false",
                    "teacher_calls": str(self.teacher_calls),
                    "blocks": str(self.blocks),
                    "latency_ms": f"{self.latency_ms:.3f}",
                }
            )
        return rows


@dataclass
class ConditionRun:
    condition: str
    modes: tuple[str, ...]
    records: list[RunRecord]

    def summary(self) -> dict:
        questions = len(self.records)
        by_mode: dict[str, dict] = {}
        for mode in self.modes:
            counts = {name: 0 for name in (*JUDGMENTS, JUDGE_ERROR)}
            errors = 0
            for record in self.records:
                outcome = record.outcomes[mode]
                counts[outcome.judgment] += 1
                if outcome.error:
                    errors += 1
            entry: dict = {"judgments": counts, "pipeline_errors": errors}
            if questions:
                strict = counts["correct"]
                lo, hi = wilson_interval(strict, questions)
                entry.update(
                    accuracy=score_accuracy(strict, counts["partial"], questions),
                    strict_rate=strict / questions,
                    wilson_low=lo,
                    wilson_high=hi,
                )
            by_mode[mode] = entry
        aggregates: dict = {"condition": self.condition, "questions": questions, "modes": by_mode}
        if questions:
            aggregates.update(
                cache_hit_rate=sum(1 for r in self.records if r.cache_hit) / questions,
                teacher_calls_per_query=sum(r.teacher_calls for r in self.records) / questions,
                blocks_per_query=sum(r.blocks for r in self.records) / questions,
                mean_latency_ms=sum(r.latency_ms for r in self.records) / questions,
            )
        return aggregates

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS, lineterminator="\n")
            writer.writeheader()
            for record in self.records:
                for row in record.rows():
                    writer.writerow(row)
        return path


def read_csv_rows(path: str | Path) -> list[dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


# =============================================================================
# Running one condition
# =============================================================================


def _elapsed_ms(system: KnowledgeSystem, started_at) -> float:
    return max(0.0, (system.clock() - started_at).total_seconds() * 1000.0)


def _baseline_record(system: KnowledgeSystem, question: BenchmarkQuestion, judge: Judge) -> RunRecord:
    started_at = system.clock()
    prepared = PreparedQuery(
        query=question.question,
        route="baseline_direct",
        classification=None,
        sections=[],
        history_messages=[],
        store_hit=False,
        metrics=QueryMetrics(),
        degraded=False,
        started_at=started_at,
    )
    try:
        response = system.orchestrator.respond(prepared)
        outcome = ModeOutcome(response=response.answer, judgment="")
    except PipelineError as exc:
        outcome = ModeOutcome(response=f"[{exc.stage}] {exc}", judgment="wrong", error=exc.stage)
    record = RunRecord(
        question_id=question.id,
        condition="baseline",
        latency_ms=_elapsed_ms(system, started_at),
    )
    if not outcome.judgment:
        outcome.judgment = judge.judge(question.question, question.gold, outcome.response)
    record.outcomes[BASELINE_MODE] = outcome
    return record


def _pipeline_record(
    system: KnowledgeSystem,
    question: BenchmarkQuestion,
    condition: str,
    modes: Sequence[str],
    judge: Judge,
) -> RunRecord:
    record = RunRecord(question_id=question.id, condition=condition)
    started_at = system.clock()
    try:
        prepared = system.orchestrator.prepare(question.question, ConversationHistory())
    except PipelineError as exc:
        logger.warning("question %s failed during %s: %s", question.id, exc.stage, exc)
        record.latency_ms = _elapsed_ms(system, started_at)
        for mode in modes:
            record.outcomes[mode] = ModeOutcome(
                response=f"[{exc.stage}] {exc}", judgment="wrong", error=exc.stage
            )
        return record

    record.cache_hit = prepared.store_hit
    record.teacher_calls = prepared.metrics.teacher_calls
    record.blocks = len(prepared.sections)

    outcomes: dict[str, ModeOutcome] = {}
    for mode in modes:
        try:
            response = system.orchestrator.respond(prepared, mode=mode)
            outcomes[mode] = ModeOutcome(response=response.answer, judgment="")
        except PipelineError as exc:
            logger.warning("question %s failed generating %s: %s", question.id, mode, exc)
            outcomes[mode] = ModeOutcome(response=f"[{exc.stage}] {exc}", judgment="wrong", error=exc.stage)
    record.latency_ms = _elapsed_ms(system, started_at)

    for mode, outcome in outcomes.items():
        if not outcome.judgment:
            outcome.judgment = judge.judge(question.question, question.gold, outcome.response)
    record.outcomes = outcomes
    return record


def run_benchmark(
    system: KnowledgeSystem,
    questions: Sequence[BenchmarkQuestion],
    condition: str,
    modes: Sequence[str] = DEFAULT_MODES,
    *,
    judge: Judge | None = None,
) -> ConditionRun:
    """Answer and grade every question under one store condition.

    The caller is responsible for store state matching the condition (empty
    for cold, populated for warm, consolidated for post_consolidation);
    ``run_lifecycle`` below sequences that. Baseline ignores the store and
    always runs the single direct mode.
    """
    if condition not in CONDITIONS:
        raise BenchmarkError(f"condition must be one of {CONDITIONS}, got {condition!r}")
    judge = judge or system_judge(system)
    if condition == "baseline":
        effective_modes: tuple[str, ...] = (BASELINE_MODE,)
        records = [_baseline_record(system, q, judge) for q in questions]
    else:
        effective_modes = tuple(modes)
        if not effective_modes:
            raise BenchmarkError("at least one generation mode is required")
        records = [_pipeline_record(system, q, condition, effective_modes, judge) for q in questions]
    return ConditionRun(condition=condition, modes=effective_modes, records=records)


# =============================================================================
# Lifecycle driver
# =============================================================================


def run_lifecycle(
    system: KnowledgeSystem,
    questions: Sequence[BenchmarkQuestion],
    *,
    conditions: Sequence[str] = CONDITIONS,
    modes: Sequence[str] = DEFAULT_MODES,
    out_dir: str | Path | None = None,
    judge: Judge | None = None,
) -> dict:
    """Run conditions in lifecycle order on one system, emitting artifacts.

    Store preparation is implied by the order: cold runs against the empty
    store and doubles as the warming pass; a sleep cycle runs before
    post_consolidation. Conditions not requested still have their
    preparation effects applied when a later condition depends on them.
    """
    unknown = [c for c in conditions if c not in CONDITIONS]
    if unknown:
        raise BenchmarkError(f"unknown conditions {unknown}; valid: {CONDITIONS}")
    judge = judge or system_judge(system)
    wanted = set(conditions)
    runs: list[ConditionRun] = []
    consolidation_report = None

    if "baseline" in wanted:
        runs.append(run_benchmark(system, questions, "baseline", judge=judge))

    needs_store = wanted & {"cold", "warm", "post_consolidation"}
    if needs_store:
        if "cold" in wanted:
            runs.append(run_benchmark(system, questions, "cold", modes, judge=judge))
        else:
            for question in questions:  # silent warming pass
                try:
                    system.orchestrator.prepare(question.question, ConversationHistory())
                except PipelineError as exc:
                    logger.warning("warming pass failed for %s: %s", question.id, exc)
        if "warm" in wanted:
            runs.append(run_benchmark(system, questions, "warm", modes, judge=judge))
        if "post_consolidation" in wanted:
            consolidation_report = system.consolidator.sleep_cycle()
            runs.append(run_benchmark(system, questions, "post_consolidation", modes, judge=judge))

    summary: dict = {
        "questions": len(questions),
        "modes": list(modes),
        "conditions": {run.condition: run.summary() for run in runs},
    }
    if consolidation_report is not None:
        summary["consolidation"] = consolidation_report.to_dict()

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        files = {}
        for run in runs:
            files[run.condition] = run.write_csv(out_dir / f"{run.condition}.csv").name
        summary["files"] = files
        with open(out_dir / "summary.json", "w", encoding="utf-8") as f:
            json.dump(summary, f, indent=2, sort_keys=True)
            f.write("\n")
    return summary
