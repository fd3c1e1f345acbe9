"""Command-line entry point.

Subcommands: chat (REPL), ask (one-shot), bench (lifecycle benchmark),
sleep (consolidation cycle), stats, serve (HTTP service). Every subcommand
accepts either --config pointing at a YAML file with real endpoints, or
--mock to run entirely offline on the deterministic test stack.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import timedelta
from pathlib import Path

from sagemem.config import Config, ConfigError, load_config
from sagemem.evalharness import (
    CONDITIONS,
    DEFAULT_MODES,
    BenchmarkError,
    demo_questions_path,
    load_questions,
    run_lifecycle,
)
from sagemem.gateway import GatewayError
from sagemem.pipeline import ConversationHistory, PipelineError
from sagemem.system import KnowledgeSystem, build_mock_system, build_system, mock_config
from sagemem.types import CANONICAL, STAGING, Section, utc_now

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class CliParser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class UsageError(Exception):
    pass


# =============================================================================
# Parser
# =============================================================================


def build_parser() -> CliParser:
    parser = CliParser(prog="sagemem", description=__doc__.splitlines()[0])
    parser.add_argument("--config", type=Path, help="YAML config file with model endpoints")
    parser.add_argument("--mock", action="store_true", help="run offline on the deterministic mock stack")
    parser.add_argument("--verbose", action="store_true", help="debug logging")

    overrides = parser.add_argument_group("config overrides")
    overrides.add_argument("--db-path", type=Path)
    overrides.add_argument("--vector-path", type=Path)
    overrides.add_argument("--similarity-threshold", type=float)
    overrides.add_argument("--pool-cap", type=int)
    overrides.add_argument("--retrieval-mode", choices=("section", "chunk"))
    overrides.add_argument("--generation-mode", choices=("suppress", "augment"))
    overrides.add_argument("--consolidation-policy", choices=("reject", "queue"))
    overrides.add_argument("--console-dir", type=Path)

    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    p_chat = sub.add_parser("chat", help="interactive session")
    p_chat.set_defaults(func=cmd_chat)

    p_ask = sub.add_parser("ask", help="answer one query and exit")
    p_ask.add_argument("query")
    p_ask.add_argument("--mode", choices=("suppress", "augment"))
    p_ask.add_argument("--json", action="store_true", help="print the full response object")
    p_ask.set_defaults(func=cmd_ask)

    p_bench = sub.add_parser("bench", help="run the lifecycle benchmark")
    p_bench.add_argument(
        "fixture",
        nargs="?",
        type=Path,
        default=None,
        help="JSON question fixture (default: the bundled demo set)",
    )
    p_bench.add_argument(
        "--condition",
        action="append",
        choices=CONDITIONS,
        help="condition to run; repeatable (default: all)",
    )
    p_bench.add_argument("--modes", default=",".join(DEFAULT_MODES), help="comma-separated generation modes")
    p_bench.add_argument("--out", type=Path, default=Path("bench_out"), help="artifact directory")
    p_bench.set_defaults(func=cmd_bench)

    p_sleep = sub.add_parser("sleep", help="run one consolidation cycle")
    p_sleep.set_defaults(func=cmd_sleep)

    p_stats = sub.add_parser("stats", help="print store and pipeline counters")
    p_stats.set_defaults(func=cmd_stats)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=None)
    p_serve.add_argument(
        "--seed-demo",
        action="store_true",
        help="insert demonstration sections across both stores (requires --mock)",
    )
    p_serve.set_defaults(func=cmd_serve)

    return parser


_OVERRIDE_KEYS = (
    "db_path",
    "vector_path",
    "similarity_threshold",
    "pool_cap",
    "retrieval_mode",
    "generation_mode",
    "consolidation_policy",
    "console_dir",
)


def _apply_overrides(config: Config, args: argparse.Namespace) -> Config:
    for key in _OVERRIDE_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            setattr(config, key, value)
    try:
        config.validate()
    except ConfigError as exc:
        # the base config was already validated, so the flags are at fault
        raise UsageError(str(exc)) from exc
    return config


def _build(args: argparse.Namespace) -> KnowledgeSystem:
    if args.mock:
        config = _apply_overrides(mock_config(), args)
        # benches need a frozen clock for byte-identical artifacts; the
        # interactive commands want real time so TTLs actually tick
        clock = None if args.command == "bench" else utc_now
        system, _, _ = build_mock_system(config=config, clock=clock)
        return system
    if not args.config:
        raise UsageError("either --config or --mock is required")
    config = _apply_overrides(load_config(args.config), args)
    return build_system(config)


# =============================================================================
# Output helpers
# =============================================================================


def _print_response(response) -> None:
    print(f"[{response.route}]" + (" (degraded)" if response.degraded else ""))
    print(response.answer)
    if response.references:
        print("references:")
        for ref in response.references:
            print(f"  - {ref['id']}  {ref['topic']}")
    m = response.metrics
    print(
        f"(pairs={m.pairs} cache_hits={m.cache_hits} teacher_calls={m.teacher_calls} "
        f"refreshed={m.refreshed_sections} latency_ms={m.latency_ms:.1f})"
    )


def _print_report(report) -> None:
    print("consolidation report")
    print(f"  staging in     : {report.staging_in}")
    print(f"  discarded      : {report.discarded}")
    print(f"  direct moves   : {report.direct_moves}")
    print(f"  compile calls  : {report.compile_calls}")
    print(f"  compiled out   : {report.compiled_out}")
    print(f"  deferred       : {report.deferred}")
    print(f"  canonical      : {report.canonical_before} -> {report.canonical_after}")


# =============================================================================
# Subcommands
# =============================================================================


def cmd_chat(args, system: KnowledgeSystem) -> int:
    history = ConversationHistory()
    print("sagemem chat — empty line or Ctrl-D to exit")
    while True:
        try:
            line = input("> ").strip()
        except (EOFError, KeyboardInterrupt):
            print()
            break
        if not line:
            break
        try:
            response = system.orchestrator.answer_query(line, history)
        except PipelineError as exc:
            print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
            continue
        _print_response(response)
    return EXIT_OK


def cmd_ask(args, system: KnowledgeSystem) -> int:
    response = system.orchestrator.answer_query(args.query, ConversationHistory(), mode=args.mode)
    if args.json:
        print(json.dumps(response.to_dict(), indent=2, sort_keys=True))
    else:
        _print_response(response)
    return EXIT_OK


def cmd_bench(args, system: KnowledgeSystem) -> int:
    fixture = args.fixture if args.fixture is not None else demo_questions_path()
    if not Path(fixture).exists():
        raise UsageError(f"fixture not found: {fixture}")
    questions = load_questions(fixture)
    conditions = tuple(args.condition) if args.condition else CONDITIONS
    modes = tuple(m.strip() for m in args.modes.split(",") if m.strip())
    if not modes:
        raise UsageError("--modes must name at least one mode")
    summary = run_lifecycle(system, questions, conditions=conditions, modes=modes, out_dir=args.out)
    for condition, entry in summary["conditions"].items():
        for mode, scores in entry["modes"].items():
            accuracy = scores.get("accuracy")
            shown = f"{accuracy:.3f}" if accuracy is not None else "n/a"
            print(
                f"{condition:>20} {mode:>9}  accuracy={shown}  "
                f"judgments={scores['judgments']}"
            )
        if "cache_hit_rate" in entry:
            print(
                f"{condition:>20} {'—':>9}  cache_hit_rate={entry['cache_hit_rate']:.2f}  "
                f"teacher/q={entry['teacher_calls_per_query']:.2f}"
            )
    print(f"artifacts in {args.out}")
    return EXIT_OK


def cmd_sleep(args, system: KnowledgeSystem) -> int:
    report = system.consolidator.sleep_cycle()
    system.persist_index()
    _print_report(report)
    return EXIT_OK


def cmd_stats(args, system: KnowledgeSystem) -> int:
    print(json.dumps(system.stats(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_serve(args, system: KnowledgeSystem) -> int:
    from sagemem.service import serve

    if args.seed_demo:
        if not args.mock:
            raise UsageError("--seed-demo only makes sense with --mock")
        seed_demo(system)
    serve(system, host=args.host, port=args.port)
    return EXIT_OK


# =============================================================================
# Demo seeding (used by the web console's integration tests)
# =============================================================================


def seed_demo(system: KnowledgeSystem) -> None:
    """Populate both stores with sections in assorted TTL states."""
    now = system.clock()
    rows = [
        # (id, topic, category, store, ttl minutes, age)
        ("demo-boiling", "Boiling point of water", "Chemistry", CANONICAL, 525600, timedelta()),
        ("demo-photosynthesis", "Photosynthesis overview", "Biology", CANONICAL, 525600, timedelta()),
        ("demo-fresh", "Current gold price", "Finance", STAGING, 60, timedelta()),
        ("demo-expired", "Yesterday's weather", "Earth Science", STAGING, 5, timedelta(minutes=30)),
        ("demo-crossing", "League standings", "Fitness and Sports", STAGING, 5, timedelta(minutes=5, seconds=-8)),
        ("demo-ephemeral", "Word of the day", "Linguistics", STAGING, 0, timedelta()),
    ]
    for section_id, topic, category, store, ttl, age in rows:
        section = Section(
            id=section_id,
            topic=topic,
            summary=f"{topic} (demonstration data)",
            content=f"{topic}. Seeded demonstration content for the console.",
            refresh_minutes=ttl,
            category=category,
            created_at=now - age,
            store=store,
        )
        system.store.upsert(section)
        system.strategy.index_section(section)
    logger.info("seeded %d demo sections", len(rows))


# =============================================================================
# Entry point
# =============================================================================


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        system = _build(args)
    except UsageError as exc:
        parser.error(str(exc))  # exits 1
    except (ConfigError, OSError) as exc:
        print(f"sagemem: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    try:
        return args.func(args, system)
    except UsageError as exc:
        parser.error(str(exc))  # exits 1
    except (PipelineError, GatewayError, BenchmarkError, ConfigError, OSError) as exc:
        print(f"sagemem: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        system.close()


if __name__ == "__main__":
    sys.exit(main())
