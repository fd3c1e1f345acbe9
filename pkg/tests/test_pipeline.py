"""The online answer path, end to end on the deterministic mock stack."""

import json

import pytest

from sagemem.mocks import MockTransport, ScriptedLocalModel, ScriptedTeacher
from sagemem.pipeline import (
    ROUTE_CODING,
    ROUTE_CONVERSATIONAL,
    ROUTE_FACTUAL,
    ConversationHistory,
    PipelineError,
    parse_sections_block,
    render_sections_block,
    strip_interrogatives,
)
from sagemem.system import build_mock_system
from sagemem.types import STAGING, Taxonomy

from tests.test_types import make_section


def fresh_system(**kwargs):
    system, mock, recorder = build_mock_system(record=True, **kwargs)
    return system, mock, recorder


def ask(system, query, history=None, mode=None):
    history = history if history is not None else ConversationHistory()
    return system.orchestrator.answer_query(query, history, mode=mode)


# =============================================================================
# Query text helpers
# =============================================================================


class TestStripInterrogatives:
    @pytest.mark.parametrize(
        "query,expected",
        [
            ("What is the boiling point of water?", "boiling point of water"),
            ("How does a refrigerator work", "refrigerator work"),
            ("Tell me about the Krebs cycle.", "Krebs cycle"),
            ("Why is the sky blue?!", "sky blue"),
            ("photosynthesis", "photosynthesis"),
        ],
    )
    def test_leading_question_words_dropped(self, query, expected):
        assert strip_interrogatives(query) == expected

    def test_never_returns_empty(self):
        # queries made only of question words come back whole rather than empty
        assert strip_interrogatives("what is the") == "what is the"
        assert strip_interrogatives("  why?  ") == "why?"


class TestSectionsBlock:
    def test_roundtrip(self):
        sections = [
            make_section(id="s-1", topic="Osmosis", content="Water crosses membranes."),
            make_section(id="s-2", topic="Diffusion", content="Particles spread out.\nAlways."),
        ]
        entries = parse_sections_block(render_sections_block(sections))
        assert [e["id"] for e in entries] == ["s-1", "s-2"]
        assert entries[0]["topic"] == "Osmosis"
        assert entries[1]["content"] == "Particles spread out.\nAlways."

    def test_empty_renders_placeholder(self):
        assert render_sections_block([]) == "(none)"
        assert parse_sections_block("(none)") == []


# =============================================================================
# Classification and routing
# =============================================================================


class TestClassify:
    def test_factual_query_produces_normalized_pairs(self):
        system, _, _ = fresh_system()
        result = system.orchestrator.classify(
            "What is the role of chlorophyll in biology?", ConversationHistory()
        )
        assert result.query_type == "factual"
        assert len(result.pairs) == 1
        assert result.pairs[0].category == "Biology"

    def test_greeting_routes_conversational(self):
        system, _, _ = fresh_system()
        result = system.orchestrator.classify("Hello there!", ConversationHistory())
        assert result.query_type == "conversational"
        assert result.pairs == ()

    def test_invalid_categories_fall_back_to_query_pair(self):
        local = ScriptedLocalModel(
            classify_fn=lambda q: {
                "query_type": "factual",
                "pairs": [{"category": "Not A Real Category", "search": "something"}],
            }
        )
        system, _, _ = fresh_system(local=local)
        result = system.orchestrator.classify("What is quantum physics about?", ConversationHistory())
        assert len(result.pairs) == 1
        # no usable classifier pair: category comes from the query text itself
        assert result.pairs[0].category == "Physics"
        assert result.pairs[0].search == "quantum physics about"

    def test_unrecognized_query_type_is_an_error(self):
        local = ScriptedLocalModel(classify_fn=lambda q: {"query_type": "mystery", "pairs": []})
        system, _, _ = fresh_system(local=local)
        with pytest.raises(PipelineError) as err:
            system.orchestrator.classify("anything", ConversationHistory())
        assert err.value.stage == "classify"

    def test_classifier_temperature_pinned_to_zero(self):
        system, _, recorder = fresh_system()
        ask(system, "What is entropy in physics?")
        classify_calls = recorder.calls_for("classify")
        assert classify_calls and all(c.temperature == 0.0 for c in classify_calls)

    def test_generation_uses_endpoint_temperature(self):
        system, _, recorder = fresh_system()
        ask(system, "What is entropy in physics?")
        generate_calls = recorder.calls_for("generate")
        assert generate_calls and all(c.temperature == 0.7 for c in generate_calls)


# =============================================================================
# Full turns: cold, warm, bypass
# =============================================================================


class TestAnswerQuery:
    def test_cold_turn_acquires_and_answers(self):
        system, mock, _ = fresh_system()
        response = ask(system, "What is mitosis in biology?")
        assert response.route == ROUTE_FACTUAL
        assert response.mode == "suppress"
        assert response.metrics.teacher_calls == 1
        assert response.metrics.cache_hits == 0
        assert not response.degraded
        assert mock.teacher.acquire_calls == 1
        # acquired material lands in staging and is cited
        assert system.store.count(STAGING) == 1
        [section] = system.store.list(store=STAGING)
        assert response.references == [{"id": section.id, "topic": section.topic}]
        assert section.content in response.answer

    def test_warm_turn_hits_store_without_teacher(self):
        system, mock, _ = fresh_system()
        ask(system, "What is mitosis in biology?")
        response = ask(system, "What is mitosis in biology?")
        assert response.metrics.cache_hits == 1
        assert response.metrics.teacher_calls == 0
        assert mock.teacher.acquire_calls == 1
        assert system.store.count() == 1  # nothing new persisted

    def test_conversational_bypass_touches_nothing(self):
        system, mock, _ = fresh_system()
        response = ask(system, "Hello, how are you today?")
        assert response.route == ROUTE_CONVERSATIONAL
        assert response.answer.startswith("(direct)")
        assert response.references == []
        assert mock.teacher.acquire_calls == 0
        assert system.store.count() == 0

    def test_coding_bypass(self):
        system, _, _ = fresh_system()
        response = ask(system, "Write a function that reverses a list")
        assert response.route == ROUTE_CODING

    def test_bypass_receives_conversation_history(self):
        captured: list[list[dict]] = []

        class CapturingTransport(MockTransport):
            def chat(self, endpoint, messages, temperature, role_kind, op=None):
                if op == "generate.direct":
                    captured.append(messages)
                return super().chat(endpoint, messages, temperature, role_kind, op)

        from sagemem.system import build_system, mock_config
        from sagemem.mocks import ManualClock, SequenceIds

        config = mock_config()
        taxonomy = Taxonomy.load(config.taxonomy_path)
        transport = CapturingTransport(local=ScriptedLocalModel(taxonomy=tuple(taxonomy)))
        system = build_system(
            config,
            transport=transport,
            clock=ManualClock(),
            id_factory=SequenceIds(),
            sleep=lambda _s: None,
            in_memory=True,
        )
        history = ConversationHistory()
        ask(system, "Hello!", history)
        ask(system, "Thanks for that", history)
        [first, second] = captured
        # system prompt + prior turns + current user message
        assert len(first) == 2
        assert len(second) == 4
        assert second[1]["content"] == "Hello!"
        assert second[-1]["content"] == "Thanks for that"

    def test_history_records_every_turn(self):
        system, _, _ = fresh_system()
        history = ConversationHistory()
        ask(system, "Hi!", history)
        ask(system, "What is osmosis in biology?", history)
        assert len(history) == 2
        assert history.turns[1].user == "What is osmosis in biology?"
        assert history.turns[1].assistant  # the generated answer

    def test_multi_pair_query_fills_both_pools(self):
        local = ScriptedLocalModel(
            classify_fn=lambda q: {
                "query_type": "factual",
                "pairs": [
                    {"category": "Physics", "search": "speed of light"},
                    {"category": "Chemistry", "search": "molar mass"},
                ],
            }
        )
        system, mock, _ = fresh_system(local=local)
        response = ask(system, "irrelevant")
        assert response.metrics.pairs == 2
        assert response.metrics.teacher_calls == 2
        # both acquired sections cited, in order
        assert len(response.references) == 2
        second = ask(system, "irrelevant")
        assert second.metrics.cache_hits == 2
        assert second.metrics.teacher_calls == 0


# =============================================================================
# Inline TTL refresh
# =============================================================================


def expiring_teacher(minutes=1):
    return ScriptedTeacher(refresh_spec={"value": minutes, "unit": "minutes"})


class TestInlineRefresh:
    def test_expired_hit_is_replaced_before_generation(self):
        teacher = expiring_teacher(minutes=1)
        system, mock, _ = fresh_system(teacher=teacher)
        clock = system.clock
        ask(system, "What is the price of gold in finance?")
        [original] = system.store.list()

        clock.advance(minutes=2)
        response = ask(system, "What is the price of gold in finance?")
        assert teacher.refresh_calls == 1
        assert response.metrics.refreshed_sections == 1
        assert response.metrics.cache_hits == 1
        assert response.metrics.teacher_calls == 1  # the refresh call
        assert not response.degraded

        # the original is gone, its successor persisted and indexed
        assert system.store.get(original.id) is None
        [successor] = system.store.list()
        assert successor.id != original.id
        assert successor.content == original.content  # scripted refresh echoes
        assert system.index.records_for_section(successor.id, STAGING)
        assert system.index.records_for_section(original.id, STAGING) == []
        assert response.references == [{"id": successor.id, "topic": successor.topic}]

    def test_fresh_hit_is_not_refreshed(self):
        teacher = expiring_teacher(minutes=60)
        system, mock, _ = fresh_system(teacher=teacher)
        ask(system, "What is the price of gold in finance?")
        system.clock.advance(minutes=2)  # well inside the hour
        response = ask(system, "What is the price of gold in finance?")
        assert teacher.refresh_calls == 0
        assert response.metrics.refreshed_sections == 0

    def test_refresh_failure_serves_stale_flagged(self):
        teacher = expiring_teacher(minutes=1)
        system, mock, _ = fresh_system(teacher=teacher)
        ask(system, "What is the price of gold in finance?")
        [original] = system.store.list()

        system.clock.advance(minutes=2)
        teacher.fail = True
        response = ask(system, "What is the price of gold in finance?")
        assert response.degraded
        assert original.content in response.answer  # stale content still served
        assert system.store.get(original.id) == original  # nothing deleted
        assert response.metrics.refreshed_sections == 0
        assert response.metrics.teacher_calls == 1  # the failed attempt counts

    def test_expiry_is_strict(self):
        teacher = expiring_teacher(minutes=5)
        system, mock, _ = fresh_system(teacher=teacher)
        ask(system, "What is the price of gold in finance?")

        system.clock.advance(minutes=5)  # exactly at the boundary: still fresh
        ask(system, "What is the price of gold in finance?")
        assert teacher.refresh_calls == 0

        system.clock.advance(seconds=1)  # now past it
        ask(system, "What is the price of gold in finance?")
        assert teacher.refresh_calls == 1

    def test_ephemeral_section_serves_within_its_turn(self):
        teacher = ScriptedTeacher(refresh_spec={"value": 0, "unit": "none"})
        system, mock, _ = fresh_system(teacher=teacher)
        response = ask(system, "What is the score of the game in fitness and sports?")
        assert response.metrics.teacher_calls == 1
        assert teacher.refresh_calls == 0  # no same-turn refresh of its own acquisition
        [section] = system.store.list()
        assert section.refresh_minutes == 0
        assert section.content in response.answer

    def test_ephemeral_section_expired_on_next_turn(self):
        teacher = ScriptedTeacher(refresh_spec={"value": 0, "unit": "none"})
        system, mock, _ = fresh_system(teacher=teacher)
        ask(system, "What is the score of the game in fitness and sports?")
        system.clock.advance(seconds=30)
        ask(system, "What is the score of the game in fitness and sports?")
        assert teacher.refresh_calls == 1  # hit, but already stale

    def test_refresh_batches_by_category(self):
        # two expired sections in one category must share one teacher call
        teacher = expiring_teacher(minutes=1)
        local = ScriptedLocalModel(
            classify_fn=lambda q: {
                "query_type": "factual",
                "pairs": [
                    {"category": "Finance", "search": "gold price today"},
                    {"category": "Finance", "search": "silver price today"},
                ],
            }
        )
        system, mock, _ = fresh_system(local=local, teacher=teacher)
        ask(system, "irrelevant")
        assert system.store.count() == 2

        system.clock.advance(minutes=2)
        response = ask(system, "irrelevant")
        assert teacher.refresh_calls == 1
        assert response.metrics.refreshed_sections == 2
        assert system.store.count() == 2  # two successors


# =============================================================================
# Generation modes
# =============================================================================


class TestGenerate:
    def test_suppress_with_no_sections_is_an_error(self):
        system, _, _ = fresh_system()
        with pytest.raises(PipelineError) as err:
            system.orchestrator.generate("anything", [], "suppress")
        assert err.value.stage == "generate"

    def test_augment_with_no_sections_is_allowed(self):
        system, _, _ = fresh_system()
        answer, references, fallback = system.orchestrator.generate("anything", [], "augment")
        assert references == [] and not fallback
        assert answer

    def test_teacher_outage_on_cold_suppress_query_fails_loudly(self):
        teacher = ScriptedTeacher(fail=True)
        system, _, _ = fresh_system(teacher=teacher)
        with pytest.raises(PipelineError) as err:
            ask(system, "What is mitosis in biology?")
        assert err.value.stage == "generate"  # empty pools reach suppress generation

    def test_teacher_outage_in_augment_mode_still_answers(self):
        teacher = ScriptedTeacher(fail=True)
        system, _, _ = fresh_system(teacher=teacher, generation_mode="augment")
        response = ask(system, "What is mitosis in biology?")
        assert response.route == ROUTE_FACTUAL
        assert response.degraded  # the failed pair marks the turn
        assert response.answer

    def test_mode_override_per_call(self):
        system, _, recorder = fresh_system()
        ask(system, "What is mitosis in biology?", mode="augment")
        ops = [c.op for c in recorder.calls_for("generate")]
        assert ops == ["generate.augment"]

    def test_unknown_mode_rejected(self):
        system, _, _ = fresh_system()
        with pytest.raises(PipelineError):
            system.orchestrator.generate("q", [make_section()], "creative")

    def test_reference_filtering_and_dedup(self):
        def generate_fn(query, entries):
            return {
                "answer": "grounded answer",
                "references": [entries[0]["id"], "not-a-real-id", 1, entries[0]["id"], None],
            }

        local = ScriptedLocalModel(generate_fn=generate_fn)
        system, _, _ = fresh_system(local=local)
        response = ask(system, "What is mitosis in biology?")
        assert len(response.references) == 1  # valid id kept once; junk dropped

    def test_numeric_references_resolve_by_position(self):
        local = ScriptedLocalModel(
            generate_fn=lambda q, entries: {"answer": "ok", "references": [1]}
        )
        system, _, _ = fresh_system(local=local)
        response = ask(system, "What is mitosis in biology?")
        [section] = system.store.list()
        assert response.references == [{"id": section.id, "topic": section.topic}]

    def test_non_json_generation_served_raw_and_flagged(self):
        class ProseModel(ScriptedLocalModel):
            def generate(self, content, op):
                return "Mitosis is cell division. No JSON here."

        system, _, _ = fresh_system(local=ProseModel())
        response = ask(system, "What is mitosis in biology?")
        assert response.degraded
        assert response.references == []
        assert response.answer == "Mitosis is cell division. No JSON here."

    def test_json_missing_answer_falls_back_to_raw(self):
        class EmptyAnswerModel(ScriptedLocalModel):
            def generate(self, content, op):
                return json.dumps({"answer": "", "references": []})

        system, _, _ = fresh_system(local=EmptyAnswerModel())
        response = ask(system, "What is mitosis in biology?")
        assert response.degraded


# =============================================================================
# Stats and determinism
# =============================================================================


class TestStatsAndDeterminism:
    def test_running_totals(self):
        system, _, _ = fresh_system()
        ask(system, "Hi!")
        ask(system, "What is mitosis in biology?")
        ask(system, "What is mitosis in biology?")
        stats = system.orchestrator.stats()
        assert stats["queries"] == 3
        assert stats["cache_hit_rate"] == pytest.approx(0.5)  # 1 of 2 factual turns
        assert stats["teacher_calls_total"] == 1
        merged = system.stats()
        assert merged["staging_count"] == 1
        assert merged["canonical_count"] == 0

    def test_two_identical_systems_agree_byte_for_byte(self):
        queries = [
            "Hello!",
            "What is mitosis in biology?",
            "What is mitosis in biology?",
            "What is the price of gold in finance?",
        ]

        def run():
            system, _, _ = fresh_system()
            history = ConversationHistory()
            out = []
            for query in queries:
                system.clock.advance(minutes=1)
                response = ask(system, query, history)
                out.append(json.dumps(response.to_dict(), sort_keys=True))
            out.append(json.dumps(sorted(s.id for s in system.store.list())))
            return out

        assert run() == run()

    def test_latency_zero_under_frozen_clock(self):
        system, _, _ = fresh_system()
        response = ask(system, "What is mitosis in biology?")
        assert response.metrics.latency_ms == 0.0
