"""Scoring math, judging, and benchmark runs over the mock stack."""

import json
import random

import pytest

from sagemem.evalharness import (
    BASELINE_MODE,
    BenchmarkError,
    BenchmarkQuestion,
    Judge,
    demo_questions_path,
    load_questions,
    read_csv_rows,
    run_benchmark,
    run_lifecycle,
    score_accuracy,
    system_judge,
    wilson_interval,
)
from sagemem.mocks import ScriptedJudge, ScriptedTeacher
from sagemem.system import build_mock_system

SEED = 7411


def fresh_system(**kwargs):
    system, mock, recorder = build_mock_system(**kwargs)
    return system, mock


# =============================================================================
# Scored accuracy
# =============================================================================


class TestScoreAccuracy:
    @pytest.mark.parametrize(
        "correct,partial,total,expected",
        [
            (250, 0, 250, 1.0),
            (0, 250, 250, 0.5),
            (208, 9, 250, 0.850),
            (0, 0, 10, 0.0),
            (3, 2, 10, 0.4),
        ],
    )
    def test_known_values(self, correct, partial, total, expected):
        assert score_accuracy(correct, partial, total) == pytest.approx(expected)

    def test_property_sweep(self):
        rng = random.Random(SEED)
        for _ in range(10_000):
            total = rng.randrange(1, 500)
            correct = rng.randrange(0, total + 1)
            partial = rng.randrange(0, total - correct + 1)
            score = score_accuracy(correct, partial, total)
            strict = correct / total
            lenient = (correct + partial) / total
            assert 0.0 <= score <= 1.0
            assert strict - 1e-12 <= score <= lenient + 1e-12
            if partial == 0:
                assert score == pytest.approx(strict)
            if correct == 0 and partial == total:
                assert score == pytest.approx(0.5)

    def test_rejects_bad_counts(self):
        with pytest.raises(ValueError):
            score_accuracy(1, 0, 0)
        with pytest.raises(ValueError):
            score_accuracy(6, 5, 10)
        with pytest.raises(ValueError):
            score_accuracy(-1, 0, 10)


# =============================================================================
# Wilson interval
# =============================================================================


class TestWilsonInterval:
    def test_published_oracle_values(self):
        lo, hi = wilson_interval(80, 250)
        assert (round(lo, 3), round(hi, 3)) == (0.265, 0.380)
        lo, hi = wilson_interval(210, 250)
        assert (round(lo, 3), round(hi, 3)) == (0.789, 0.880)

    def test_symmetric_at_half(self):
        lo, hi = wilson_interval(50, 100)
        assert (round(lo, 3), round(hi, 3)) == (0.404, 0.596)
        assert lo + hi == pytest.approx(1.0)

    def test_edge_counts_clamp(self):
        lo, hi = wilson_interval(0, 40)
        assert lo == 0.0 and hi > 0.0
        lo, hi = wilson_interval(40, 40)
        assert hi == 1.0 and lo < 1.0

    def test_contains_point_estimate(self):
        rng = random.Random(SEED + 1)
        for _ in range(2_000):
            n = rng.randrange(1, 1000)
            successes = rng.randrange(0, n + 1)
            lo, hi = wilson_interval(successes, n)
            p = successes / n
            assert 0.0 <= lo <= p <= hi <= 1.0

    def test_width_shrinks_with_n(self):
        for p_num, p_den in ((1, 4), (1, 2), (4, 5)):
            widths = []
            for n in (20, 80, 320, 1280):
                successes = n * p_num // p_den
                lo, hi = wilson_interval(successes, n)
                widths.append(hi - lo)
            assert widths == sorted(widths, reverse=True)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            wilson_interval(0, 0)
        with pytest.raises(ValueError):
            wilson_interval(5, 4)
        with pytest.raises(ValueError):
            wilson_interval(-1, 4)


# =============================================================================
# Questions fixture
# =============================================================================


class TestQuestions:
    def test_demo_fixture_loads(self):
        questions = load_questions(demo_questions_path())
        assert len(questions) == 20
        assert len({q.id for q in questions}) == 20
        buckets = {q.bucket for q in questions}
        assert buckets == {"specialist", "synthesis", "control", "external"}

    def test_validation(self):
        with pytest.raises(BenchmarkError):
            BenchmarkQuestion(id="q", question="text", gold="  ")
        with pytest.raises(BenchmarkError):
            BenchmarkQuestion(id="q", question="text", gold="g", bucket="novel")
        with pytest.raises(BenchmarkError):
            BenchmarkQuestion(id="", question="text", gold="g")

    def test_duplicate_ids_rejected(self, tmp_path):
        path = tmp_path / "qs.json"
        row = {"id": "dup", "question": "q", "gold": "g", "bucket": "control"}
        path.write_text(json.dumps([row, row]))
        with pytest.raises(BenchmarkError):
            load_questions(path)

    def test_non_array_rejected(self, tmp_path):
        path = tmp_path / "qs.json"
        path.write_text("{}")
        with pytest.raises(BenchmarkError):
            load_questions(path)


# =============================================================================
# Judge
# =============================================================================


class TestJudge:
    @pytest.mark.parametrize("verdict", ["correct", "partial", "wrong", "refused"])
    def test_all_verdicts_map_through(self, verdict):
        judge_model = ScriptedJudge(judge_fn=lambda q, g, r: verdict)
        system, _ = fresh_system(judge=judge_model)
        judge = system_judge(system)
        assert judge.judge("q", "gold", "response") == verdict

    def test_unknown_verdict_is_judge_error(self):
        judge_model = ScriptedJudge(judge_fn=lambda q, g, r: "magnificent")
        system, _ = fresh_system(judge=judge_model)
        assert system_judge(system).judge("q", "g", "r") == "judge_error"

    def test_non_json_output_is_judge_error(self):
        class ProseJudge:
            def judge(self, content):
                return "I think it looks fine."

        system, _ = fresh_system(judge=ProseJudge())
        assert system_judge(system).judge("q", "g", "r") == "judge_error"

    def test_default_judge_substring_grading(self):
        system, _ = fresh_system()
        judge = system_judge(system)
        assert judge.judge("q", "boiling point", "the boiling point is 100C") == "correct"
        assert judge.judge("q", "mercury is liquid", "a liquid metal") == "partial"
        assert judge.judge("q", "gluon", "something else entirely") == "wrong"
        assert judge.judge("q", "gold", "No stored knowledge covers: q") == "refused"


# =============================================================================
# Benchmark runs
# =============================================================================


QUESTIONS = load_questions(demo_questions_path())

# judgment each question earns under the default mock stack (the gold is, is
# not, or partially token-overlaps the echoed search text)
EXPECTED_COLD = {"correct": 11, "partial": 5, "wrong": 4, "refused": 0, "judge_error": 0}


class TestRunBenchmark:
    def test_baseline_never_calls_teachers(self):
        system, mock = fresh_system()
        run = run_benchmark(system, QUESTIONS, "baseline")
        assert run.modes == (BASELINE_MODE,)
        assert all(r.teacher_calls == 0 for r in run.records)
        assert all(not r.cache_hit for r in run.records)
        assert mock.teacher.acquire_calls == 0
        assert system.store.count() == 0

    def test_unknown_condition_rejected(self):
        system, _ = fresh_system()
        with pytest.raises(BenchmarkError):
            run_benchmark(system, QUESTIONS, "tepid")

    def test_empty_question_list_gives_header_only_csv(self, tmp_path):
        system, _ = fresh_system()
        run = run_benchmark(system, [], "cold")
        path = run.write_csv(tmp_path / "cold.csv")
        assert path.read_text() == "id,mode,response,judgment,cache_hit,teacher_calls,blocks,latency_ms\n"

    def test_cold_judgment_mix_matches_fixture_design(self):
        system, _ = fresh_system()
        run = run_benchmark(system, QUESTIONS, "cold")
        summary = run.summary()
        assert summary["modes"]["suppress"]["judgments"] == EXPECTED_COLD
        assert summary["modes"]["augment"]["judgments"] == EXPECTED_COLD
        expected_accuracy = score_accuracy(11, 5, 20)
        assert summary["modes"]["suppress"]["accuracy"] == pytest.approx(expected_accuracy)
        assert summary["cache_hit_rate"] == 0.0
        assert summary["teacher_calls_per_query"] >= 1.0

    def test_generation_runs_once_per_mode_but_acquisition_once(self):
        system, mock = fresh_system()
        run_benchmark(system, QUESTIONS[:3], "cold")
        assert mock.teacher.acquire_calls == 3  # one per question, not per mode

    def test_pipeline_failure_recorded_as_wrong_with_tag(self):
        teacher = ScriptedTeacher(fail=True)
        system, _ = fresh_system(teacher=teacher)
        run = run_benchmark(system, QUESTIONS[:2], "cold")
        for record in run.records:
            suppress = record.outcomes["suppress"]
            assert suppress.judgment == "wrong"
            assert suppress.error == "generate"  # no sections to ground on
            augment = record.outcomes["augment"]
            assert augment.error is None
            assert augment.judgment == "refused"  # fallback answer declines
        summary = run.summary()
        assert summary["modes"]["suppress"]["pipeline_errors"] == 2


class TestRunLifecycle:
    CONDITIONS = ("cold", "warm", "post_consolidation")

    def run_once(self, tmp_path, name):
        system, _ = fresh_system()
        out_dir = tmp_path / name
        summary = run_lifecycle(
            system, QUESTIONS, conditions=self.CONDITIONS, out_dir=out_dir
        )
        return system, out_dir, summary

    def test_warm_pass_is_all_cache_hits(self, tmp_path):
        _, _, summary = self.run_once(tmp_path, "run")
        cold = summary["conditions"]["cold"]
        warm = summary["conditions"]["warm"]
        assert cold["cache_hit_rate"] == 0.0
        assert cold["teacher_calls_per_query"] >= 1.0
        assert warm["cache_hit_rate"] == 1.0
        assert warm["teacher_calls_per_query"] == 0.0
        post = summary["conditions"]["post_consolidation"]
        assert post["cache_hit_rate"] == 1.0
        assert summary["consolidation"]["staging_in"] == 20

    def test_csv_files_and_row_counts(self, tmp_path):
        _, out_dir, summary = self.run_once(tmp_path, "run")
        for condition in self.CONDITIONS:
            rows = read_csv_rows(out_dir / f"{condition}.csv")
            assert len(rows) == len(QUESTIONS) * 2  # questions x modes
            assert all(set(r) == {"id", "mode", "response", "judgment", "cache_hit", "teacher_calls", "blocks", "latency_ms"} for r in rows)
            assert all(r["latency_ms"] == "0.000" for r in rows)  # frozen clock
        assert (out_dir / "summary.json").exists()

    def test_accuracies_recomputable_from_csv(self, tmp_path):
        _, out_dir, summary = self.run_once(tmp_path, "run")
        for condition in self.CONDITIONS:
            rows = read_csv_rows(out_dir / f"{condition}.csv")
            for mode in ("suppress", "augment"):
                mode_rows = [r for r in rows if r["mode"] == mode]
                correct = sum(1 for r in mode_rows if r["judgment"] == "correct")
                partial = sum(1 for r in mode_rows if r["judgment"] == "partial")
                recomputed = score_accuracy(correct, partial, len(mode_rows))
                stated = summary["conditions"][condition]["modes"][mode]["accuracy"]
                assert recomputed == stated

    def test_reruns_are_byte_identical(self, tmp_path):
        _, dir_a, _ = self.run_once(tmp_path, "a")
        _, dir_b, _ = self.run_once(tmp_path, "b")
        for name in ("cold.csv", "warm.csv", "post_consolidation.csv", "summary.json"):
            a = (dir_a / name).read_bytes()
            b = (dir_b / name).read_bytes()
            assert a == b, f"{name} differs between identical runs"
        # the summary's files map is the only path-dependent field
        summary_a = json.loads((dir_a / "summary.json").read_text())
        assert set(summary_a["files"]) == set(self.CONDITIONS)

    def test_warming_pass_when_cold_not_requested(self, tmp_path):
        system, _ = fresh_system()
        summary = run_lifecycle(system, QUESTIONS[:4], conditions=("warm",))
        assert summary["conditions"]["warm"]["cache_hit_rate"] == 1.0

    def test_unknown_condition_rejected(self):
        system, _ = fresh_system()
        with pytest.raises(BenchmarkError):
            run_lifecycle(system, QUESTIONS, conditions=("cold", "lukewarm"))
