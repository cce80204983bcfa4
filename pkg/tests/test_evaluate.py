"""Perplexity, improvement arithmetic, NDCG, and comparison tables."""

import math

import numpy as np
import pytest

import oracles
from intentclick.evaluate import (
    ComparabilityError,
    EvalReport,
    compare_models,
    dcg,
    empirical_ctr,
    evaluate_model,
    format_comparison_table,
    format_report,
    intent_distributions,
    load_report,
    mixture_relevance_scorer,
    ndcg_at_k,
    ndcg_for_scores,
    perplexity_improvement,
    perplexity_report,
    position_perplexity,
    query_intents_from_sessions,
    rank_by_relevance,
    save_report,
)
from intentclick.errors import DataError
from intentclick.models import IntentAwareParams, PbmParams
from intentclick.sessions import Intent, RelevanceJudgment, Session


def _session(clicks, query="q1", intent=Intent.UNKNOWN, sid="s"):
    docs = tuple(f"d{i}" for i in range(1, len(clicks) + 1))
    return Session(sid, query, intent, docs, tuple(clicks))


def _pbm(gammas, rels, query="q1"):
    exam = {i + 1: g for i, g in enumerate(gammas)}
    rel = {(query, f"d{i + 1}"): r for i, r in enumerate(rels)}
    return PbmParams(exam=exam, rel=rel, max_positions=len(gammas))


class TestPositionPerplexity:
    def test_coin_flip_predictor_is_exactly_two(self):
        assert position_perplexity([0.5, 0.5, 0.5], [1, 0, 1]) == 2.0

    def test_near_perfect_predictions_approach_one(self):
        eps = 1e-9
        q = [1 - eps, eps, 1 - eps, eps]
        c = [1, 0, 1, 0]
        assert position_perplexity(q, c) == pytest.approx(1.0, abs=1e-6)

    def test_single_session_quarter_probability(self):
        assert position_perplexity([0.25], [1]) == pytest.approx(4.0)

    def test_always_at_least_one(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            q = rng.uniform(0, 1, 20)
            c = rng.integers(0, 2, 20)
            assert position_perplexity(q.tolist(), c.tolist()) >= 1.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            position_perplexity([], [])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            position_perplexity([0.5], [1, 0])


class TestPerplexityImprovement:
    def test_published_overall_pair(self):
        assert perplexity_improvement(1.255, 1.268) == pytest.approx(4.85, abs=0.01)

    def test_published_position_pair(self):
        assert perplexity_improvement(1.089, 1.107) == pytest.approx(16.8, abs=0.05)

    def test_equal_perplexities_give_zero(self):
        assert perplexity_improvement(1.3, 1.3) == 0.0

    def test_degenerate_baseline_rejected(self):
        with pytest.raises(ValueError):
            perplexity_improvement(1.1, 1.0)

    def test_sign_tracks_direction(self):
        assert perplexity_improvement(1.2, 1.4) > 0
        assert perplexity_improvement(1.4, 1.2) < 0


class TestPerplexityReport:
    def test_short_sessions_only_count_where_present(self):
        params = _pbm([1.0, 1.0, 1.0], [0.5, 0.5, 0.5])
        sessions = [
            _session((1, 0, 1), sid="a"),
            _session((0, 1), sid="b"),
            _session((1,), sid="c"),
        ]
        report = perplexity_report(params, sessions)
        assert report.position_counts == [3, 2, 1]
        assert report.per_position == [2.0, 2.0, 2.0]
        assert report.overall == pytest.approx(2.0)
        assert report.n_sessions == 3 and report.n_queries == 1

    def test_overall_is_arithmetic_mean(self):
        params = _pbm([0.9, 0.4], [0.7, 0.2])
        rng = np.random.default_rng(1)
        sessions = [
            _session(tuple(int(x) for x in rng.integers(0, 2, 2)), sid=f"s{i}")
            for i in range(40)
        ]
        report = perplexity_report(params, sessions)
        assert report.overall == pytest.approx(
            sum(report.per_position) / len(report.per_position)
        )

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            perplexity_report(_pbm([0.5], [0.5]), [])


class TestNdcg:
    def test_ideal_ranking_scores_one(self):
        assert ndcg_at_k([3, 2, 1, 0], [3, 2, 1, 0], 4) == 1.0

    def test_two_doc_example(self):
        value = ndcg_at_k([0, 1], [1, 0], 2)
        assert value == pytest.approx(1.0 / math.log2(3.0), abs=1e-4)
        assert value == pytest.approx(0.6309, abs=1e-4)

    def test_matches_dcg_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            grades = [int(g) for g in rng.integers(0, 5, 6)]
            if not any(grades):
                continue
            served = list(grades)
            rng.shuffle(served)
            ideal = sorted(grades, reverse=True)
            k = int(rng.integers(1, 7))
            expected = oracles.dcg_at_k(served, k) / oracles.dcg_at_k(ideal, k)
            assert ndcg_at_k(served, ideal, k) == pytest.approx(expected)

    def test_log_base_cancels(self):
        rng = np.random.default_rng(3)
        grades = [int(g) for g in rng.integers(0, 5, 5)]
        served = list(grades)
        rng.shuffle(served)
        ideal = sorted(grades, reverse=True)
        for k in (1, 3, 5):
            base2 = oracles.dcg_at_k(served, k, base=2.0) / oracles.dcg_at_k(ideal, k, base=2.0)
            base_e = oracles.dcg_at_k(served, k, base=math.e) / oracles.dcg_at_k(ideal, k, base=math.e)
            assert base2 == pytest.approx(base_e, abs=1e-12)
            assert ndcg_at_k(served, ideal, k) == pytest.approx(base2)

    def test_all_zero_grades_are_undefined(self):
        assert ndcg_at_k([0, 0, 0], [0, 0, 0], 2) is None

    def test_multiset_mismatch_rejected(self):
        with pytest.raises(DataError):
            ndcg_at_k([1, 2], [2, 2], 2)

    def test_unsorted_ideal_rejected(self):
        with pytest.raises(DataError):
            ndcg_at_k([1, 2], [1, 2], 2)

    def test_value_invariant_to_equal_grade_swaps(self):
        served_a = [2, 1, 1, 0]
        served_b = [2, 1, 1, 0]  # same grades, different docs behind them
        ideal = [2, 1, 1, 0]
        for k in (1, 2, 3, 4):
            assert ndcg_at_k(served_a, ideal, k) == ndcg_at_k(served_b, ideal, k)

    def test_maximal_iff_prefix_matches_ideal_grades(self):
        ideal = [3, 2, 1, 0]
        assert ndcg_at_k([3, 2, 0, 1], ideal, 2) == 1.0
        assert ndcg_at_k([2, 3, 1, 0], ideal, 2) < 1.0


class TestRanking:
    def test_orders_by_relevance(self):
        params = _pbm([0.9, 0.9, 0.9], [0.9, 0.1, 0.5])
        ranked = rank_by_relevance(params, "q1", Intent.UNKNOWN, ["d1", "d2", "d3"])
        assert ranked == ["d1", "d3", "d2"]

    def test_ties_break_lexicographically(self):
        params = PbmParams(exam={1: 0.9}, rel={}, max_positions=1)
        ranked = rank_by_relevance(params, "q1", Intent.UNKNOWN, ["b", "a", "c"])
        assert ranked == ["a", "b", "c"]

    def test_intent_aware_tables_can_disagree(self):
        per_intent = {
            Intent.INFORMATIONAL: _pbm([0.9], [0.9]),
            Intent.NAVIGATIONAL: _pbm([0.9], [0.1]),
            Intent.TRANSACTIONAL: _pbm([0.9], [0.5]),
        }
        ia = IntentAwareParams(per_intent=per_intent, fallback=_pbm([0.9], [0.5]))
        docs = ["d1", "zz"]
        inf = rank_by_relevance(ia, "q1", Intent.INFORMATIONAL, docs)
        nav = rank_by_relevance(ia, "q1", Intent.NAVIGATIONAL, docs)
        assert inf == ["d1", "zz"]
        assert nav == ["zz", "d1"]  # 0.1 below the 0.5 default of unseen zz

    def test_empty_candidates_rejected(self):
        with pytest.raises(ValueError):
            rank_by_relevance(_pbm([0.9], [0.5]), "q1", Intent.UNKNOWN, [])


class TestCtrAndScorers:
    def test_empirical_ctr(self):
        sessions = [_session((1, 0)), _session((1, 1)), _session((0, 0))]
        ctr = empirical_ctr(sessions)
        assert ctr[("q1", "d1")] == pytest.approx(2 / 3)
        assert ctr[("q1", "d2")] == pytest.approx(1 / 3)

    def test_ndcg_for_scores_excludes_zero_grade_queries(self):
        judgments = [
            RelevanceJudgment("q1", "a", 2),
            RelevanceJudgment("q1", "b", 0),
            RelevanceJudgment("q2", "a", 0),
            RelevanceJudgment("q2", "b", 0),
        ]
        values, counted = ndcg_for_scores(lambda q, d: 1.0, judgments, (1, 2))
        assert counted == 1

    def test_mixture_scorer_weights_by_intent_shares(self):
        per_intent = {
            Intent.INFORMATIONAL: _pbm([0.9], [0.8]),
            Intent.NAVIGATIONAL: _pbm([0.9], [0.2]),
            Intent.TRANSACTIONAL: _pbm([0.9], [0.5]),
        }
        ia = IntentAwareParams(per_intent=per_intent, fallback=_pbm([0.9], [0.5]))
        sessions = [
            _session((0,), intent=Intent.INFORMATIONAL, sid="a"),
            _session((0,), intent=Intent.INFORMATIONAL, sid="b"),
            _session((0,), intent=Intent.NAVIGATIONAL, sid="c"),
            _session((0,), intent=Intent.NAVIGATIONAL, sid="d"),
        ]
        score = mixture_relevance_scorer(ia, sessions)
        assert score("q1", "d1") == pytest.approx(0.5 * 0.8 + 0.5 * 0.2)

    def test_ndcg_report_with_pinned_query_intents(self):
        from intentclick.evaluate import ndcg_report

        per_intent = {
            Intent.INFORMATIONAL: _pbm([0.9, 0.9], [0.9, 0.1]),
            Intent.NAVIGATIONAL: _pbm([0.9, 0.9], [0.1, 0.9]),
            Intent.TRANSACTIONAL: _pbm([0.9, 0.9], [0.5, 0.5]),
        }
        ia = IntentAwareParams(per_intent=per_intent, fallback=_pbm([0.9, 0.9], [0.5, 0.5]))
        judgments = [RelevanceJudgment("q1", "d1", 3), RelevanceJudgment("q1", "d2", 0)]
        # informational table ranks d1 first (matches judgments); the
        # navigational table inverts it
        inf_values, _ = ndcg_report(ia, judgments, (1,), {"q1": Intent.INFORMATIONAL})
        nav_values, _ = ndcg_report(ia, judgments, (1,), {"q1": Intent.NAVIGATIONAL})
        assert inf_values[1] == 1.0
        assert nav_values[1] == 0.0

    def test_intent_helpers(self):
        sessions = [
            _session((0,), intent=Intent.NAVIGATIONAL, sid="a"),
            _session((0,), intent=Intent.NAVIGATIONAL, sid="b"),
            _session((0,), intent=Intent.INFORMATIONAL, sid="c"),
        ]
        assert query_intents_from_sessions(sessions)["q1"] is Intent.NAVIGATIONAL
        shares = intent_distributions(sessions)["q1"]
        assert shares[Intent.NAVIGATIONAL] == pytest.approx(2 / 3)


class TestCompareModels:
    def _report(self, per_position, counts=None, ndcg=None, label=""):
        counts = counts or [100] * len(per_position)
        return EvalReport(
            per_position=list(per_position),
            position_counts=list(counts),
            overall=sum(per_position) / len(per_position),
            n_sessions=counts[0],
            n_queries=10,
            ndcg=dict(ndcg or {}),
            label=label,
        )

    def test_identical_reports_give_zero_improvements(self):
        report = self._report([1.5, 1.3], ndcg={1: 0.7, 3: 0.8})
        cmp = compare_models(report, report)
        assert cmp.improvements == [0.0, 0.0]
        assert cmp.overall_improvement == 0.0
        assert cmp.ndcg_deltas == {1: 0.0, 3: 0.0}

    def test_strictly_better_treatment_is_positive_everywhere(self):
        base = self._report([1.8, 1.4, 1.2])
        treat = self._report([1.7, 1.35, 1.15])
        cmp = compare_models(base, treat)
        assert all(i > 0 for i in cmp.improvements)
        assert cmp.overall_improvement > 0

    def test_mismatched_session_sets_rejected(self):
        base = self._report([1.5, 1.3])
        treat = self._report([1.5, 1.3], counts=[99, 99])
        with pytest.raises(ComparabilityError):
            compare_models(base, treat)

    def test_mismatched_k_lists_rejected(self):
        base = self._report([1.5], ndcg={1: 0.5})
        treat = self._report([1.5], ndcg={3: 0.5})
        with pytest.raises(ComparabilityError):
            compare_models(base, treat)

    def test_published_improvement_row_recomputed(self):
        base = self._report([1.771, 1.310, 1.202, 1.088, 1.083])
        treat = self._report([1.731, 1.295, 1.197, 1.086, 1.082])
        cmp = compare_models(base, treat)
        printed = [5.1, 4.8, 2.4, 2.2, 1.2]
        for got, want in zip(cmp.improvements, printed):
            assert got == pytest.approx(want, abs=1.0)

    def test_table_rendering(self):
        base = self._report([1.771, 1.310], ndcg={1: 0.6, 3: 0.65}, label="ubm")
        treat = self._report([1.731, 1.295], ndcg={1: 0.66, 3: 0.7}, label="ia-ubm")
        text = format_comparison_table(compare_models(base, treat))
        assert "@1" in text and "Overall" in text and "Impr." in text
        assert "ubm" in text and "ia-ubm" in text
        assert "NDCG" in text

    def test_single_report_rendering(self):
        report = self._report([1.771, 1.310], ndcg={1: 0.6}, label="dbn")
        text = format_report(report)
        assert "@1" in text and "Overall" in text and "dbn" in text
        assert "1.771" in text and "NDCG" in text


class TestReportIo:
    def test_roundtrip(self, tmp_path):
        report = EvalReport(
            per_position=[1.5, 1.2],
            position_counts=[10, 8],
            overall=1.35,
            n_sessions=10,
            n_queries=3,
            ndcg={1: 0.5, 5: 0.75},
            ndcg_queries=3,
            label="pbm",
        )
        path = tmp_path / "report.json"
        save_report(path, report)
        assert load_report(path) == report

    def test_evaluate_model_attaches_ndcg(self):
        params = _pbm([0.9, 0.9], [0.8, 0.3])
        sessions = [_session((1, 0), sid=f"s{i}") for i in range(5)]
        judgments = [RelevanceJudgment("q1", "d1", 3), RelevanceJudgment("q1", "d2", 1)]
        report = evaluate_model(params, sessions, judgments=judgments, k_list=(1, 2))
        assert set(report.ndcg) == {1, 2}
        assert report.ndcg_queries == 1
        assert report.ndcg[1] == 1.0

    def test_dcg_helper(self):
        assert dcg([2, 1], 2) == pytest.approx((2 ** 2 - 1) / 1.0 + 1.0 / math.log2(3))
