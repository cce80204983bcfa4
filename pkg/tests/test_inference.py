"""EM fitting: posteriors, recovery against the simulator oracle, ascent."""

import numpy as np
import pytest

import oracles
from intentclick.inference import EmConfig, alternating_fit, em_fit, pbm_posteriors
from intentclick.models import IntentAwareParams, resolve_params
from intentclick.sessions import Intent, Session
from intentclick.simulate import SimConfig, generate_ground_truth, simulate_sessions


def _assert_monotone(trace, slack=1e-9):
    diffs = np.diff(np.asarray(trace))
    assert np.all(diffs >= -slack), f"trace decreased by {diffs.min()}"


class TestPbmPosteriors:
    def test_click_pins_both_to_one(self):
        assert pbm_posteriors(0.3, 0.8, True) == (1.0, 1.0)

    def test_half_half_unclicked(self):
        p_exam, p_rel = pbm_posteriors(0.5, 0.5, False)
        assert p_exam == pytest.approx(1 / 3)
        assert p_rel == pytest.approx(1 / 3)

    def test_certain_examination_means_irrelevant(self):
        p_exam, p_rel = pbm_posteriors(1.0, 0.4, False)
        assert p_exam == pytest.approx(1.0)
        assert p_rel == pytest.approx(0.0)

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            gamma, r = rng.uniform(0.01, 0.99, 2)
            expected = oracles.pbm_unclicked_posteriors(gamma, r)
            got = pbm_posteriors(gamma, r, False)
            assert got == pytest.approx(expected, abs=1e-12)
            assert 0.0 <= got[0] <= 1.0 and 0.0 <= got[1] <= 1.0

    def test_no_click_probability_identity(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            gamma, r = rng.uniform(0.0, 1.0, 2)
            # P(C=0) decomposed over examination equals 1 - gamma*r
            assert (1.0 - gamma) + gamma * (1.0 - r) == pytest.approx(
                1.0 - gamma * r, abs=1e-12
            )

    def test_degenerate_product_is_clamped(self):
        p_exam, p_rel = pbm_posteriors(1.0, 1.0, False)
        assert np.isfinite(p_exam) and np.isfinite(p_rel)


def _simulate(kind, seed, *, queries=60, sessions_per_query=300, positions=6, **kwargs):
    config = SimConfig(
        model_kind=kind,
        num_queries=queries,
        sessions_per_query=sessions_per_query,
        positions=positions,
        seed=seed,
        **kwargs,
    )
    truth = generate_ground_truth(config)
    return truth, simulate_sessions(truth, config), config


@pytest.fixture(scope="module")
def fitted():
    truth, sessions, _ = _simulate("pbm", seed=21, shuffle_serps=True)
    params, report = em_fit("pbm", sessions, EmConfig(max_iters=150))
    return truth, sessions, params, report


class TestPbmFit:
    def test_recovers_examination_curve(self, fitted):
        truth, _, params, _ = fitted
        g_true = np.array([truth.params.exam[i] for i in range(1, 7)])
        g_est = np.array([params.exam[i] for i in range(1, 7)])
        mae = np.abs(g_true / g_true[0] - g_est / g_est[0]).mean()
        assert mae < 0.03

    def test_recovers_click_probabilities(self, fitted):
        truth, _, params, _ = fitted
        errors = []
        for key, r in truth.params.rel.items():
            for pos in range(1, 7):
                errors.append(
                    abs(truth.params.exam[pos] * r - params.exam[pos] * params.rel[key])
                )
        assert np.mean(errors) < 0.02

    def test_loglik_trace_non_decreasing(self, fitted):
        _, _, _, report = fitted
        _assert_monotone(report.loglik_trace)

    def test_smoothing_keeps_params_strictly_inside_unit_interval(self, fitted):
        _, _, params, _ = fitted
        values = list(params.exam.values()) + list(params.rel.values())
        assert all(0.0 < v < 1.0 for v in values)

    def test_permutation_invariance(self, fitted):
        _, sessions, params, _ = fitted
        rng = np.random.default_rng(5)
        shuffled = list(sessions)
        rng.shuffle(shuffled)
        params2, _ = em_fit("pbm", shuffled, EmConfig(max_iters=150))
        for pos in params.exam:
            assert abs(params.exam[pos] - params2.exam[pos]) < 1e-9
        for key in params.rel:
            assert abs(params.rel[key] - params2.rel[key]) < 1e-9


class TestPbmSingleIteration:
    def test_matches_hand_computed_posteriors(self):
        # One E+M step from the uniform init, reconstructed with the scalar
        # posterior operation and Beta(1,1) smoothing.
        sessions = [
            Session("s1", "q", Intent.UNKNOWN, ("a", "b"), (1, 0)),
            Session("s2", "q", Intent.UNKNOWN, ("a", "b"), (0, 0)),
        ]
        params, _ = em_fit("pbm", sessions, EmConfig(max_iters=1, tol=1e-15))

        p_exam_u, p_rel_u = pbm_posteriors(0.5, 0.5, False)
        exam1 = (1.0 + 1.0 + p_exam_u) / (2.0 + 2.0)
        exam2 = (1.0 + 2.0 * p_exam_u) / (2.0 + 2.0)
        rel_a = (1.0 + 1.0 + p_rel_u) / (2.0 + 2.0)
        rel_b = (1.0 + 2.0 * p_rel_u) / (2.0 + 2.0)
        assert params.exam[1] == pytest.approx(exam1, abs=1e-12)
        assert params.exam[2] == pytest.approx(exam2, abs=1e-12)
        assert params.rel[("q", "a")] == pytest.approx(rel_a, abs=1e-12)
        assert params.rel[("q", "b")] == pytest.approx(rel_b, abs=1e-12)


class TestUbmFit:
    def test_recovers_click_probabilities(self):
        truth, sessions, _ = _simulate(
            "ubm", seed=22, queries=50, sessions_per_query=400, positions=5
        )
        params, report = em_fit("ubm", sessions, EmConfig(max_iters=120))
        _assert_monotone(report.loglik_trace)
        errors = []
        for key, r in truth.params.rel.items():
            for (l, i), b in truth.params.beta.items():
                errors.append(abs(b * r - params.beta[(l, i)] * params.rel[key]))
        assert np.mean(errors) < 0.04

    def test_conditional_probability_prediction_error(self):
        truth, sessions, _ = _simulate(
            "ubm", seed=23, queries=40, sessions_per_query=300, positions=5
        )
        params, _ = em_fit("ubm", sessions, EmConfig(max_iters=120))
        diffs = []
        for s in sessions[:2000]:
            p_true = truth.params.conditional_click_probs(s)
            p_est = params.conditional_click_probs(s)
            diffs.extend(abs(a - b) for a, b in zip(p_true, p_est))
        assert np.mean(diffs) < 0.03


class TestDbnFit:
    def test_recovers_continuation_and_click_probabilities(self):
        truth, sessions, _ = _simulate(
            "dbn", seed=24, queries=60, sessions_per_query=400, positions=5
        )
        params, report = em_fit("dbn", sessions, EmConfig(max_iters=120))
        _assert_monotone(report.loglik_trace)
        assert abs(params.gamma_cont - truth.params.gamma_cont) < 0.05
        diffs = []
        for s in sessions[:3000]:
            p_true = truth.params.conditional_click_probs(s)
            p_est = params.conditional_click_probs(s)
            diffs.extend(abs(a - b) for a, b in zip(p_true, p_est))
        assert np.mean(diffs) < 0.03

    def test_permutation_invariance(self):
        _, sessions, _ = _simulate(
            "dbn", seed=32, queries=20, sessions_per_query=60, positions=4
        )
        a, _ = em_fit("dbn", sessions, EmConfig(max_iters=40))
        shuffled = list(sessions)
        np.random.default_rng(1).shuffle(shuffled)
        b, _ = em_fit("dbn", shuffled, EmConfig(max_iters=40))
        assert abs(a.gamma_cont - b.gamma_cont) < 1e-9
        for key in a.rel:
            assert abs(a.rel[key] - b.rel[key]) < 1e-9
            assert abs(a.sat[key] - b.sat[key]) < 1e-9

    def test_satisfaction_posteriors_respect_click_structure(self):
        # A session with a later click forces unsatisfied earlier clicks, so
        # satisfaction estimates of docs always followed by clicks sink.
        q = "q0"
        docs = ("a", "b")
        always_followed = [
            Session(f"s{i}", q, Intent.UNKNOWN, docs, (1, 1)) for i in range(200)
        ]
        params, _ = em_fit("dbn", always_followed, EmConfig(max_iters=60))
        assert params.sat[(q, "a")] < 0.1


class TestCascadeFit:
    def test_reaches_closed_form_immediately(self):
        truth, sessions, _ = _simulate(
            "cascade", seed=25, queries=50, sessions_per_query=300, positions=5
        )
        params, report = em_fit("cascade", sessions, EmConfig())
        assert report.converged
        assert report.iterations <= 3
        _assert_monotone(report.loglik_trace)
        # exact closed form: smoothed clicks over examinations, where a doc
        # is examined up to and including the session's first click
        exams, clicks = {}, {}
        for s in sessions:
            for doc, c in zip(s.docs, s.clicks):
                key = (s.query_id, doc)
                exams[key] = exams.get(key, 0) + 1
                clicks[key] = clicks.get(key, 0) + c
                if c:
                    break
        for key, r_est in params.rel.items():
            expected = (1.0 + clicks[key]) / (2.0 + exams[key])
            assert r_est == pytest.approx(expected, abs=1e-12)
        # recovery is only meaningful for pairs examined often
        errors = [
            abs(params.rel[k] - truth.params.rel[k])
            for k, n in exams.items()
            if n >= 200
        ]
        assert len(errors) > 50
        assert np.mean(errors) < 0.03


class TestIntentAwareFit:
    def test_collapse_property_at_finite_sample(self):
        # Data from one intent-agnostic truth, sessions labeled with mixed
        # intents: the intent-aware fit must agree with the base fit.
        truth, sessions, _ = _simulate(
            "pbm", seed=26, queries=50, sessions_per_query=600, positions=5,
            intent_mix=(0.4, 0.4, 0.2),
        )
        base_params, _ = em_fit("pbm", sessions, EmConfig(max_iters=120))
        ia_params, _ = em_fit("pbm", sessions, EmConfig(max_iters=120), intent_aware=True)
        diffs = []
        for s in sessions[:3000]:
            p_base = base_params.conditional_click_probs(s)
            p_ia = resolve_params(ia_params, s.intent).conditional_click_probs(s)
            diffs.extend(abs(a - b) for a, b in zip(p_base, p_ia))
        assert np.mean(diffs) < 0.02

    def test_intent_partition_isolation(self):
        truth, sessions, _ = _simulate(
            "pbm", seed=27, queries=30, sessions_per_query=100, positions=4,
            intent_mix=(0.5, 0.5, 0.0), intent_aware=True,
        )
        ia1, _ = em_fit("pbm", sessions, EmConfig(max_iters=50), intent_aware=True)
        # Flip clicks only in informational sessions; navigational tables
        # must not move.
        mutated = [
            Session(
                s.session_id, s.query_id, s.intent, s.docs,
                tuple(1 - c for c in s.clicks)
                if s.intent is Intent.INFORMATIONAL
                else s.clicks,
            )
            for s in sessions
        ]
        ia2, _ = em_fit("pbm", mutated, EmConfig(max_iters=50), intent_aware=True)
        nav1 = ia1.per_intent[Intent.NAVIGATIONAL]
        nav2 = ia2.per_intent[Intent.NAVIGATIONAL]
        assert nav1.exam == nav2.exam
        assert nav1.rel == nav2.rel
        inf1 = ia1.per_intent[Intent.INFORMATIONAL]
        inf2 = ia2.per_intent[Intent.INFORMATIONAL]
        assert inf1.rel != inf2.rel

    def test_unknown_sessions_feed_the_fallback(self):
        q = "q0"
        docs = ("a", "b")
        sessions = [
            Session(f"k{i}", q, Intent.UNKNOWN, docs, (1, 0)) for i in range(50)
        ] + [
            Session(f"n{i}", q, Intent.NAVIGATIONAL, docs, (0, 1)) for i in range(50)
        ]
        ia, _ = em_fit("pbm", sessions, EmConfig(max_iters=50), intent_aware=True)
        assert isinstance(ia, IntentAwareParams)
        # fallback learned from the Unknown sessions (doc a always clicked)
        assert ia.fallback.rel[(q, "a")] > 0.8
        # intents with no sessions keep the uninformative prior mean
        assert all(v == 0.5 for v in ia.per_intent[Intent.TRANSACTIONAL].exam.values())

    def test_empty_sessions_rejected(self):
        with pytest.raises(ValueError):
            em_fit("pbm", [], EmConfig())

    def test_unknown_model_kind_rejected(self):
        with pytest.raises(ValueError):
            em_fit("dcm", [Session("s", "q", Intent.UNKNOWN, ("a",), (0,))], EmConfig())

    def test_sessions_deeper_than_max_positions_rejected(self):
        session = Session("s", "q", Intent.UNKNOWN, ("a", "b", "c"), (0, 1, 0))
        with pytest.raises(ValueError):
            em_fit("pbm", [session], EmConfig(), max_positions=2)

    @pytest.mark.parametrize("kind", ["ubm", "dbn"])
    def test_other_kinds_support_intent_aware_fits(self, kind):
        _, sessions, _ = _simulate(
            kind, seed=31, queries=20, sessions_per_query=80, positions=4,
            intent_mix=(0.5, 0.5, 0.0), intent_aware=True,
        )
        params, report = em_fit(kind, sessions, EmConfig(max_iters=40), intent_aware=True)
        assert isinstance(params, IntentAwareParams)
        assert params.kind == kind
        _assert_monotone(report.loglik_trace)


@pytest.fixture(scope="module")
def data():
    config = SimConfig(
        model_kind="pbm", num_queries=50, sessions_per_query=200, positions=6,
        intent_mix=(0.5, 0.5, 0.0), seed=28, intent_aware=True, shuffle_serps=True,
    )
    truth = generate_ground_truth(config)
    return truth, simulate_sessions(truth, config)


class TestAlternatingFit:
    def test_agrees_with_joint_em(self, data):
        _, sessions = data
        cfg = EmConfig(tol=1e-7, max_iters=400)
        em_params, _ = em_fit("pbm", sessions, cfg, intent_aware=True)
        alt_params, alt_report = alternating_fit("pbm", sessions, cfg)
        _assert_monotone(alt_report.loglik_trace)
        diffs = []
        for intent in (Intent.INFORMATIONAL, Intent.NAVIGATIONAL):
            a = resolve_params(em_params, intent)
            b = resolve_params(alt_params, intent)
            for key, r in a.rel.items():
                for pos in a.exam:
                    diffs.append(abs(a.exam[pos] * r - b.exam[pos] * b.rel[key]))
        assert max(diffs) < 1e-3

    def test_phase_a_alone_recovers_relevance_with_true_examination(self):
        config = SimConfig(
            model_kind="pbm", num_queries=50, sessions_per_query=1500, positions=5,
            seed=29,
        )
        truth = generate_ground_truth(config)
        sessions = simulate_sessions(truth, config)
        params, report = em_fit(
            "pbm",
            sessions,
            EmConfig(max_iters=200),
            families=frozenset(("rel",)),
            init_params=truth.params,
        )
        # examination stayed frozen at the truth
        assert params.exam == truth.params.exam
        errors = [abs(params.rel[k] - r) for k, r in truth.params.rel.items()]
        assert np.mean(errors) < 0.02
        _assert_monotone(report.loglik_trace)

    def test_cascade_alternating_degenerates_to_relevance_phase(self, data):
        _, sessions = data
        params, report = alternating_fit("cascade", sessions, EmConfig(max_iters=30))
        assert report.converged


class TestFitReportShape:
    def test_one_trace_value_per_iteration(self):
        _, sessions, _ = _simulate("pbm", seed=30, queries=10, sessions_per_query=50,
                                   positions=3)
        _, report = em_fit("pbm", sessions, EmConfig(max_iters=17, tol=1e-15))
        assert report.iterations == 17
        assert len(report.loglik_trace) == 17
        assert not report.converged
        assert report.final_delta > 0

    def test_uncovered_positions_stay_at_prior_mean(self, caplog):
        sessions = [Session("s", "q", Intent.UNKNOWN, ("a", "b"), (1, 0))] * 30
        with caplog.at_level("WARNING"):
            params, _ = em_fit("pbm", sessions, EmConfig(max_iters=40), max_positions=4)
        assert params.exam[3] == 0.5
        assert params.exam[4] == 0.5
        assert "prior mean" in caplog.text
