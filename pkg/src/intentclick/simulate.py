"""Synthetic click-log generation from known ground-truth parameters.

The simulator samples sessions exactly from each model's generative
process, which makes it the verification oracle for inference and
evaluation: fitted parameters and predicted click probabilities can be
compared against the truth that produced the data.

click_behavior_preset() builds an intent-aware PBM whose implied click
rates hit a small set of reference calibration targets (92% informational
clicks on a rank-1 target; 96%/92% navigational on rank-1/2 targets; 97%
total click mass with a navigational target at rank 4). Every other cell
of the grid is smooth synthetic interpolation, not a measured value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .models import (
    CASCADE,
    DBN,
    MODEL_KINDS,
    PBM,
    UBM,
    AnyParams,
    BaseParams,
    CascadeParams,
    DbnParams,
    IntentAwareParams,
    PbmParams,
    UbmParams,
    resolve_params,
)
from .sessions import Intent, KNOWN_INTENTS, RelevanceJudgment, Session

REL_LOW, REL_HIGH = 0.05, 0.95


@dataclass
class SimConfig:
    """Shape and seeding of a synthetic log."""

    model_kind: str = PBM
    num_queries: int = 10
    sessions_per_query: int = 100
    positions: int = 10
    intent_mix: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    seed: int = 0
    intent_aware: bool = False
    intents_per_query: bool = False
    # Shuffling the served order per session breaks the tie between a doc
    # and a single position; without it the per-position examination/
    # relevance split is not identifiable from clicks.
    shuffle_serps: bool = False

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.model_kind!r}")
        if self.num_queries < 1 or self.sessions_per_query < 1 or self.positions < 1:
            raise ValueError("num_queries, sessions_per_query and positions must be >= 1")
        if len(self.intent_mix) != 3 or any(p < 0 for p in self.intent_mix):
            raise ValueError("intent_mix needs three non-negative proportions")
        if abs(sum(self.intent_mix) - 1.0) > 1e-9:
            raise ValueError(f"intent_mix must sum to 1, got {sum(self.intent_mix)}")


@dataclass
class GroundTruth:
    """Known parameters plus the artifacts needed to score against them."""

    params: AnyParams
    judgments: tuple[RelevanceJudgment, ...]
    serps: dict[str, tuple[str, ...]]
    query_intents: dict[str, Intent] | None = None


def grade_from_relevance(r: float) -> int:
    """Editorial grade by thresholding: floor(5r) clipped into [0, 4]."""
    return max(0, min(4, math.floor(5.0 * r)))


def _query_id(i: int) -> str:
    return f"q{i:04d}"


def _doc_ids(query_id: str, positions: int) -> tuple[str, ...]:
    return tuple(f"{query_id}_d{j:02d}" for j in range(1, positions + 1))


def _exam_curve(rng: np.random.Generator, positions: int, decay_lo: float, decay_hi: float) -> np.ndarray:
    gamma = np.empty(positions)
    gamma[0] = rng.uniform(0.92, 0.98)
    for i in range(1, positions):
        gamma[i] = gamma[i - 1] * rng.uniform(decay_lo, decay_hi)
    return gamma

# Informational examination dies off fastest; navigational persists;
# transactional sits close to navigational.
_DECAY_RANGES = {
    None: (0.84, 0.96),
    Intent.INFORMATIONAL: (0.72, 0.85),
    Intent.NAVIGATIONAL: (0.88, 0.97),
    Intent.TRANSACTIONAL: (0.86, 0.95),
}


def _base_truth(
    rng: np.random.Generator,
    config: SimConfig,
    serps: dict[str, tuple[str, ...]],
    intent: Intent | None,
) -> BaseParams:
    n = config.positions
    rel = {
        (q, d): float(rng.uniform(REL_LOW, REL_HIGH))
        for q, docs in serps.items()
        for d in docs
    }
    if config.model_kind == PBM:
        gamma = _exam_curve(rng, n, *_DECAY_RANGES[intent])
        exam = {i + 1: float(gamma[i]) for i in range(n)}
        return PbmParams(exam=exam, rel=rel, max_positions=n)
    if config.model_kind == CASCADE:
        return CascadeParams(rel=rel)
    if config.model_kind == UBM:
        curve = _exam_curve(rng, n, *_DECAY_RANGES[intent])
        # Examination decays with distance from the last click.
        beta = {
            (l, i): float(curve[i - l - 1])
            for l in range(0, n)
            for i in range(l + 1, n + 1)
        }
        return UbmParams(beta=beta, rel=rel, max_positions=n)
    if config.model_kind == DBN:
        sat = {key: float(rng.uniform(REL_LOW, REL_HIGH)) for key in rel}
        return DbnParams(rel=rel, sat=sat, gamma_cont=float(rng.uniform(0.85, 0.95)))
    raise ValueError(f"unknown model kind {config.model_kind!r}")


def generate_ground_truth(config: SimConfig) -> GroundTruth:
    """Deterministic ground-truth parameters, SERPs, and judgments."""
    rng = np.random.default_rng(config.seed)
    serps = {
        _query_id(i): _doc_ids(_query_id(i), config.positions)
        for i in range(config.num_queries)
    }
    query_intents: dict[str, Intent] | None = None
    if config.intents_per_query:
        codes = rng.choice(3, size=config.num_queries, p=list(config.intent_mix))
        query_intents = {
            q: KNOWN_INTENTS[codes[i]] for i, q in enumerate(serps)
        }

    params: AnyParams
    if config.intent_aware:
        per_intent = {
            intent: _base_truth(rng, config, serps, intent) for intent in KNOWN_INTENTS
        }
        fallback = _base_truth(rng, config, serps, None)
        params = IntentAwareParams(per_intent=per_intent, fallback=fallback)
    else:
        params = _base_truth(rng, config, serps, None)

    judgments = []
    for q, docs in serps.items():
        for d in docs:
            if isinstance(params, IntentAwareParams):
                if query_intents is not None:
                    r = params.per_intent[query_intents[q]].relevance_estimate(q, d)
                else:
                    r = sum(
                        mix * params.per_intent[t].relevance_estimate(q, d)
                        for mix, t in zip(config.intent_mix, KNOWN_INTENTS)
                    )
            else:
                r = params.relevance_estimate(q, d)
            judgments.append(RelevanceJudgment(q, d, grade_from_relevance(r)))
    return GroundTruth(
        params=params,
        judgments=tuple(judgments),
        serps=serps,
        query_intents=query_intents,
    )


def _sample_pbm(rng, params: PbmParams, r_mat: np.ndarray, s_mat) -> np.ndarray:
    n, length = r_mat.shape
    exam = np.array([params.exam[i + 1] for i in range(length)])
    return (rng.random((n, length)) < exam[None, :] * r_mat).astype(np.int8)


def _sample_cascade(rng, params: CascadeParams, r_mat: np.ndarray, s_mat) -> np.ndarray:
    n, length = r_mat.shape
    relevant = rng.random((n, length)) < r_mat
    clicks = np.zeros((n, length), dtype=np.int8)
    any_rel = relevant.any(axis=1)
    first = relevant.argmax(axis=1)
    clicks[np.nonzero(any_rel)[0], first[any_rel]] = 1
    return clicks


def _sample_ubm(rng, params: UbmParams, r_mat: np.ndarray, s_mat) -> np.ndarray:
    n, length = r_mat.shape
    # Dense (prev click, position) lookup for vectorized row gathers.
    beta = np.zeros((length + 1, length + 1))
    for l in range(0, length):
        for i in range(l + 1, length + 1):
            beta[l, i] = params.beta[(l, i)]
    clicks = np.zeros((n, length), dtype=np.int8)
    last = np.zeros(n, dtype=np.int64)
    for i in range(1, length + 1):
        examined = rng.random(n) < beta[last, i]
        clicked = examined & (rng.random(n) < r_mat[:, i - 1])
        clicks[:, i - 1] = clicked
        last = np.where(clicked, i, last)
    return clicks


def _sample_dbn(rng, params: DbnParams, r_mat: np.ndarray, s_mat: np.ndarray) -> np.ndarray:
    n, length = r_mat.shape
    gamma = params.gamma_cont
    clicks = np.zeros((n, length), dtype=np.int8)
    examining = np.ones(n, dtype=bool)
    for i in range(length):
        clicked = examining & (rng.random(n) < r_mat[:, i])
        satisfied = clicked & (rng.random(n) < s_mat[:, i])
        continuing = rng.random(n) < gamma
        clicks[:, i] = clicked
        examining = examining & continuing & ~satisfied
    return clicks


_SAMPLERS = {PBM: _sample_pbm, CASCADE: _sample_cascade, UBM: _sample_ubm, DBN: _sample_dbn}


def simulate_sessions(truth: GroundTruth, config: SimConfig) -> list[Session]:
    """Sample sessions from the model's generative process, one independent
    seeded stream per query; output order is (query, session index)."""
    if truth.params.kind != config.model_kind:
        raise ValueError(
            f"ground truth is {truth.params.kind!r} but config wants {config.model_kind!r}"
        )
    if len(truth.serps) != config.num_queries:
        raise ValueError(
            f"ground truth has {len(truth.serps)} queries, config wants {config.num_queries}"
        )
    sampler = _SAMPLERS[config.model_kind]
    streams = np.random.SeedSequence(config.seed).spawn(len(truth.serps))
    sessions: list[Session] = []
    n = config.sessions_per_query
    for stream, (query, docs) in zip(streams, truth.serps.items()):
        rng = np.random.default_rng(stream)
        length = len(docs)
        if truth.query_intents is not None:
            intents = [truth.query_intents[query]] * n
        else:
            codes = rng.choice(3, size=n, p=list(config.intent_mix))
            intents = [KNOWN_INTENTS[c] for c in codes]
        if config.shuffle_serps:
            perms = rng.permuted(np.tile(np.arange(length), (n, 1)), axis=1)
        else:
            perms = np.tile(np.arange(length), (n, 1))

        def _rows_matrix(base: BaseParams, rows: np.ndarray, attr: str) -> np.ndarray:
            table = getattr(base, attr)
            vec = np.array([table(query, d) for d in docs])
            return vec[perms[rows]]

        clicks = np.zeros((n, length), dtype=np.int8)
        intent_arr = np.array([KNOWN_INTENTS.index(t) for t in intents])
        if isinstance(truth.params, IntentAwareParams):
            blocks = [
                (np.nonzero(intent_arr == k)[0], resolve_params(truth.params, intent))
                for k, intent in enumerate(KNOWN_INTENTS)
            ]
        else:
            blocks = [(np.arange(n), truth.params)]
        for rows, base in blocks:
            if rows.size == 0:
                continue
            r_mat = _rows_matrix(base, rows, "relevance")
            s_mat = _rows_matrix(base, rows, "satisfaction") if config.model_kind == DBN else None
            clicks[rows] = sampler(rng, base, r_mat, s_mat)
        for k in range(n):
            sessions.append(
                Session(
                    session_id=f"{query}:s{k:05d}",
                    query_id=query,
                    intent=intents[k],
                    docs=tuple(docs[j] for j in perms[k]),
                    clicks=tuple(int(c) for c in clicks[k]),
                )
            )
    return sessions


# ---------------------------------------------------------------------------
# Calibrated click-behavior preset.
#
# Hard calibration targets (everything else below is synthetic fill):
#   informational, target at rank 1 -> click rate 0.92 at rank 1
#   navigational, targets at ranks 1 and 2 -> click rates 0.96 and 0.92
#   navigational, target at rank 4 -> total click mass 0.97
# Transactional curves copy navigational scaled by 0.98.
# ---------------------------------------------------------------------------

PRESET_POSITIONS = 10
PRESET_TARGET_RANKS = (1, 2, 4, 5, 7, 8)
PRESET_SESSIONS_PER_QUERY = 50_000
PRESET_SEED = 1234

_PRESET_EXAM = {
    Intent.INFORMATIONAL: (0.98, 0.90, 0.70, 0.52, 0.38, 0.28, 0.21, 0.16, 0.12, 0.09),
    Intent.NAVIGATIONAL: (0.98, 0.95, 0.88, 0.80, 0.72, 0.64, 0.57, 0.50, 0.44, 0.38),
}
_PRESET_EXAM[Intent.TRANSACTIONAL] = tuple(0.98 * g for g in _PRESET_EXAM[Intent.NAVIGATIONAL])

# Off-target click-rate profiles; ranks 1-2 for the low-target navigational
# and informational rows follow the reported averages (25.5%/14.5% and
# 30.5%/18.8%), the tail is synthetic decay.
_PRESET_OFF_TARGET = {
    Intent.INFORMATIONAL: (0.305, 0.188, 0.080, 0.050, 0.035, 0.025, 0.018, 0.012, 0.008, 0.005),
    Intent.NAVIGATIONAL: (0.255, 0.145, 0.060, 0.040, 0.030, 0.020, 0.015, 0.010, 0.007, 0.005),
}
_PRESET_OFF_TARGET[Intent.TRANSACTIONAL] = tuple(
    0.98 * x for x in _PRESET_OFF_TARGET[Intent.NAVIGATIONAL]
)

_PRESET_TARGET_RATE = {
    Intent.INFORMATIONAL: {1: 0.92, 2: 0.55, 4: 0.19, 5: 0.15, 7: 0.10, 8: 0.08},
    Intent.NAVIGATIONAL: {1: 0.96, 2: 0.92, 4: None, 5: 0.33, 7: 0.26, 8: 0.22},
}
_PRESET_TARGET_RATE[Intent.TRANSACTIONAL] = {
    rank: (None if rate is None else 0.98 * rate)
    for rank, rate in _PRESET_TARGET_RATE[Intent.NAVIGATIONAL].items()
}

PRESET_NAV_TARGET4_TOTAL_MASS = 0.97


def _preset_profile(intent: Intent, target_rank: int) -> list[float]:
    rates = list(_PRESET_OFF_TARGET[intent])
    target = _PRESET_TARGET_RATE[intent][target_rank]
    if target is None:
        # Solve the target rate so the row's total click mass lands on the
        # quoted 0.97 (scaled for the transactional copy).
        mass = PRESET_NAV_TARGET4_TOTAL_MASS
        if intent is Intent.TRANSACTIONAL:
            mass *= 0.98
        target = mass - (sum(rates) - rates[target_rank - 1])
    rates[target_rank - 1] = target
    return rates


def click_behavior_preset() -> tuple[GroundTruth, SimConfig]:
    """Intent-aware PBM calibrated to the quoted click-behavior numbers."""
    serps: dict[str, tuple[str, ...]] = {}
    query_intents: dict[str, Intent] = {}
    rel_tables: dict[Intent, dict[tuple[str, str], float]] = {t: {} for t in KNOWN_INTENTS}
    judgments: list[RelevanceJudgment] = []

    for intent in KNOWN_INTENTS:
        exam = _PRESET_EXAM[intent]
        for rank in PRESET_TARGET_RANKS:
            query = f"preset_{intent.value}_t{rank}"
            docs = _doc_ids(query, PRESET_POSITIONS)
            serps[query] = docs
            query_intents[query] = intent
            for i, (doc, rate) in enumerate(zip(docs, _preset_profile(intent, rank))):
                r = rate / exam[i]
                if not 0.0 <= r <= 1.0:
                    raise AssertionError(
                        f"preset rate {rate} at position {i + 1} exceeds examination {exam[i]}"
                    )
                rel_tables[intent][(query, doc)] = r
                judgments.append(RelevanceJudgment(query, doc, grade_from_relevance(r)))

    per_intent = {
        intent: PbmParams(
            exam={i + 1: g for i, g in enumerate(_PRESET_EXAM[intent])},
            rel=rel_tables[intent],
            max_positions=PRESET_POSITIONS,
        )
        for intent in KNOWN_INTENTS
    }
    fallback = PbmParams(
        exam={i + 1: g for i, g in enumerate(_PRESET_EXAM[Intent.NAVIGATIONAL])},
        rel={},
        max_positions=PRESET_POSITIONS,
    )
    truth = GroundTruth(
        params=IntentAwareParams(per_intent=per_intent, fallback=fallback),
        judgments=tuple(judgments),
        serps=serps,
        query_intents=query_intents,
    )
    config = SimConfig(
        model_kind=PBM,
        num_queries=len(serps),
        sessions_per_query=PRESET_SESSIONS_PER_QUERY,
        positions=PRESET_POSITIONS,
        intent_mix=(1 / 3, 1 / 3, 1 / 3),
        seed=PRESET_SEED,
        intent_aware=True,
        intents_per_query=True,
    )
    return truth, config
