"""Click-prediction perplexity, NDCG, and model comparison reports.

Perplexity at position j is two raised to the mean per-session click
log-loss at that position; 1 means perfect prediction and 2 matches a coin
flip. Dataset perplexity is the arithmetic mean over positions. NDCG@K
discounts graded relevance down the ranking and normalizes by the ideal
ordering. Comparisons render in the familiar rows-by-positions layout with
an improvement row computed as (p2 - p1) / (p2 - 1) * 100%.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .errors import DataError
from .models import AnyParams, PROB_CLAMP, resolve_params
from .sessions import Intent, RelevanceJudgment, Session

DEFAULT_K_LIST = (1, 3, 5, 7, 10)


class ComparabilityError(DataError):
    """Two reports were not evaluated on the same data, so cells don't align."""


def _clamp(q: float) -> float:
    return min(max(q, PROB_CLAMP), 1.0 - PROB_CLAMP)


def position_perplexity(predictions: Sequence[float], clicks: Sequence[int]) -> float:
    """Perplexity at one position across sessions.

    predictions[s] is the model's click probability for session s at this
    position, clicks[s] the observed outcome.
    """
    if len(predictions) != len(clicks):
        raise ValueError(f"{len(predictions)} predictions vs {len(clicks)} clicks")
    if not predictions:
        raise ValueError("no sessions cover this position")
    total = 0.0
    for q, c in zip(predictions, clicks):
        q = _clamp(q)
        total += math.log2(q) if c else math.log2(1.0 - q)
    return 2.0 ** (-total / len(predictions))


def perplexity_improvement(p1: float, p2: float) -> float:
    """Percent improvement of perplexity p1 over baseline p2."""
    if p2 <= 1.0:
        raise ValueError(f"baseline perplexity must exceed 1, got {p2}")
    return (p2 - p1) / (p2 - 1.0) * 100.0


@dataclass
class EvalReport:
    """Per-position and overall perplexities, NDCG, and coverage counts."""

    per_position: list[float]
    position_counts: list[int]
    overall: float
    n_sessions: int
    n_queries: int
    ndcg: dict[int, float] = field(default_factory=dict)
    ndcg_queries: int = 0
    label: str = ""

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "per_position": self.per_position,
            "position_counts": self.position_counts,
            "overall": self.overall,
            "n_sessions": self.n_sessions,
            "n_queries": self.n_queries,
            "ndcg": {str(k): v for k, v in self.ndcg.items()},
            "ndcg_queries": self.ndcg_queries,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "EvalReport":
        try:
            return cls(
                per_position=[float(x) for x in doc["per_position"]],
                position_counts=[int(x) for x in doc["position_counts"]],
                overall=float(doc["overall"]),
                n_sessions=int(doc["n_sessions"]),
                n_queries=int(doc["n_queries"]),
                ndcg={int(k): float(v) for k, v in doc.get("ndcg", {}).items()},
                ndcg_queries=int(doc.get("ndcg_queries", 0)),
                label=str(doc.get("label", "")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad evaluation report: {exc}") from None


def format_report(report: EvalReport) -> str:
    """Aligned text rendering of one report: positions, overall, NDCG."""
    n = len(report.per_position)
    headers = [""] + [f"@{j}" for j in range(1, n + 1)] + ["Overall"]
    row = (
        [report.label or "model"]
        + [f"{p:.3f}" for p in report.per_position]
        + [f"{report.overall:.3f}"]
    )
    lines = [headers, row]
    if report.ndcg:
        ks = sorted(report.ndcg)
        lines.append([])
        lines.append(["NDCG"] + [f"@{k}" for k in ks])
        lines.append([report.label or "model"] + [f"{report.ndcg[k]:.4f}" for k in ks])
    width = max(len(cell) for line in lines for cell in line) + 2
    return "\n".join(
        "".join(cell.ljust(width) for cell in line).rstrip() for line in lines
    )


def save_report(path, report: EvalReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_report(path) -> EvalReport:
    with open(path, encoding="utf-8") as fh:
        try:
            return EvalReport.from_json(json.load(fh))
        except json.JSONDecodeError as exc:
            raise DataError(f"invalid report document: {exc}") from None


def perplexity_report(
    params: AnyParams, sessions: Sequence[Session], label: str = ""
) -> EvalReport:
    """Evaluate a model's click predictions on held-out sessions.

    Sessions shorter than the deepest one contribute only to the positions
    they contain.
    """
    if not sessions:
        raise ValueError("no sessions to evaluate")
    max_len = max(len(s) for s in sessions)
    sums = [0.0] * max_len
    counts = [0] * max_len
    queries = set()
    for s in sessions:
        queries.add(s.query_id)
        probs = resolve_params(params, s.intent).conditional_click_probs(s)
        for j, (q, c) in enumerate(zip(probs, s.clicks)):
            q = _clamp(q)
            sums[j] += math.log2(q) if c else math.log2(1.0 - q)
            counts[j] += 1
    per_position = [
        2.0 ** (-sums[j] / counts[j]) for j in range(max_len) if counts[j] > 0
    ]
    position_counts = [c for c in counts if c > 0]
    overall = sum(per_position) / len(per_position)
    return EvalReport(
        per_position=per_position,
        position_counts=position_counts,
        overall=overall,
        n_sessions=len(sessions),
        n_queries=len(queries),
        label=label,
    )


def dcg(grades: Sequence[int], k: int) -> float:
    return sum(
        (2.0 ** g - 1.0) / math.log2(i + 1.0) for i, g in enumerate(grades[:k], start=1)
    )


def ndcg_at_k(
    ranked_grades: Sequence[int], ideal_grades: Sequence[int], k: int
) -> float | None:
    """NDCG of a served ranking against the ideal ordering of the same grades.

    Returns None for all-zero grade sets (no ranking signal); callers
    exclude those queries from averages.
    """
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    if sorted(ranked_grades) != sorted(ideal_grades):
        raise DataError("served and ideal grades are not the same multiset")
    if list(ideal_grades) != sorted(ideal_grades, reverse=True):
        raise DataError("ideal grades must be sorted in descending order")
    ideal = dcg(ideal_grades, k)
    if ideal == 0.0:
        return None
    return dcg(ranked_grades, k) / ideal


def rank_by_relevance(
    params: AnyParams, query_id: str, intent: Intent, docs: Sequence[str]
) -> list[str]:
    """Candidate docs ordered by estimated relevance, ties by ascending id."""
    if not docs:
        raise ValueError("no candidate docs to rank")
    base = resolve_params(params, intent)
    return sorted(docs, key=lambda d: (-base.relevance_estimate(query_id, d), d))


def empirical_ctr(sessions: Iterable[Session]) -> dict[tuple[str, str], float]:
    """Raw click-through rate per (query, doc): clicks over impressions."""
    clicks: dict[tuple[str, str], int] = {}
    shows: dict[tuple[str, str], int] = {}
    for s in sessions:
        for doc, c in zip(s.docs, s.clicks):
            key = (s.query_id, doc)
            shows[key] = shows.get(key, 0) + 1
            clicks[key] = clicks.get(key, 0) + c
    return {key: clicks[key] / shows[key] for key in shows}


def ndcg_for_scores(
    score: Callable[[str, str], float],
    judgments: Sequence[RelevanceJudgment],
    k_list: Sequence[int] = DEFAULT_K_LIST,
) -> tuple[dict[int, float], int]:
    """Mean NDCG@K over judged queries for an arbitrary (query, doc) scorer.

    Queries whose grades are all zero are excluded; returns the averages and
    the number of queries that counted.
    """
    by_query: dict[str, list[RelevanceJudgment]] = {}
    for j in judgments:
        by_query.setdefault(j.query_id, []).append(j)
    totals = {k: 0.0 for k in k_list}
    counted = 0
    for query_id, judged in by_query.items():
        grades = {j.doc_id: j.grade for j in judged}
        ranked_docs = sorted(grades, key=lambda d: (-score(query_id, d), d))
        ranked = [grades[d] for d in ranked_docs]
        ideal = sorted(grades.values(), reverse=True)
        values = {k: ndcg_at_k(ranked, ideal, k) for k in k_list}
        if any(v is None for v in values.values()):
            continue
        counted += 1
        for k in k_list:
            totals[k] += values[k]
    if counted == 0:
        return {k: float("nan") for k in k_list}, 0
    return {k: totals[k] / counted for k in k_list}, counted


def ndcg_report(
    params: AnyParams,
    judgments: Sequence[RelevanceJudgment],
    k_list: Sequence[int] = DEFAULT_K_LIST,
    query_intents: Mapping[str, Intent] | None = None,
) -> tuple[dict[int, float], int]:
    """Mean NDCG@K of ranking by a fitted model's relevance estimates."""
    intents = query_intents or {}

    def score(query_id: str, doc_id: str) -> float:
        base = resolve_params(params, intents.get(query_id, Intent.UNKNOWN))
        return base.relevance_estimate(query_id, doc_id)

    return ndcg_for_scores(score, judgments, k_list)


def evaluate_model(
    params: AnyParams,
    sessions: Sequence[Session],
    judgments: Sequence[RelevanceJudgment] | None = None,
    k_list: Sequence[int] = DEFAULT_K_LIST,
    label: str = "",
) -> EvalReport:
    """Full evaluation: perplexities always, NDCG when judgments are given.

    NDCG ranks by relevance marginalized over each query's observed intent
    shares, which reduces to the plain per-intent table when every session
    of a query carries the same intent.
    """
    report = perplexity_report(params, sessions, label=label)
    if judgments:
        score = mixture_relevance_scorer(params, sessions)
        report.ndcg, report.ndcg_queries = ndcg_for_scores(score, judgments, k_list)
    return report


def intent_distributions(sessions: Iterable[Session]) -> dict[str, dict[Intent, float]]:
    """Empirical intent shares per query."""
    counts: dict[str, dict[Intent, int]] = {}
    for s in sessions:
        per_query = counts.setdefault(s.query_id, {})
        per_query[s.intent] = per_query.get(s.intent, 0) + 1
    out = {}
    for query_id, per_query in counts.items():
        total = sum(per_query.values())
        out[query_id] = {t: n / total for t, n in per_query.items()}
    return out


def mixture_relevance_scorer(
    params: AnyParams, sessions: Iterable[Session]
) -> Callable[[str, str], float]:
    """Relevance scorer marginalized over each query's observed intent mix.

    For intent-aware parameters this weights the per-intent relevance
    estimates by the query's empirical intent shares, which is the
    predicted relevance of a query whose sessions carry mixed intents.
    """
    weights = intent_distributions(sessions)

    def score(query_id: str, doc_id: str) -> float:
        shares = weights.get(query_id)
        if not shares:
            return resolve_params(params).relevance_estimate(query_id, doc_id)
        return sum(
            share * resolve_params(params, intent).relevance_estimate(query_id, doc_id)
            for intent, share in shares.items()
        )

    return score


def query_intents_from_sessions(sessions: Iterable[Session]) -> dict[str, Intent]:
    """Majority intent per query (first-seen wins ties)."""
    votes: dict[str, dict[Intent, int]] = {}
    order: dict[str, list[Intent]] = {}
    for s in sessions:
        votes.setdefault(s.query_id, {})
        votes[s.query_id][s.intent] = votes[s.query_id].get(s.intent, 0) + 1
        order.setdefault(s.query_id, []).append(s.intent)
    out = {}
    for query_id, counts in votes.items():
        best = max(counts.values())
        for intent in order[query_id]:
            if counts[intent] == best:
                out[query_id] = intent
                break
    return out


@dataclass
class ModelComparison:
    """Baseline vs treatment perplexities with improvement cells."""

    base: EvalReport
    treatment: EvalReport
    improvements: list[float]
    overall_improvement: float
    ndcg_deltas: dict[int, float]

    def to_json(self) -> dict:
        return {
            "base": self.base.to_json(),
            "treatment": self.treatment.to_json(),
            "improvements": self.improvements,
            "overall_improvement": self.overall_improvement,
            "ndcg_deltas": {str(k): v for k, v in self.ndcg_deltas.items()},
        }


def compare_models(base: EvalReport, treatment: EvalReport) -> ModelComparison:
    """Improvement of the treatment model over the baseline, cell by cell."""
    if len(base.per_position) != len(treatment.per_position):
        raise ComparabilityError(
            f"position counts differ: {len(base.per_position)} vs "
            f"{len(treatment.per_position)}"
        )
    if base.position_counts != treatment.position_counts or base.n_sessions != treatment.n_sessions:
        raise ComparabilityError("reports were not evaluated on the same session set")
    if set(base.ndcg) != set(treatment.ndcg):
        raise ComparabilityError("reports use different NDCG cut-off lists")
    improvements = [
        perplexity_improvement(t, b)
        for t, b in zip(treatment.per_position, base.per_position)
    ]
    overall = perplexity_improvement(treatment.overall, base.overall)
    deltas = {k: treatment.ndcg[k] - base.ndcg[k] for k in sorted(base.ndcg)}
    return ModelComparison(
        base=base,
        treatment=treatment,
        improvements=improvements,
        overall_improvement=overall,
        ndcg_deltas=deltas,
    )


def format_comparison_table(cmp: ModelComparison) -> str:
    """Aligned text table: rows are models, columns @1..@N plus Overall."""
    n = len(cmp.base.per_position)
    headers = [""] + [f"@{j}" for j in range(1, n + 1)] + ["Overall"]
    base_label = cmp.base.label or "base"
    treat_label = cmp.treatment.label or "treatment"
    rows = [
        [base_label] + [f"{p:.3f}" for p in cmp.base.per_position] + [f"{cmp.base.overall:.3f}"],
        [treat_label]
        + [f"{p:.3f}" for p in cmp.treatment.per_position]
        + [f"{cmp.treatment.overall:.3f}"],
        ["Impr."]
        + [f"{imp:.1f}%" for imp in cmp.improvements]
        + [f"{cmp.overall_improvement:.1f}%"],
    ]
    if cmp.ndcg_deltas:
        rows.append([])
        rows.append(
            ["NDCG"] + [f"@{k}" for k in sorted(cmp.ndcg_deltas)]
        )
        rows.append(
            [base_label] + [f"{cmp.base.ndcg[k]:.4f}" for k in sorted(cmp.ndcg_deltas)]
        )
        rows.append(
            [treat_label]
            + [f"{cmp.treatment.ndcg[k]:.4f}" for k in sorted(cmp.ndcg_deltas)]
        )
        rows.append(
            ["delta"] + [f"{cmp.ndcg_deltas[k]:+.4f}" for k in sorted(cmp.ndcg_deltas)]
        )
    width = max(len(cell) for row in [headers] + rows for cell in row) + 2
    lines = ["".join(cell.ljust(width) for cell in headers)]
    for row in rows:
        lines.append("".join(cell.ljust(width) for cell in row))
    return "\n".join(line.rstrip() for line in lines)
