"""Query-intent features and a lightweight multiclass classifier.

The feature set pairs click-through evidence (url match ratio, click
ratio, nCS, nRS) with cheap linguistic signals (token count, hashed
bag-of-words). Classification uses multinomial logistic regression trained
by full-batch gradient descent: deterministic, dependency-free, and
linear, which is all the feature design needs.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError
from .sessions import Intent, KNOWN_INTENTS, Session

DEFAULT_BOW_DIM = 1024
DEFAULT_NCS_N = 2
DEFAULT_NRS_N = 3

# Cue tokens for transactional queries: the five cue-word categories plus
# common file-extension and retrieval tokens.
DEFAULT_TRANSACTIONAL_CUES = frozenset(
    {
        "file", "files",
        "video", "videos",
        "music", "song", "songs",
        "picture", "pictures", "photo", "photos", "image", "images",
        "travel", "flight", "flights", "hotel", "hotels", "ticket", "tickets",
        "download", "downloads", "pdf", "mp3", "mp4", "torrent", "zip", "doc", "ppt",
    }
)


class DegenerateTrainingError(ValueError):
    """Training data does not contain at least two distinct classes."""


def url_match_ratio(query: str, url: str) -> float:
    """Length of the longest query substring found in the url, over the url
    length. Case-insensitive; 1.0 means the whole url appears in the query.
    """
    if not url:
        raise ValueError("url must be non-empty")
    q = query.lower()
    u = url.lower()
    best = 0
    for length in range(min(len(q), len(u)), 0, -1):
        if any(q[i : i + length] in u for i in range(len(q) - length + 1)):
            best = length
            break
    return best / len(u)


def click_ratio(click_counts: Mapping[str, int]) -> dict[str, float]:
    """Share of a query's clicks landing on each url; shares sum to 1."""
    total = sum(click_counts.values())
    if total <= 0:
        raise ValueError("click_ratio needs at least one click")
    return {url: count / total for url, count in click_counts.items()}


def n_clicks_satisfied(sessions_of_query: Sequence[Session], n: int) -> float:
    """Fraction of the query's sessions with fewer than n clicks."""
    if not sessions_of_query:
        raise ValueError("no sessions supplied")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    hits = sum(1 for s in sessions_of_query if s.total_clicks < n)
    return hits / len(sessions_of_query)


def n_results_satisfied(sessions_of_query: Sequence[Session], n: int) -> float:
    """Fraction of sessions whose clicks all fall in the top n positions.

    Zero-click sessions count as satisfied (vacuously within the top n).
    """
    if not sessions_of_query:
        raise ValueError("no sessions supplied")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    hits = sum(
        1
        for s in sessions_of_query
        if all(pos <= n for pos in s.clicked_positions())
    )
    return hits / len(sessions_of_query)


def load_lexicon(path) -> frozenset[str]:
    """One cue token per line; '#' starts a comment."""
    tokens = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            token = line.split("#", 1)[0].strip().lower()
            if token:
                tokens.add(token)
    return frozenset(tokens)


def rule_label_transactional(query: str, lexicon: frozenset[str] | None = None) -> bool:
    """True iff the normalized query contains a cue token from the lexicon."""
    cues = DEFAULT_TRANSACTIONAL_CUES if lexicon is None else lexicon
    return any(token in cues for token in query.split())


def hash_token(token: str, dim: int) -> int:
    # crc32 is stable across processes, unlike the builtin str hash.
    return zlib.crc32(token.encode("utf-8")) % dim


@dataclass
class FeatureVector:
    """Numeric description of one query; ordering is fixed for training."""

    urlmr: float
    max_click_ratio: float
    ncs: float
    nrs: float
    query_length: int
    bow: np.ndarray
    click_data_missing: bool = False

    def to_array(self) -> np.ndarray:
        head = np.array(
            [
                self.urlmr,
                self.max_click_ratio,
                self.ncs,
                self.nrs,
                float(self.query_length),
                1.0 if self.click_data_missing else 0.0,
            ]
        )
        return np.concatenate([head, self.bow])


def extract_features(
    query: str,
    sessions_of_query: Sequence[Session],
    clicked_urls: Mapping[str, int],
    ncs_n: int = DEFAULT_NCS_N,
    nrs_n: int = DEFAULT_NRS_N,
    bow_dim: int = DEFAULT_BOW_DIM,
) -> FeatureVector:
    """Feature vector for one query; missing click data degrades to zeros
    with the missing-data flag set."""
    tokens = query.split()
    bow = np.zeros(bow_dim)
    for token in tokens:
        bow[hash_token(token, bow_dim)] += 1.0
    missing = False
    if clicked_urls and sum(clicked_urls.values()) > 0:
        urlmr = max(url_match_ratio(query, url) for url in clicked_urls)
        max_cr = max(click_ratio(clicked_urls).values())
    else:
        urlmr, max_cr, missing = 0.0, 0.0, True
    if sessions_of_query:
        ncs = n_clicks_satisfied(sessions_of_query, ncs_n)
        nrs = n_results_satisfied(sessions_of_query, nrs_n)
    else:
        ncs, nrs, missing = 0.0, 0.0, True
    return FeatureVector(
        urlmr=urlmr,
        max_click_ratio=max_cr,
        ncs=ncs,
        nrs=nrs,
        query_length=len(tokens),
        bow=bow,
        click_data_missing=missing,
    )


def clicked_url_counts(sessions_of_query: Iterable[Session]) -> dict[str, int]:
    """Click counts per doc/url across a query's sessions."""
    counts: dict[str, int] = {}
    for s in sessions_of_query:
        for doc, c in zip(s.docs, s.clicks):
            if c:
                counts[doc] = counts.get(doc, 0) + 1
    return counts


@dataclass
class ClassifierConfig:
    learning_rate: float = 0.5
    max_iters: int = 500
    l2: float = 1e-4
    tol: float = 1e-7
    seed: int = 0


@dataclass
class ClassifierModel:
    """Linear multiclass model over standardized features."""

    weights: np.ndarray  # (n_classes, n_features)
    bias: np.ndarray  # (n_classes,)
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    classes: tuple[Intent, ...]
    bow_dim: int
    iterations: int
    seed: int

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]


MODEL_FORMAT_VERSION = 1


def save_classifier(path, model: ClassifierModel) -> None:
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "classes": [c.value for c in model.classes],
        "weights": model.weights.tolist(),
        "bias": model.bias.tolist(),
        "feature_mean": model.feature_mean.tolist(),
        "feature_scale": model.feature_scale.tolist(),
        "bow_dim": model.bow_dim,
        "iterations": model.iterations,
        "seed": model.seed,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_classifier(path) -> ClassifierModel:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"invalid classifier document: {exc}") from None
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise DataError(f"unsupported classifier version {doc.get('version')!r}")
    try:
        return ClassifierModel(
            weights=np.asarray(doc["weights"], dtype=np.float64),
            bias=np.asarray(doc["bias"], dtype=np.float64),
            feature_mean=np.asarray(doc["feature_mean"], dtype=np.float64),
            feature_scale=np.asarray(doc["feature_scale"], dtype=np.float64),
            classes=tuple(Intent(c) for c in doc["classes"]),
            bow_dim=int(doc["bow_dim"]),
            iterations=int(doc["iterations"]),
            seed=int(doc["seed"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad classifier document: {exc}") from None


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def train_classifier(
    features: Sequence[FeatureVector],
    labels: Sequence[Intent],
    config: ClassifierConfig | None = None,
) -> ClassifierModel:
    """Fit multinomial logistic regression by full-batch gradient descent.

    Deterministic (zero init, fixed iteration order); raises on fewer than
    two distinct classes or Unknown labels.
    """
    config = config or ClassifierConfig()
    if len(features) != len(labels):
        raise ValueError(f"{len(features)} features vs {len(labels)} labels")
    if not features:
        raise ValueError("no training data")
    if any(label is Intent.UNKNOWN for label in labels):
        raise ValueError("Unknown labels cannot be trained on")
    if len(set(labels)) < 2:
        raise DegenerateTrainingError("training needs at least 2 distinct classes")

    x = np.stack([fv.to_array() for fv in features])
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale < 1e-12] = 1.0
    x = (x - mean) / scale
    y = np.array([KNOWN_INTENTS.index(label) for label in labels])
    n, d = x.shape
    k = len(KNOWN_INTENTS)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), y] = 1.0

    w = np.zeros((k, d))
    b = np.zeros(k)
    iterations = 0
    for iterations in range(1, config.max_iters + 1):
        probs = _softmax(x @ w.T + b)
        err = probs - onehot
        grad_w = err.T @ x / n + config.l2 * w
        grad_b = err.mean(axis=0)
        w -= config.learning_rate * grad_w
        b -= config.learning_rate * grad_b
        step = max(float(np.max(np.abs(grad_w))), float(np.max(np.abs(grad_b))))
        if config.learning_rate * step < config.tol:
            break
    return ClassifierModel(
        weights=w,
        bias=b,
        feature_mean=mean,
        feature_scale=scale,
        classes=KNOWN_INTENTS,
        bow_dim=int(features[0].bow.shape[0]),
        iterations=iterations,
        seed=config.seed,
    )


def classify(
    model: ClassifierModel, features: FeatureVector
) -> tuple[Intent, dict[Intent, float]]:
    """Predicted intent plus per-class probabilities.

    Exact ties resolve to the earliest class in the fixed order
    (Informational < Navigational < Transactional).
    """
    x = features.to_array()
    if x.shape[0] != model.n_features:
        raise ValueError(
            f"feature dimension {x.shape[0]} does not match model {model.n_features}"
        )
    x = (x - model.feature_mean) / model.feature_scale
    scores = _softmax(model.weights @ x + model.bias)
    label = model.classes[int(np.argmax(scores))]
    return label, {c: float(p) for c, p in zip(model.classes, scores)}


@dataclass
class PrfScores:
    precision: float
    recall: float
    f1: float


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass
class ClassifierMetrics:
    per_class: dict[Intent, PrfScores]
    macro: PrfScores


def evaluate_classifier(
    predictions: Sequence[Intent], truth: Sequence[Intent]
) -> ClassifierMetrics:
    """Per-class precision/recall/F1 and their macro averages."""
    if len(predictions) != len(truth):
        raise ValueError(f"{len(predictions)} predictions vs {len(truth)} labels")
    if not predictions:
        raise ValueError("no predictions to evaluate")
    if any(t is Intent.UNKNOWN for t in truth):
        raise ValueError("truth labels must not contain Unknown")
    per_class = {}
    for intent in KNOWN_INTENTS:
        tp = sum(1 for p, t in zip(predictions, truth) if p is intent and t is intent)
        fp = sum(1 for p, t in zip(predictions, truth) if p is intent and t is not intent)
        fn = sum(1 for p, t in zip(predictions, truth) if p is not intent and t is intent)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        per_class[intent] = PrfScores(precision, recall, f1_score(precision, recall))
    macro = PrfScores(
        precision=sum(s.precision for s in per_class.values()) / len(per_class),
        recall=sum(s.recall for s in per_class.values()) / len(per_class),
        f1=sum(s.f1 for s in per_class.values()) / len(per_class),
    )
    return ClassifierMetrics(per_class=per_class, macro=macro)
