"""Feature assembly and learning-to-rank trainers.

Every (query, document) pair is described by nine features: F1 BM25, F2-F6
the tf*idf-variant components, F7 the deep cosine, F8-F9 the click-graph
cosine and jaccard. Feature-subset masks reproduce the five ranking models
(baseline / basic / deep / clickgraph / final) without code changes. Three
trainers are provided: Coordinate Ascent (direct metric search), RankNet
(pairwise logistic loss on a linear scorer), and RankBoost (boosted
threshold rankers).
"""

from __future__ import annotations

import json
import math
import urllib.parse
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .clickgraph import ClickGraphModel, clickgraph_features
from .corpus import ClickPair
from .deepmodel import SemanticMatcher
from .errors import DegenerateTrainingError, ModelFormatError, NotFittedError
from .index import Bm25Params, InvertedIndex

FEATURE_NAMES = (
    "f1_bm25",
    "f2_sum_tf",
    "f3_sum_idf",
    "f4_sum_tfidf",
    "f5_min_docfreq",
    "f6_coord",
    "f7_deep_cosine",
    "f8_graph_cosine",
    "f9_graph_jaccard",
)
N_FEATURES = len(FEATURE_NAMES)

# Feature-subset masks for the five ranking models (0-based indices).
FEATURE_MASKS: dict[str, tuple[int, ...]] = {
    "baseline": (0,),
    "basic": (1, 2, 3, 4, 5),
    "deep": (6,),
    "clickgraph": (7, 8),
    "final": tuple(range(N_FEATURES)),
}
MASK_ORDER = ("baseline", "basic", "deep", "clickgraph", "final")


@dataclass
class RankingSample:
    """One (query, document) training/evaluation row."""

    query_id: str
    doc_id: str
    relevance: int
    features: np.ndarray

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=float)
        if self.relevance < 0:
            raise ValueError("relevance must be >= 0")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")


def relevance_label(pair: ClickPair, graded: bool = False) -> int:
    """Binary label from clicks; graded buckets (1 / 2-3 / 4+) behind a flag."""
    if pair.click_count < 1:
        return 0
    if not graded:
        return 1
    return 1 + min(2, int(math.log2(pair.click_count)))


def assemble_features(
    pair: ClickPair,
    index: InvertedIndex,
    graph: ClickGraphModel,
    matcher: SemanticMatcher,
    params: Bm25Params = Bm25Params(),
    graded: bool = False,
) -> RankingSample:
    """Build the full nine-feature vector for one pair.

    Click-absent sides get estimated click-graph vectors; existing sides use
    their propagated ones.
    """
    for name, obj in (("index", index), ("clickgraph model", graph), ("semantic matcher", matcher)):
        if obj is None:
            raise ValueError(f"missing subsystem: {name}")
    lex = index.lexical_features(pair.query_tokens, pair.doc_id, params)
    f7 = matcher.score(pair.query_tokens, pair.doc_tokens)
    qvec = graph.query_vector(pair.query_tokens)
    dvec = graph.doc_vector(pair.doc_id, pair.doc_tokens)
    f8, f9 = clickgraph_features(qvec, dvec)
    features = np.array(
        [lex.f1_bm25, lex.f2_sum_tf, lex.f3_sum_idf, lex.f4_sum_tfidf,
         lex.f5_min_docfreq, lex.f6_coord, f7, f8, f9]
    )
    return RankingSample(
        query_id=pair.query_text,
        doc_id=pair.doc_id,
        relevance=relevance_label(pair, graded),
        features=features,
    )


def assemble_all(
    pairs: Sequence[ClickPair],
    index: InvertedIndex,
    graph: ClickGraphModel,
    matcher: SemanticMatcher,
    params: Bm25Params = Bm25Params(),
    graded: bool = False,
) -> list[RankingSample]:
    """assemble_features over a pair collection, caching semantic vectors."""
    sem_cache: dict[tuple[str, ...], np.ndarray] = {}

    def semantic(tokens: tuple[str, ...]) -> np.ndarray:
        vec = sem_cache.get(tokens)
        if vec is None:
            vec = sem_cache[tokens] = matcher.forward(tokens)
        return vec

    samples = []
    for pair in pairs:
        lex = index.lexical_features(pair.query_tokens, pair.doc_id, params)
        yq = semantic(tuple(pair.query_tokens))
        yd = semantic(tuple(pair.doc_tokens))
        nq, nd = np.linalg.norm(yq), np.linalg.norm(yd)
        f7 = float(yq @ yd / (nq * nd)) if nq > 0 and nd > 0 else 0.0
        qvec = graph.query_vector(pair.query_tokens)
        dvec = graph.doc_vector(pair.doc_id, pair.doc_tokens)
        f8, f9 = clickgraph_features(qvec, dvec)
        samples.append(
            RankingSample(
                query_id=pair.query_text,
                doc_id=pair.doc_id,
                relevance=relevance_label(pair, graded),
                features=np.array(
                    [lex.f1_bm25, lex.f2_sum_tf, lex.f3_sum_idf, lex.f4_sum_tfidf,
                     lex.f5_min_docfreq, lex.f6_coord, f7, f8, f9]
                ),
            )
        )
    return samples


# -- normalization --------------------------------------------------------


@dataclass
class FeatureStats:
    """Per-feature min/max from a training split."""

    mins: np.ndarray
    maxs: np.ndarray

    def to_json(self) -> str:
        return json.dumps({"mins": self.mins.tolist(), "maxs": self.maxs.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "FeatureStats":
        obj = json.loads(text)
        return cls(np.asarray(obj["mins"], dtype=float), np.asarray(obj["maxs"], dtype=float))


def compute_feature_stats(X: np.ndarray) -> FeatureStats:
    X = np.asarray(X, dtype=float)
    return FeatureStats(X.min(axis=0), X.max(axis=0))


def normalize_matrix(X: np.ndarray, stats: FeatureStats) -> np.ndarray:
    """Min-max scale to [0, 1] with training extrema; constant features -> 0."""
    span = stats.maxs - stats.mins
    safe = np.where(span > 0.0, span, 1.0)
    scaled = (np.asarray(X, dtype=float) - stats.mins) / safe
    scaled = np.where(span > 0.0, scaled, 0.0)
    return np.clip(scaled, 0.0, 1.0)


def normalize_features(samples: Sequence[RankingSample], stats: FeatureStats) -> list[RankingSample]:
    """Return new samples with min-max scaled features (see normalize_matrix)."""
    X = normalize_matrix(np.vstack([s.features for s in samples]), stats)
    return [
        RankingSample(s.query_id, s.doc_id, s.relevance, X[i])
        for i, s in enumerate(samples)
    ]


def samples_to_arrays(samples: Sequence[RankingSample]):
    """(X, y, qids) arrays in sample order."""
    X = np.vstack([s.features for s in samples])
    y = np.array([s.relevance for s in samples], dtype=int)
    qids = [s.query_id for s in samples]
    return X, y, qids


# -- shared metric / pair machinery ----------------------------------------

_MAX_DISCOUNT_CACHE = 256
_DISCOUNTS = 1.0 / np.log2(np.arange(2, _MAX_DISCOUNT_CACHE + 2))


class _NdcgContext:
    """Precomputed per-query state for fast repeated NDCG@k evaluation.

    Queries whose ideal DCG is zero carry no signal and are excluded from
    the mean, matching the reporting metric.
    """

    def __init__(self, y: np.ndarray, qids: Sequence[str], k: int):
        groups: dict[str, list[int]] = {}
        for i, qid in enumerate(qids):
            groups.setdefault(qid, []).append(i)
        self.k = k
        self.groups: list[list[int]] = []
        self.gains: list[np.ndarray] = []
        self.idcg: list[float] = []
        for idxs in groups.values():
            gains = (2.0 ** y[idxs]) - 1.0
            top = np.sort(gains)[::-1][:k]
            idcg = float((top * _DISCOUNTS[: len(top)]).sum())
            if idcg > 0.0:
                self.groups.append(idxs)
                self.gains.append(gains)
                self.idcg.append(idcg)

    def mean_ndcg(self, scores: np.ndarray) -> float:
        total = 0.0
        k = self.k
        for idxs, gains, idcg in zip(self.groups, self.gains, self.idcg):
            order = sorted(range(len(idxs)), key=lambda j: -scores[idxs[j]])[:k]
            dcg = 0.0
            for rank, j in enumerate(order):
                dcg += gains[j] * _DISCOUNTS[rank]
            total += dcg / idcg
        return total / len(self.groups) if self.groups else 0.0


def _preference_pairs(y: np.ndarray, qids: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    """Within-query index pairs (top, bottom) with strictly higher relevance."""
    groups: dict[str, list[int]] = {}
    for i, qid in enumerate(qids):
        groups.setdefault(qid, []).append(i)
    tops: list[int] = []
    bottoms: list[int] = []
    for idxs in groups.values():
        for a in idxs:
            for b in idxs:
                if y[a] > y[b]:
                    tops.append(a)
                    bottoms.append(b)
    return np.array(tops, dtype=int), np.array(bottoms, dtype=int)


def _validate_training_input(X, y, qids):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.ndim != 2:
        raise ValueError("X must be 2-dimensional")
    if len(y) != X.shape[0] or len(qids) != X.shape[0]:
        raise ValueError("X, y, qid lengths disagree")
    if np.any(y < 0):
        raise ValueError("relevance labels must be >= 0")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    return X, y, list(qids)


# -- trainers ---------------------------------------------------------------


class CoordinateAscentRanker(BaseEstimator):
    """Linear scorer trained by cyclic coordinate search on NDCG@k.

    Each coordinate is line-searched over 21 points (the current weight and
    +/- step_base * 2^e for e in 0..9); cycles repeat until no coordinate
    improves the training metric by more than tol. The best of `restarts`
    initializations wins (ties by restart index).
    """

    def __init__(
        self,
        metric_k: int = 10,
        restarts: int = 5,
        step_base: float = 0.05,
        step_exponents: int = 10,
        tol: float = 1e-6,
        max_cycles: int = 50,
        seed: int = 0,
    ):
        self.metric_k = metric_k
        self.restarts = restarts
        self.step_base = step_base
        self.step_exponents = step_exponents
        self.tol = tol
        self.max_cycles = max_cycles
        self.seed = seed

    def fit(self, X, y, qid) -> "CoordinateAscentRanker":
        X, y, qids = _validate_training_input(X, y, qid)
        tops, _ = _preference_pairs(y, qids)
        if len(tops) == 0:
            raise DegenerateTrainingError("no query has two docs of differing relevance")
        ctx = _NdcgContext(y, qids, self.metric_k)
        n_features = X.shape[1]
        rng = np.random.default_rng(self.seed)
        deltas = [self.step_base * (2.0**e) for e in range(self.step_exponents)]

        best_weights: np.ndarray | None = None
        best_metric = -1.0
        for restart in range(self.restarts):
            if restart == 0:
                w = np.full(n_features, 1.0 / n_features)
            else:
                w = rng.random(n_features)
            scores = X @ w
            current = ctx.mean_ndcg(scores)
            for _cycle in range(self.max_cycles):
                improved = False
                for j in range(n_features):
                    col = X[:, j]
                    best_v = w[j]
                    best_local = current
                    best_scores = scores
                    for d in deltas:
                        for v in (w[j] + d, w[j] - d):
                            cand_scores = scores + (v - w[j]) * col
                            m = ctx.mean_ndcg(cand_scores)
                            if m > best_local + self.tol:
                                best_local = m
                                best_v = v
                                best_scores = cand_scores
                    if best_v != w[j]:
                        w[j] = best_v
                        scores = best_scores
                        current = best_local
                        improved = True
                if not improved:
                    break
            if current > best_metric:
                best_metric = current
                best_weights = w.copy()

        self.weights_ = best_weights
        self.train_metric_ = best_metric
        self.n_features_in_ = n_features
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "weights_"):
            raise NotFittedError("CoordinateAscentRanker is not fitted")
        return np.asarray(X, dtype=float) @ self.weights_


class RankNetRanker(BaseEstimator):
    """Linear scorer trained with pairwise logistic loss by gradient descent.

    For every within-query preference pair i over j the loss contributes
    ln(1 + exp(-(s_i - s_j))). Full-batch descent with a fixed step.
    """

    def __init__(self, learning_rate: float = 0.5, epochs: int = 300, seed: int = 0):
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.seed = seed

    def fit(self, X, y, qid) -> "RankNetRanker":
        X, y, qids = _validate_training_input(X, y, qid)
        tops, bottoms = _preference_pairs(y, qids)
        if len(tops) == 0:
            raise DegenerateTrainingError("no preference pairs")
        rng = np.random.default_rng(self.seed)
        w = rng.normal(0.0, 0.01, X.shape[1])
        diffs = X[tops] - X[bottoms]
        losses = []
        for _epoch in range(self.epochs):
            margins = diffs @ w
            losses.append(float(np.logaddexp(0.0, -margins).mean()))
            grad = -(diffs * _sigmoid(-margins)[:, None]).mean(axis=0)
            w -= self.learning_rate * grad
        self.weights_ = w
        self.loss_per_epoch_ = losses
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "weights_"):
            raise NotFittedError("RankNetRanker is not fitted")
        return np.asarray(X, dtype=float) @ self.weights_

    @staticmethod
    def loss_and_gradient(w: np.ndarray, X, y, qid):
        """Mean pairwise loss and its gradient at w (for gradient checks)."""
        X, y, qids = _validate_training_input(X, y, qid)
        tops, bottoms = _preference_pairs(y, qids)
        if len(tops) == 0:
            raise DegenerateTrainingError("no preference pairs")
        diffs = X[tops] - X[bottoms]
        margins = diffs @ np.asarray(w, dtype=float)
        loss = float(np.logaddexp(0.0, -margins).mean())
        grad = -(diffs * _sigmoid(-margins)[:, None]).mean(axis=0)
        return loss, grad

    def pairwise_error(self, X, y, qid) -> float:
        """Fraction of preference pairs ranked weakly wrongly (s_top <= s_bottom)."""
        X, y, qids = _validate_training_input(X, y, qid)
        tops, bottoms = _preference_pairs(y, qids)
        scores = self.predict(X)
        return float(np.mean(scores[tops] <= scores[bottoms]))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class RankBoostRanker(BaseEstimator):
    """Boosting over threshold rankers h(x) = 1[feature > theta].

    Each round picks the (feature, threshold, direction) maximizing the
    distribution-weighted pair agreement r, weights it by
    alpha = 0.5 ln((1+r)/(1-r)) (r capped just below 1), and reweights the
    pair distribution multiplicatively. Stops early when r = 0.
    """

    def __init__(self, rounds: int = 50):
        self.rounds = rounds

    def fit(self, X, y, qid) -> "RankBoostRanker":
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        X, y, qids = _validate_training_input(X, y, qid)
        tops, bottoms = _preference_pairs(y, qids)
        if len(tops) == 0:
            raise DegenerateTrainingError("no preference pairs")
        n, n_features = X.shape
        dist = np.full(len(tops), 1.0 / len(tops))
        # Per-feature descending sort orders, shared across rounds.
        orders = [np.argsort(-X[:, f], kind="stable") for f in range(n_features)]

        rounds: list[tuple[int, float, int, float]] = []
        for _round in range(self.rounds):
            # pi[s] = (mass where s is the top) - (mass where s is the bottom):
            # r(f, theta) is then the pi-sum of samples with feature > theta.
            pi = np.zeros(n)
            np.add.at(pi, tops, dist)
            np.add.at(pi, bottoms, -dist)
            best_r = 0.0
            best = None
            for f in range(n_features):
                order = orders[f]
                vals = X[order, f]
                acc = 0.0
                for pos in range(len(order)):
                    acc += pi[order[pos]]
                    if pos + 1 < len(order) and vals[pos + 1] == vals[pos]:
                        continue
                    # theta between this value and the next smaller one.
                    if pos + 1 < len(order):
                        theta = vals[pos + 1]
                    else:
                        break  # h would be identically 1: r = 0 by symmetry
                    if abs(acc) > abs(best_r):
                        best_r = acc
                        best = (f, float(theta))
            if best is None or best_r == 0.0:
                break
            f, theta = best
            direction = 1 if best_r > 0 else -1
            r = min(abs(best_r), 1.0 - 1e-10)
            alpha = 0.5 * math.log((1.0 + r) / (1.0 - r))
            rounds.append((f, theta, direction, alpha))
            h = (X[:, f] > theta).astype(float)
            margins = direction * (h[tops] - h[bottoms])
            dist = dist * np.exp(-alpha * margins)
            dist /= dist.sum()
        self.rounds_ = rounds
        self.n_features_in_ = n_features
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "rounds_"):
            raise NotFittedError("RankBoostRanker is not fitted")
        X = np.asarray(X, dtype=float)
        scores = np.zeros(X.shape[0])
        for f, theta, direction, alpha in self.rounds_:
            scores += alpha * direction * (X[:, f] > theta)
        return scores


def train_coordinate_ascent(
    samples: Sequence[RankingSample], metric_k: int = 10, restarts: int = 5, seed: int = 0
) -> CoordinateAscentRanker:
    X, y, qids = samples_to_arrays(samples)
    return CoordinateAscentRanker(metric_k=metric_k, restarts=restarts, seed=seed).fit(X, y, qids)


def train_ranknet(
    samples: Sequence[RankingSample], learning_rate: float = 0.5, epochs: int = 300, seed: int = 0
) -> RankNetRanker:
    X, y, qids = samples_to_arrays(samples)
    return RankNetRanker(learning_rate=learning_rate, epochs=epochs, seed=seed).fit(X, y, qids)


def train_rankboost(samples: Sequence[RankingSample], rounds: int = 50) -> RankBoostRanker:
    X, y, qids = samples_to_arrays(samples)
    return RankBoostRanker(rounds=rounds).fit(X, y, qids)


def rerank(
    model,
    candidates: Sequence[RankingSample],
    mask: Sequence[int] | None = None,
    stats: FeatureStats | None = None,
) -> list[str]:
    """Order candidate doc_ids by model score, descending.

    Ties keep the incoming candidate order, so re-ranking is a stable
    refinement of the baseline ranking. `mask` selects feature columns and
    `stats` applies training-split normalization before scoring.
    """
    if not candidates:
        return []
    X = np.vstack([s.features for s in candidates])
    if mask is not None:
        X = X[:, list(mask)]
    if stats is not None:
        X = normalize_matrix(X, stats)
    scores = model.predict(X)
    order = sorted(range(len(candidates)), key=lambda i: -scores[i])
    return [candidates[i].doc_id for i in order]


# -- persistence ------------------------------------------------------------

_KIND_BY_TYPE = {
    CoordinateAscentRanker: "coordinate_ascent",
    RankNetRanker: "ranknet",
    RankBoostRanker: "rankboost",
}
_TYPE_BY_KIND = {v: k for k, v in _KIND_BY_TYPE.items()}

MODEL_VERSION = 1


def save_model(
    model,
    path: str | Path,
    mask_name: str | None = None,
    stats: FeatureStats | None = None,
) -> None:
    """Plain-text model file: kind tag on line 1, then key/value lines."""
    kind = _KIND_BY_TYPE.get(type(model))
    if kind is None:
        raise ModelFormatError(f"cannot save model of type {type(model).__name__}")
    lines = [kind, f"version {MODEL_VERSION}"]
    if mask_name is not None:
        lines.append(f"mask {mask_name}")
    if stats is not None:
        lines.append(f"stats {stats.to_json()}")
    if kind == "rankboost":
        lines.append(f"rounds {len(model.rounds_)}")
        for f, theta, direction, alpha in model.rounds_:
            lines.append(f"round {f} {theta!r} {direction} {alpha!r}")
    else:
        lines.append("weights " + " ".join(repr(float(x)) for x in model.weights_))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path: str | Path):
    """Load a model saved by save_model; wrong kind tag raises ModelFormatError.

    The mask name and feature stats, when present, are attached as
    `mask_name_` and `feature_stats_`.
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ModelFormatError(f"{path}: empty model file")
    kind = lines[0].strip()
    model_type = _TYPE_BY_KIND.get(kind)
    if model_type is None:
        raise ModelFormatError(f"{path}: unknown model kind {kind!r}")
    model = model_type()
    model.mask_name_ = None
    model.feature_stats_ = None
    rounds: list[tuple[int, float, int, float]] = []
    for line in lines[1:]:
        if not line.strip():
            continue
        key, _, value = line.partition(" ")
        if key == "version":
            if int(value) != MODEL_VERSION:
                raise ModelFormatError(f"{path}: unsupported model version {value}")
        elif key == "mask":
            model.mask_name_ = value
        elif key == "stats":
            model.feature_stats_ = FeatureStats.from_json(value)
        elif key == "weights":
            model.weights_ = np.array([float(x) for x in value.split()])
            model.n_features_in_ = len(model.weights_)
        elif key == "round":
            f, theta, direction, alpha = value.split()
            rounds.append((int(f), float(theta), int(direction), float(alpha)))
        elif key == "rounds":
            pass
        else:
            raise ModelFormatError(f"{path}: unexpected line {line!r}")
    if kind == "rankboost":
        model.rounds_ = rounds
    elif not hasattr(model, "weights_"):
        raise ModelFormatError(f"{path}: missing weights")
    return model


# -- feature file (LETOR-style) ----------------------------------------------


def write_feature_file(samples: Iterable[RankingSample], path: str | Path) -> None:
    """One line per sample: '<rel> qid:<qid> 1:<f1> ... n:<fn> # <doc_id>'.

    Query and document ids are percent-encoded so they stay whitespace-free.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            qid = urllib.parse.quote(s.query_id, safe="")
            doc = urllib.parse.quote(s.doc_id, safe="")
            feats = " ".join(f"{i + 1}:{v!r}" for i, v in enumerate(s.features))
            fh.write(f"{s.relevance} qid:{qid} {feats} # {doc}\n")


def read_feature_file(path: str | Path) -> list[RankingSample]:
    samples: list[RankingSample] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            body, _, comment = line.partition("#")
            parts = body.split()
            if len(parts) < 2 or not parts[1].startswith("qid:"):
                raise ModelFormatError(f"{path}:{lineno}: malformed feature line")
            relevance = int(parts[0])
            qid = urllib.parse.unquote(parts[1][4:])
            features = []
            for rank, item in enumerate(parts[2:], start=1):
                idx, _, val = item.partition(":")
                if int(idx) != rank:
                    raise ModelFormatError(f"{path}:{lineno}: feature ids not sequential")
                features.append(float(val))
            doc_id = urllib.parse.unquote(comment.strip())
            samples.append(RankingSample(qid, doc_id, relevance, np.array(features)))
    return samples
