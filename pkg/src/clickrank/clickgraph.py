"""Click-graph vector propagation and click-absent vector estimation.

Clicked (query, document) pairs form a weighted bipartite graph. Each query
starts from the L2-normalized term-frequency vector of its own tokens; the
vectors are propagated back and forth across the edges (weighted by click
counts, truncated to the heaviest K terms, renormalized) until they stop
moving. The result places queries and documents in one term space, closing
the lexical gap click by click. Queries and documents never seen in the log
get their vectors estimated from embedding-similar existing vertices.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .corpus import ClickPair
from .embeddings import CbowEmbeddings
from .errors import ModelFormatError, NotFittedError

CLICKGRAPH_FORMAT = "clickrank-clickgraph"
CLICKGRAPH_VERSION = 1

# A sparse nonnegative term-weight vector; empty dict = the empty vector.
SparseVector = dict[str, float]


@dataclass
class BipartiteClickGraph:
    """Query and document vertices joined by clicked edges (weight = clicks)."""

    query_keys: list[str] = field(default_factory=list)
    doc_ids: list[str] = field(default_factory=list)
    # Adjacency by index: query_edges[qi] = [(di, weight)], doc_edges mirrored.
    query_edges: list[list[tuple[int, float]]] = field(default_factory=list)
    doc_edges: list[list[tuple[int, float]]] = field(default_factory=list)

    @property
    def edge_count(self) -> int:
        return sum(len(e) for e in self.query_edges)


@dataclass
class PropagationResult:
    query_vectors: dict[str, SparseVector]
    doc_vectors: dict[str, SparseVector]
    iterations: int
    converged: bool


def build_graph(pairs: Iterable[ClickPair]) -> BipartiteClickGraph:
    """Bipartite graph over clicked pairs only; edge weight = click_count."""
    graph = BipartiteClickGraph()
    qindex: dict[str, int] = {}
    dindex: dict[str, int] = {}
    for pair in pairs:
        if pair.click_count < 1:
            continue
        qkey = pair.query_text
        qi = qindex.get(qkey)
        if qi is None:
            qi = qindex[qkey] = len(graph.query_keys)
            graph.query_keys.append(qkey)
            graph.query_edges.append([])
        di = dindex.get(pair.doc_id)
        if di is None:
            di = dindex[pair.doc_id] = len(graph.doc_ids)
            graph.doc_ids.append(pair.doc_id)
            graph.doc_edges.append([])
        graph.query_edges[qi].append((di, float(pair.click_count)))
        graph.doc_edges[di].append((qi, float(pair.click_count)))
    return graph


def tf_unit_vector(tokens: Sequence[str]) -> SparseVector:
    """L2-normalized term-frequency vector; empty for an empty sequence."""
    counts: dict[str, float] = {}
    for tok in tokens:
        counts[tok] = counts.get(tok, 0.0) + 1.0
    return normalize(counts)


def normalize(vec: SparseVector) -> SparseVector:
    norm = math.sqrt(sum(w * w for w in vec.values()))
    if norm == 0.0:
        return {}
    return {t: w / norm for t, w in vec.items()}


def truncate(vec: SparseVector, k: int | None) -> SparseVector:
    """Keep the k heaviest entries (ties broken by term, for determinism)."""
    if k is None or len(vec) <= k:
        return vec
    top = sorted(vec.items(), key=lambda tw: (-tw[1], tw[0]))[:k]
    return dict(top)


def _delta(old: SparseVector, new: SparseVector) -> float:
    terms = set(old) | set(new)
    return math.sqrt(sum((new.get(t, 0.0) - old.get(t, 0.0)) ** 2 for t in terms))


def propagate(
    graph: BipartiteClickGraph,
    init: Mapping[str, SparseVector],
    epsilon: float = 1e-4,
    max_iters: int = 30,
    top_k: int | None = 20,
) -> PropagationResult:
    """Alternate weighted aggregation across the graph until convergence.

    Each iteration recomputes every document vector as the normalized,
    truncated, click-weighted sum of its queries' vectors, then every query
    vector symmetrically from the fresh document vectors. Converged when the
    largest per-vertex L2 change over a full iteration drops below epsilon;
    otherwise stops at max_iters.

    `init` maps every query key to its starting vector (typically the tf
    unit vector of the query's own tokens; may be empty).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if top_k is not None and top_k < 1:
        raise ValueError("top_k must be >= 1 or None")

    qvecs: list[SparseVector] = [dict(init.get(k, {})) for k in graph.query_keys]
    dvecs: list[SparseVector] = [{} for _ in graph.doc_ids]

    iterations = 0
    converged = False
    for iteration in range(1, max_iters + 1):
        iterations = iteration
        max_delta = 0.0
        new_dvecs: list[SparseVector] = []
        for di, edges in enumerate(graph.doc_edges):
            acc: dict[str, float] = {}
            for qi, w in edges:
                for term, weight in qvecs[qi].items():
                    acc[term] = acc.get(term, 0.0) + w * weight
            vec = normalize(truncate(acc, top_k))
            max_delta = max(max_delta, _delta(dvecs[di], vec))
            new_dvecs.append(vec)
        dvecs = new_dvecs
        new_qvecs: list[SparseVector] = []
        for qi, edges in enumerate(graph.query_edges):
            acc = {}
            for di, w in edges:
                for term, weight in dvecs[di].items():
                    acc[term] = acc.get(term, 0.0) + w * weight
            vec = normalize(truncate(acc, top_k))
            max_delta = max(max_delta, _delta(qvecs[qi], vec))
            new_qvecs.append(vec)
        qvecs = new_qvecs
        if max_delta < epsilon:
            converged = True
            break

    return PropagationResult(
        query_vectors=dict(zip(graph.query_keys, qvecs)),
        doc_vectors=dict(zip(graph.doc_ids, dvecs)),
        iterations=iterations,
        converged=converged,
    )


def sparse_cosine(u: SparseVector, v: SparseVector) -> float:
    """Cosine over sparse vectors; 0.0 if either is empty."""
    if not u or not v:
        return 0.0
    if len(v) < len(u):
        u, v = v, u
    dot = sum(w * v[t] for t, w in u.items() if t in v)
    nu = math.sqrt(sum(w * w for w in u.values()))
    nv = math.sqrt(sum(w * w for w in v.values()))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return dot / (nu * nv)


def weighted_jaccard(u: SparseVector, v: SparseVector) -> float:
    """Sum of coordinate minima over sum of maxima; 0.0 when both empty."""
    terms = set(u) | set(v)
    if not terms:
        return 0.0
    num = sum(min(u.get(t, 0.0), v.get(t, 0.0)) for t in terms)
    den = sum(max(u.get(t, 0.0), v.get(t, 0.0)) for t in terms)
    if den == 0.0:
        return 0.0
    return num / den


def set_jaccard(u: SparseVector, v: SparseVector) -> float:
    """Plain Jaccard over the supports, for comparison runs."""
    su, sv = set(u), set(v)
    union = su | sv
    if not union:
        return 0.0
    return len(su & sv) / len(union)


def clickgraph_features(
    qvec: SparseVector, dvec: SparseVector, weighted: bool = True
) -> tuple[float, float]:
    """Features (F8, F9): cosine and jaccard between two term vectors."""
    f8 = sparse_cosine(qvec, dvec)
    f9 = weighted_jaccard(qvec, dvec) if weighted else set_jaccard(qvec, dvec)
    return f8, f9


class ClickGraphModel(BaseEstimator):
    """Fitted click-graph vectors plus the click-absent estimator.

    fit() builds the bipartite graph from clicked pairs, runs propagation,
    and (when an embedding table is supplied) precomputes per-vertex
    centroid vectors so absent queries/documents can be matched to their
    embedding-nearest existing vertices.

    Parameters
    ----------
    epsilon, max_iters, top_k : propagation controls.
    neighbors : how many nearest existing vertices an estimate combines.
    sim_threshold : minimum centroid cosine for a neighbour to qualify.
    fallback : when no neighbour qualifies, fall back to the normalized
        term-frequency vector of the input tokens instead of the empty vector.
    """

    def __init__(
        self,
        epsilon: float = 1e-4,
        max_iters: int = 30,
        top_k: int | None = 20,
        neighbors: int = 5,
        sim_threshold: float = 0.5,
        fallback: bool = True,
    ):
        self.epsilon = epsilon
        self.max_iters = max_iters
        self.top_k = top_k
        self.neighbors = neighbors
        self.sim_threshold = sim_threshold
        self.fallback = fallback

    def fit(
        self,
        pairs: Iterable[ClickPair],
        embeddings: CbowEmbeddings | None = None,
    ) -> "ClickGraphModel":
        if self.neighbors < 1:
            raise ValueError("neighbors must be >= 1")
        if not -1.0 <= self.sim_threshold <= 1.0:
            raise ValueError("sim_threshold must be in [-1, 1]")
        pairs = list(pairs)
        graph = build_graph(pairs)
        init = {}
        doc_tokens: dict[str, tuple[str, ...]] = {}
        for pair in pairs:
            if pair.click_count < 1:
                continue
            init.setdefault(pair.query_text, tf_unit_vector(pair.query_tokens))
            doc_tokens.setdefault(pair.doc_id, tuple(pair.doc_tokens))
        result = propagate(
            graph, init, epsilon=self.epsilon, max_iters=self.max_iters, top_k=self.top_k
        )
        self.graph_ = graph
        self.query_vectors_ = result.query_vectors
        self.doc_vectors_ = result.doc_vectors
        self.iterations_ = result.iterations
        self.converged_ = result.converged
        self.vertex_tokens_ = {
            "query": {k: tuple(k.split()) for k in graph.query_keys},
            "doc": {d: doc_tokens[d] for d in graph.doc_ids},
        }
        self.absent_estimations_ = 0
        self._estimate_cache: dict[tuple[str, tuple[str, ...]], SparseVector] = {}
        self.embeddings_ = None
        if embeddings is not None:
            self.attach_embeddings(embeddings)
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "query_vectors_"):
            raise NotFittedError("ClickGraphModel is not fitted")

    def attach_embeddings(self, embeddings: CbowEmbeddings) -> None:
        """Precompute vertex centroids used by click-absent estimation."""
        self._check_fitted()
        self.embeddings_ = embeddings
        self._centroids: dict[str, tuple[list[str], np.ndarray, np.ndarray]] = {}
        for side in ("query", "doc"):
            keys = list(self.vertex_tokens_[side])
            if keys:
                mat = np.vstack(
                    [embeddings.centroid(self.vertex_tokens_[side][k]) for k in keys]
                )
                norms = np.linalg.norm(mat, axis=1)
            else:
                mat = np.zeros((0, embeddings.dim))
                norms = np.zeros(0)
            self._centroids[side] = (keys, mat, norms)

    def estimate_absent(self, tokens: Sequence[str], side: str) -> SparseVector:
        """Estimate the vector of a query/document missing from the graph.

        Ranks existing same-side vertices by cosine between embedding
        centroids, keeps the top `neighbors` at or above `sim_threshold`,
        and returns the normalized similarity-weighted sum of their
        propagated vectors. With no qualifying neighbour: the normalized tf
        vector of `tokens` if `fallback` is on, else the empty vector.
        """
        self._check_fitted()
        if side not in ("query", "doc"):
            raise ValueError(f"side must be 'query' or 'doc', got {side!r}")
        if self.embeddings_ is None:
            raise NotFittedError("no embedding table attached; call attach_embeddings")
        key = (side, tuple(tokens))
        cached = self._estimate_cache.get(key)
        if cached is not None:
            return cached
        self.absent_estimations_ += 1

        keys, mat, norms = self._centroids[side]
        centroid = self.embeddings_.centroid(tokens)
        cnorm = float(np.linalg.norm(centroid))
        qualifying: list[tuple[float, str]] = []
        if cnorm > 0.0 and len(keys):
            sims = mat @ centroid
            with np.errstate(invalid="ignore", divide="ignore"):
                sims = np.where(norms > 0.0, sims / (norms * cnorm), 0.0)
            order = np.argsort(-sims, kind="stable")[: self.neighbors]
            qualifying = [
                (float(sims[i]), keys[i]) for i in order if sims[i] >= self.sim_threshold
            ]
        if qualifying:
            vectors = self.query_vectors_ if side == "query" else self.doc_vectors_
            acc: dict[str, float] = {}
            for sim, vkey in qualifying:
                for term, weight in vectors[vkey].items():
                    acc[term] = acc.get(term, 0.0) + sim * weight
            estimate = normalize(acc)
        elif self.fallback:
            estimate = tf_unit_vector(tokens)
        else:
            estimate = {}
        self._estimate_cache[key] = estimate
        return estimate

    def query_vector(self, tokens: Sequence[str]) -> SparseVector:
        """Propagated vector if the query exists in the graph, else estimate."""
        self._check_fitted()
        existing = self.query_vectors_.get(" ".join(tokens))
        if existing is not None:
            return existing
        return self.estimate_absent(tokens, "query")

    def doc_vector(self, doc_id: str, tokens: Sequence[str]) -> SparseVector:
        """Propagated vector if the document was clicked, else estimate."""
        self._check_fitted()
        existing = self.doc_vectors_.get(doc_id)
        if existing is not None:
            return existing
        return self.estimate_absent(tokens, "doc")

    def save_vectors(self, path: str | Path) -> None:
        """Persist propagated vectors as versioned line-delimited JSON."""
        self._check_fitted()
        with open(path, "w", encoding="utf-8") as fh:
            header = {
                "format": CLICKGRAPH_FORMAT,
                "version": CLICKGRAPH_VERSION,
                "iterations": self.iterations_,
                "converged": self.converged_,
            }
            fh.write(json.dumps(header, ensure_ascii=False) + "\n")
            for side, vectors in (("query", self.query_vectors_), ("doc", self.doc_vectors_)):
                for key, vec in vectors.items():
                    rec = {"side": side, "key": key, "vector": vec}
                    fh.write(json.dumps(rec, ensure_ascii=False) + "\n")

    @classmethod
    def load_vectors(
        cls,
        path: str | Path,
        doc_tokens: Mapping[str, Sequence[str]],
        embeddings: CbowEmbeddings | None = None,
        **params,
    ) -> "ClickGraphModel":
        """Rebuild a fitted model from persisted vectors.

        `doc_tokens` must cover every doc vertex in the file (query vertex
        tokens are recovered from the vertex keys themselves).
        """
        model = cls(**params)
        with open(path, encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            if (
                header.get("format") != CLICKGRAPH_FORMAT
                or header.get("version") != CLICKGRAPH_VERSION
            ):
                raise ModelFormatError(
                    f"{path}: expected {CLICKGRAPH_FORMAT} v{CLICKGRAPH_VERSION}"
                )
            query_vectors: dict[str, SparseVector] = {}
            doc_vectors: dict[str, SparseVector] = {}
            for line in fh:
                rec = json.loads(line)
                if rec["side"] == "query":
                    query_vectors[rec["key"]] = rec["vector"]
                else:
                    doc_vectors[rec["key"]] = rec["vector"]
        model.query_vectors_ = query_vectors
        model.doc_vectors_ = doc_vectors
        model.iterations_ = header["iterations"]
        model.converged_ = header["converged"]
        model.graph_ = None
        missing = [d for d in doc_vectors if d not in doc_tokens]
        if missing:
            raise ModelFormatError(f"{path}: no tokens for doc vertices {missing[:3]}")
        model.vertex_tokens_ = {
            "query": {k: tuple(k.split()) for k in query_vectors},
            "doc": {d: tuple(doc_tokens[d]) for d in doc_vectors},
        }
        model.absent_estimations_ = 0
        model._estimate_cache = {}
        model.embeddings_ = None
        if embeddings is not None:
            model.attach_embeddings(embeddings)
        return model
