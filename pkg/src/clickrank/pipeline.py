"""End-to-end retrieve-then-rerank pipeline over persisted artifacts.

A query is tokenized, sent to the index for a BM25 candidate set of size N,
each candidate is featurized (estimating click-absent vectors on the fly
for unseen queries), and the learned model re-ranks the candidates. Only
the initial top-N is ever re-scored, trading a little recall for response
time; results are always a subset of the baseline candidate set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .clickgraph import ClickGraphModel, clickgraph_features
from .corpus import default_stoplist, load_stoplist, remove_stopwords, tokenize
from .deepmodel import SemanticMatcher
from .embeddings import CbowEmbeddings
from .errors import ModelFormatError
from .index import Bm25Params, InvertedIndex
from .ltr import FEATURE_MASKS, load_model, normalize_matrix

DOCS_FORMAT = "clickrank-docs"
DOCS_VERSION = 1
PAIRS_FORMAT = "clickrank-pairs"
PAIRS_VERSION = 1

ARTIFACTS = {
    "clicklog": "clicklog.jsonl",
    "truth": "synth_truth.jsonl",
    "docs": "docs.jsonl",
    "pairs": "pairs.jsonl",
    "stopwords": "stopwords.txt",
    "index": "index.jsonl",
    "embeddings": "embeddings.txt",
    "clickgraph": "clickgraph.jsonl",
    "deepmodel": "deepmodel.npz",
    "features": "features.txt",
    "model": "model.txt",
    "report": "eval_report.jsonl",
    "bench": "bench_report.json",
}


def artifact_path(workdir: str | Path, name: str) -> Path:
    return Path(workdir) / ARTIFACTS[name]


def save_docs(doc_tokens: Mapping[str, Sequence[str]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format": DOCS_FORMAT, "version": DOCS_VERSION}) + "\n")
        for doc_id, tokens in doc_tokens.items():
            fh.write(
                json.dumps({"doc_id": doc_id, "tokens": list(tokens)}, ensure_ascii=False) + "\n"
            )


def load_docs(path: str | Path) -> dict[str, tuple[str, ...]]:
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != DOCS_FORMAT or header.get("version") != DOCS_VERSION:
            raise ModelFormatError(f"{path}: expected {DOCS_FORMAT} v{DOCS_VERSION}")
        return {rec["doc_id"]: tuple(rec["tokens"]) for rec in map(json.loads, fh)}


def save_pairs(pairs, skipped: int, path: str | Path) -> None:
    from .corpus import ClickPair  # local: avoid widening the module surface

    with open(path, "w", encoding="utf-8") as fh:
        header = {"format": PAIRS_FORMAT, "version": PAIRS_VERSION, "skipped_records": skipped}
        fh.write(json.dumps(header) + "\n")
        for p in pairs:
            rec = {
                "query_tokens": list(p.query_tokens),
                "doc_id": p.doc_id,
                "doc_tokens": list(p.doc_tokens),
                "click_count": p.click_count,
                "nonclick_count": p.nonclick_count,
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def load_pairs(path: str | Path):
    from .corpus import ClickPair

    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != PAIRS_FORMAT or header.get("version") != PAIRS_VERSION:
            raise ModelFormatError(f"{path}: expected {PAIRS_FORMAT} v{PAIRS_VERSION}")
        pairs = [
            ClickPair(
                query_tokens=tuple(rec["query_tokens"]),
                doc_id=rec["doc_id"],
                doc_tokens=tuple(rec["doc_tokens"]),
                click_count=rec["click_count"],
                nonclick_count=rec["nonclick_count"],
            )
            for rec in map(json.loads, fh)
        ]
    return pairs, header["skipped_records"]


@dataclass(frozen=True)
class SearchResult:
    doc_id: str
    score: float
    baseline_score: float


class PipelineBundle:
    """Immutable collection of the fitted subsystems plus the final model.

    Safe to share across threads once constructed; per-query semantic and
    click-absent vectors are cached for the process lifetime.
    """

    def __init__(
        self,
        index: InvertedIndex,
        embeddings: CbowEmbeddings,
        graph: ClickGraphModel,
        matcher: SemanticMatcher,
        model,
        doc_tokens: Mapping[str, Sequence[str]],
        stoplist: frozenset[str] = frozenset(),
        mask_name: str = "final",
        feature_stats=None,
        n_candidates: int = 100,
        bm25: Bm25Params = Bm25Params(),
    ):
        self.index = index
        self.embeddings = embeddings
        self.graph = graph
        self.matcher = matcher
        self.model = model
        self.doc_tokens = {d: tuple(t) for d, t in doc_tokens.items()}
        self.stoplist = stoplist
        self.mask_name = mask_name
        self.mask = FEATURE_MASKS[mask_name]
        self.feature_stats = feature_stats
        self.n_candidates = n_candidates
        self.bm25 = bm25
        # Document-side vectors are query-independent: precompute them all.
        self._doc_sem = {d: matcher.forward(t) for d, t in self.doc_tokens.items()}
        self._query_sem: dict[tuple[str, ...], np.ndarray] = {}

    @classmethod
    def load(
        cls,
        workdir: str | Path,
        model_path: str | Path | None = None,
        n_candidates: int = 100,
        bm25: Bm25Params = Bm25Params(),
    ) -> "PipelineBundle":
        """Assemble a bundle from the conventional workdir artifact files."""
        workdir = Path(workdir)
        doc_tokens = load_docs(artifact_path(workdir, "docs"))
        index = InvertedIndex.load(artifact_path(workdir, "index"))
        embeddings = CbowEmbeddings.load(artifact_path(workdir, "embeddings"))
        graph = ClickGraphModel.load_vectors(
            artifact_path(workdir, "clickgraph"), doc_tokens, embeddings
        )
        matcher = SemanticMatcher.load(artifact_path(workdir, "deepmodel"))
        model = load_model(model_path or artifact_path(workdir, "model"))
        stop_path = artifact_path(workdir, "stopwords")
        stoplist = load_stoplist(stop_path) if stop_path.exists() else default_stoplist()
        return cls(
            index=index,
            embeddings=embeddings,
            graph=graph,
            matcher=matcher,
            model=model,
            doc_tokens=doc_tokens,
            stoplist=stoplist,
            mask_name=getattr(model, "mask_name_", None) or "final",
            feature_stats=getattr(model, "feature_stats_", None),
            n_candidates=n_candidates,
            bm25=bm25,
        )

    def preprocess(self, text: str) -> list[str]:
        return remove_stopwords(tokenize(text), self.stoplist)

    def _query_semantic(self, tokens: tuple[str, ...]) -> np.ndarray:
        vec = self._query_sem.get(tokens)
        if vec is None:
            vec = self._query_sem[tokens] = self.matcher.forward(tokens)
        return vec

    def run(self, query_text: str, k: int) -> list[SearchResult]:
        """Retrieve top-N by BM25, featurize, re-rank, truncate to k."""
        if k < 1:
            raise ValueError("k must be >= 1")
        if k > self.n_candidates:
            raise ValueError(
                f"k={k} exceeds the candidate set size N={self.n_candidates}"
            )
        qtokens = tuple(self.preprocess(query_text))
        candidates = self.index.retrieve_topn(qtokens, self.n_candidates, self.bm25)
        if not candidates:
            return []

        yq = self._query_semantic(qtokens)
        nq = float(np.linalg.norm(yq))
        qvec = self.graph.query_vector(qtokens)

        rows = []
        for doc_id, _bm in candidates:
            f2, f3, f4, f5, f6 = self.index.tfidf_features(qtokens, doc_id)
            yd = self._doc_sem[doc_id]
            nd = float(np.linalg.norm(yd))
            f7 = float(yq @ yd / (nq * nd)) if nq > 0 and nd > 0 else 0.0
            dvec = self.graph.doc_vector(doc_id, self.doc_tokens[doc_id])
            f8, f9 = clickgraph_features(qvec, dvec)
            rows.append([_bm, f2, f3, f4, f5, f6, f7, f8, f9])

        X = np.asarray(rows, dtype=float)[:, list(self.mask)]
        if self.feature_stats is not None:
            X = normalize_matrix(X, self.feature_stats)
        scores = np.asarray(self.model.predict(X), dtype=float)
        order = sorted(range(len(candidates)), key=lambda i: -scores[i])[:k]
        return [
            SearchResult(
                doc_id=candidates[i][0],
                score=float(scores[i]),
                baseline_score=float(candidates[i][1]),
            )
            for i in order
        ]


def run_pipeline(query_text: str, bundle: PipelineBundle, k: int) -> list[SearchResult]:
    """Module-level alias for PipelineBundle.run."""
    return bundle.run(query_text, k)
