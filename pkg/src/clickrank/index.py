"""Inverted index over document titles: BM25 retrieval and lexical features.

The index is the in-repo stand-in for the baseline search engine: it ranks
candidates by Okapi BM25 (feature F1) and exposes the five tf*idf-variant
components (features F2-F6) for the basic ranking model.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DuplicateDocumentError, ModelFormatError, UnknownDocumentError

INDEX_FORMAT = "clickrank-index"
INDEX_VERSION = 1


@dataclass(frozen=True)
class Bm25Params:
    """Okapi BM25 parameters: k1 >= 0 saturation, b in [0, 1] length norm."""

    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self) -> None:
        if self.k1 < 0:
            raise ValueError(f"k1 must be >= 0, got {self.k1}")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError(f"b must be in [0, 1], got {self.b}")


@dataclass(frozen=True)
class LexicalFeatures:
    """Per (query, document) lexical feature block.

    f1_bm25       Okapi BM25 score.
    f2_sum_tf     sum of term frequencies over matched distinct query terms.
    f3_sum_idf    sum of idf over matched terms (same idf as BM25).
    f4_sum_tfidf  sum of tf * idf over matched terms.
    f5_min_docfreq  minimum document frequency among matched terms, 0 if none.
    f6_coord      matched distinct terms / distinct query terms (0 for empty query).
    """

    f1_bm25: float
    f2_sum_tf: float
    f3_sum_idf: float
    f4_sum_tfidf: float
    f5_min_docfreq: float
    f6_coord: float


class InvertedIndex:
    """Immutable term -> postings map with corpus statistics.

    Build once via :func:`build_index`; concurrent readers need no locking.
    """

    def __init__(
        self,
        postings: dict[str, list[tuple[str, int]]],
        doc_lengths: dict[str, int],
    ):
        self.postings = postings
        self.doc_lengths = doc_lengths
        self.doc_count = len(doc_lengths)
        self.avg_doc_length = (
            sum(doc_lengths.values()) / self.doc_count if self.doc_count else 0.0
        )
        self._tf = {
            term: {doc_id: tf for doc_id, tf in plist}
            for term, plist in postings.items()
        }

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self.doc_lengths

    def df(self, term: str) -> int:
        """Document frequency of a term (0 for out-of-vocabulary)."""
        return len(self.postings.get(term, ()))

    def tf(self, term: str, doc_id: str) -> int:
        return self._tf.get(term, {}).get(doc_id, 0)

    def idf(self, term: str) -> float:
        """BM25+1 idf: ln(1 + (N - df + 0.5) / (df + 0.5)); always > 0."""
        df = self.df(term)
        return math.log(1.0 + (self.doc_count - df + 0.5) / (df + 0.5))

    def _require_doc(self, doc_id: str) -> None:
        if doc_id not in self.doc_lengths:
            raise UnknownDocumentError(f"unknown doc_id: {doc_id!r}")

    def bm25_score(
        self, query: Sequence[str], doc_id: str, params: Bm25Params = Bm25Params()
    ) -> float:
        """Okapi BM25 of a document for a query (feature F1).

        Sums idf(t) * tf (k1+1) / (tf + k1 (1 - b + b len/avglen)) over the
        distinct query terms present in the document.
        """
        self._require_doc(doc_id)
        if not query:
            return 0.0
        length = self.doc_lengths[doc_id]
        ratio = length / self.avg_doc_length if self.avg_doc_length > 0 else 0.0
        norm = params.k1 * (1.0 - params.b + params.b * ratio)
        score = 0.0
        for term in dict.fromkeys(query):
            tf = self.tf(term, doc_id)
            if tf == 0:
                continue
            score += self.idf(term) * tf * (params.k1 + 1.0) / (tf + norm)
        return score

    def tfidf_features(self, query: Sequence[str], doc_id: str) -> tuple[float, float, float, float, float]:
        """Features F2-F6 for a (query, document) pair.

        Returns (sum_tf, sum_idf, sum_tfidf, min_docfreq, coord) computed
        over the distinct query terms matched in the document.
        """
        self._require_doc(doc_id)
        distinct = list(dict.fromkeys(query))
        if not distinct:
            return (0.0, 0.0, 0.0, 0.0, 0.0)
        sum_tf = sum_idf = sum_tfidf = 0.0
        min_df: float | None = None
        matched = 0
        for term in distinct:
            tf = self.tf(term, doc_id)
            if tf == 0:
                continue
            matched += 1
            idf = self.idf(term)
            df = self.df(term)
            sum_tf += tf
            sum_idf += idf
            sum_tfidf += tf * idf
            min_df = df if min_df is None else min(min_df, df)
        coord = matched / len(distinct)
        return (sum_tf, sum_idf, sum_tfidf, float(min_df or 0), coord)

    def lexical_features(
        self, query: Sequence[str], doc_id: str, params: Bm25Params = Bm25Params()
    ) -> LexicalFeatures:
        """F1-F6 in one call."""
        f2, f3, f4, f5, f6 = self.tfidf_features(query, doc_id)
        return LexicalFeatures(self.bm25_score(query, doc_id, params), f2, f3, f4, f5, f6)

    def retrieve_topn(
        self, query: Sequence[str], n: int, params: Bm25Params = Bm25Params()
    ) -> list[tuple[str, float]]:
        """Top-n documents matching at least one query term, by BM25.

        Sorted by score descending, ties broken by ascending doc_id, so the
        top-n list is always a prefix of the top-(n+1) list.
        """
        if n <= 0:
            raise ValueError(f"n must be positive, got {n}")
        distinct = list(dict.fromkeys(query))
        if not distinct or not self.doc_count:
            return []
        norm_base = 1.0 - params.b
        norm_scale = params.b / self.avg_doc_length if self.avg_doc_length > 0 else 0.0
        scores: dict[str, float] = {}
        for term in distinct:
            plist = self.postings.get(term)
            if not plist:
                continue
            idf = self.idf(term)
            for doc_id, tf in plist:
                norm = params.k1 * (norm_base + norm_scale * self.doc_lengths[doc_id])
                contrib = idf * tf * (params.k1 + 1.0) / (tf + norm)
                scores[doc_id] = scores.get(doc_id, 0.0) + contrib
        ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
        return ranked[:n]

    def save(self, path: str | Path) -> None:
        """Persist as line-delimited JSON with a version header.

        Stable across runs for identical input order: documents in build
        order, terms sorted.
        """
        with open(path, "w", encoding="utf-8") as fh:
            header = {
                "format": INDEX_FORMAT,
                "version": INDEX_VERSION,
                "doc_count": self.doc_count,
            }
            fh.write(json.dumps(header, ensure_ascii=False) + "\n")
            for doc_id, length in self.doc_lengths.items():
                fh.write(json.dumps({"doc": doc_id, "len": length}, ensure_ascii=False) + "\n")
            for term in sorted(self.postings):
                rec = {"term": term, "post": self.postings[term]}
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "InvertedIndex":
        with open(path, encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            if header.get("format") != INDEX_FORMAT or header.get("version") != INDEX_VERSION:
                raise ModelFormatError(
                    f"{path}: expected {INDEX_FORMAT} v{INDEX_VERSION}, got "
                    f"{header.get('format')!r} v{header.get('version')!r}"
                )
            doc_lengths: dict[str, int] = {}
            postings: dict[str, list[tuple[str, int]]] = {}
            for line in fh:
                rec = json.loads(line)
                if "doc" in rec:
                    doc_lengths[rec["doc"]] = rec["len"]
                else:
                    postings[rec["term"]] = [(d, t) for d, t in rec["post"]]
        if len(doc_lengths) != header["doc_count"]:
            raise ModelFormatError(f"{path}: doc count mismatch")
        return cls(postings, doc_lengths)


def build_index(docs: Iterable[tuple[str, Sequence[str]]]) -> InvertedIndex:
    """Build an inverted index from (doc_id, tokens) pairs.

    Tokens must already be normalized. Zero-length documents are admitted.
    Raises DuplicateDocumentError on a repeated doc_id.
    """
    doc_lengths: dict[str, int] = {}
    postings: dict[str, list[tuple[str, int]]] = {}
    for doc_id, tokens in docs:
        if doc_id in doc_lengths:
            raise DuplicateDocumentError(f"duplicate doc_id: {doc_id!r}")
        doc_lengths[doc_id] = len(tokens)
        counts: dict[str, int] = {}
        for tok in tokens:
            counts[tok] = counts.get(tok, 0) + 1
        for term, tf in counts.items():
            postings.setdefault(term, []).append((doc_id, tf))
    return InvertedIndex(postings, doc_lengths)
