import math

import numpy as np
import pytest

from clickrank.errors import DuplicateDocumentError, ModelFormatError, UnknownDocumentError
from clickrank.index import Bm25Params, InvertedIndex, build_index


@pytest.fixture
def three_docs():
    return build_index([("d1", ["a", "b"]), ("d2", ["b", "c"]), ("d3", ["c"])])


def brute_force_bm25(docs, query, doc_id, k1=1.2, b=0.75):
    """Independent arithmetic oracle, written from the closed form."""
    n = len(docs)
    avglen = sum(len(t) for t in docs.values()) / n
    score = 0.0
    for term in dict.fromkeys(query):
        df = sum(1 for tokens in docs.values() if term in tokens)
        tf = docs[doc_id].count(term)
        if tf == 0:
            continue
        idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
        score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len(docs[doc_id]) / avglen))
    return score


class TestBuildIndex:
    def test_postings_and_stats(self, three_docs):
        assert three_docs.doc_count == 3
        assert three_docs.avg_doc_length == pytest.approx(5 / 3)
        assert three_docs.postings["b"] == [("d1", 1), ("d2", 1)]

    def test_small_example(self):
        idx = build_index([("d1", ["a", "b"]), ("d2", ["b"])])
        assert idx.postings["a"] == [("d1", 1)]
        assert idx.postings["b"] == [("d1", 1), ("d2", 1)]
        assert idx.doc_count == 2
        assert idx.avg_doc_length == 1.5

    def test_empty_collection(self):
        idx = build_index([])
        assert idx.doc_count == 0
        assert idx.retrieve_topn(["a"], 5) == []

    def test_repeated_token(self):
        idx = build_index([("d1", ["a", "a"])])
        assert idx.tf("a", "d1") == 2

    def test_zero_length_doc_admitted(self):
        idx = build_index([("d1", []), ("d2", ["a"])])
        assert idx.doc_lengths["d1"] == 0

    def test_duplicate_doc_id(self):
        with pytest.raises(DuplicateDocumentError, match="d1"):
            build_index([("d1", ["a"]), ("d1", ["b"])])


class TestBm25:
    def test_empty_query_scores_zero(self, three_docs):
        assert three_docs.bm25_score([], "d1") == 0.0

    def test_hand_derived_value(self, three_docs):
        # df(a)=1, idf=ln(8/3); len(d1)=2, avglen=5/3; tf part 2.2/2.38.
        expected = math.log(8 / 3) * (1 * 2.2) / (1 + 1.2 * (0.25 + 0.75 * (2 / (5 / 3))))
        assert three_docs.bm25_score(["a"], "d1") == pytest.approx(expected, abs=1e-9)

    def test_matches_brute_force_oracle(self, three_docs):
        docs = {"d1": ["a", "b"], "d2": ["b", "c"], "d3": ["c"]}
        for doc_id in docs:
            for query in (["a"], ["b"], ["c"], ["a", "c"], ["a", "b", "c"], ["zz"]):
                assert three_docs.bm25_score(query, doc_id) == pytest.approx(
                    brute_force_bm25(docs, query, doc_id), abs=1e-9
                )

    def test_term_in_every_document_still_positive(self):
        idx = build_index([("d1", ["x"]), ("d2", ["x"]), ("d3", ["x"])])
        # idf = ln(1 + 0.5/(N+0.5)) > 0.
        assert idx.idf("x") == pytest.approx(math.log(1 + 0.5 / 3.5))
        assert idx.bm25_score(["x"], "d1") > 0.0

    def test_unknown_doc(self, three_docs):
        with pytest.raises(UnknownDocumentError):
            three_docs.bm25_score(["a"], "nope")

    def test_monotone_in_tf(self):
        # Adding occurrences of a matched term never lowers the score.
        previous = -1.0
        for tf in range(1, 8):
            idx = build_index([("d", ["t"] * tf), ("pad", ["u"] * 4)])
            score = idx.bm25_score(["t"], "d")
            assert score >= previous
            previous = score

    def test_duplicate_query_terms_count_once(self, three_docs):
        assert three_docs.bm25_score(["a", "a"], "d1") == three_docs.bm25_score(["a"], "d1")

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            Bm25Params(k1=-0.1)
        with pytest.raises(ValueError):
            Bm25Params(b=1.5)


class TestTfidfFeatures:
    def test_no_match(self, three_docs):
        assert three_docs.tfidf_features(["zz"], "d1") == (0.0, 0.0, 0.0, 0.0, 0.0)

    def test_full_match_one_doc_corpus(self):
        idx = build_index([("d1", ["x", "y"])])
        f2, f3, f4, f5, f6 = idx.tfidf_features(["x", "y"], "d1")
        assert f2 == 2.0  # each matched once, two distinct terms
        assert f6 == 1.0

    def test_three_doc_example(self, three_docs):
        f2, f3, f4, f5, f6 = three_docs.tfidf_features(["a", "b"], "d1")
        assert f6 == 1.0
        assert f5 == 1.0  # min(df(a)=1, df(b)=2)

    def test_f4_zero_iff_f6_zero(self, three_docs):
        rng = np.random.default_rng(0)
        vocab = ["a", "b", "c", "zz", "yy"]
        for _ in range(60):
            query = [vocab[i] for i in rng.integers(0, len(vocab), size=rng.integers(0, 4))]
            for doc_id in ("d1", "d2", "d3"):
                _, _, f4, _, f6 = three_docs.tfidf_features(query, doc_id)
                assert (f4 == 0.0) == (f6 == 0.0)

    def test_empty_query(self, three_docs):
        assert three_docs.tfidf_features([], "d1") == (0.0, 0.0, 0.0, 0.0, 0.0)

    def test_lexical_features_bundles_f1(self, three_docs):
        lex = three_docs.lexical_features(["a"], "d1")
        assert lex.f1_bm25 == three_docs.bm25_score(["a"], "d1")
        assert lex.f6_coord == 1.0


class TestRetrieve:
    def test_shorter_doc_wins_on_tie_tf(self, three_docs):
        # query c matches d2 (len 2) and d3 (len 1); b>0 favors d3.
        top = three_docs.retrieve_topn(["c"], 1)
        assert top[0][0] == "d3"

    def test_n_larger_than_matches(self, three_docs):
        assert len(three_docs.retrieve_topn(["c"], 10)) == 2

    def test_oov_query_empty(self, three_docs):
        assert three_docs.retrieve_topn(["zz"], 5) == []

    def test_empty_query_empty(self, three_docs):
        assert three_docs.retrieve_topn([], 5) == []

    def test_prefix_property(self):
        rng = np.random.default_rng(7)
        vocab = [f"t{i}" for i in range(12)]
        docs = [
            (f"d{i}", [vocab[j] for j in rng.integers(0, len(vocab), size=rng.integers(1, 9))])
            for i in range(25)
        ]
        idx = build_index(docs)
        for _ in range(10):
            query = [vocab[j] for j in rng.integers(0, len(vocab), size=3)]
            for n in range(1, 12):
                shorter = idx.retrieve_topn(query, n)
                longer = idx.retrieve_topn(query, n + 1)
                assert longer[: len(shorter)] == shorter

    def test_exhaustive_scan_equivalence(self):
        rng = np.random.default_rng(11)
        vocab = [f"t{i}" for i in range(15)]
        for trial in range(8):
            n_docs = int(rng.integers(1, 51))
            docs = {
                f"d{i:02d}": [vocab[j] for j in rng.integers(0, len(vocab), size=rng.integers(0, 10))]
                for i in range(n_docs)
            }
            idx = build_index(docs.items())
            query = [vocab[j] for j in rng.integers(0, len(vocab), size=int(rng.integers(1, 4)))]
            brute = sorted(
                (
                    (doc_id, idx.bm25_score(query, doc_id))
                    for doc_id, tokens in docs.items()
                    if any(t in tokens for t in dict.fromkeys(query))
                ),
                key=lambda kv: (-kv[1], kv[0]),
            )
            got = idx.retrieve_topn(query, n_docs + 5)
            assert [d for d, _ in got] == [d for d, _ in brute]
            for (_, a), (_, b) in zip(got, brute):
                assert a == pytest.approx(b, abs=1e-9)

    def test_invalid_n(self, three_docs):
        with pytest.raises(ValueError):
            three_docs.retrieve_topn(["a"], 0)


class TestPersistence:
    def test_roundtrip(self, three_docs, tmp_path):
        path = tmp_path / "index.jsonl"
        three_docs.save(path)
        loaded = InvertedIndex.load(path)
        assert loaded.doc_lengths == three_docs.doc_lengths
        assert loaded.postings == three_docs.postings
        assert loaded.bm25_score(["a"], "d1") == three_docs.bm25_score(["a"], "d1")

    def test_stable_bytes(self, three_docs, tmp_path):
        p1, p2 = tmp_path / "a", tmp_path / "b"
        three_docs.save(p1)
        three_docs.save(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_version_check(self, tmp_path):
        path = tmp_path / "index.jsonl"
        path.write_text('{"format": "other", "version": 9}\n', encoding="utf-8")
        with pytest.raises(ModelFormatError):
            InvertedIndex.load(path)
