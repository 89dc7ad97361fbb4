import numpy as np
import pytest

from clickrank.clickgraph import ClickGraphModel
from clickrank.corpus import ClickPair
from clickrank.deepmodel import SemanticMatcher, TrainPair
from clickrank.embeddings import CbowEmbeddings
from clickrank.errors import DegenerateTrainingError, ModelFormatError
from clickrank.evaluation import ndcg_at_k
from clickrank.index import build_index
from clickrank.ltr import (
    FEATURE_MASKS,
    MASK_ORDER,
    N_FEATURES,
    CoordinateAscentRanker,
    FeatureStats,
    RankBoostRanker,
    RankingSample,
    RankNetRanker,
    assemble_all,
    assemble_features,
    compute_feature_stats,
    load_model,
    normalize_features,
    normalize_matrix,
    read_feature_file,
    relevance_label,
    rerank,
    samples_to_arrays,
    save_model,
    train_coordinate_ascent,
    train_rankboost,
    train_ranknet,
    write_feature_file,
)


def sample(qid, doc, rel, feats):
    return RankingSample(qid, doc, rel, np.asarray(feats, dtype=float))


def signal_noise_samples(n_queries=6, docs_per_query=5, seed=0):
    """Feature 0 equals relevance, feature 1 is noise."""
    rng = np.random.default_rng(seed)
    samples = []
    for q in range(n_queries):
        for d in range(docs_per_query):
            rel = int(d < 2)
            samples.append(
                sample(f"q{q}", f"d{q}-{d}", rel, [float(rel), float(rng.random())])
            )
    return samples


def mean_ndcg_of(model, samples, k=10):
    X, y, qids = samples_to_arrays(samples)
    scores = model.predict(X)
    groups = {}
    for i, q in enumerate(qids):
        groups.setdefault(q, []).append(i)
    values = []
    for idxs in groups.values():
        order = sorted(idxs, key=lambda i: -scores[i])
        ndcg = ndcg_at_k([int(y[i]) for i in order], k)
        if ndcg is not None:
            values.append(ndcg)
    return sum(values) / len(values)


class _ZeroModel:
    def predict(self, X):
        return np.zeros(len(X))


@pytest.fixture(scope="module")
def assembled():
    """A tiny but complete subsystem stack for feature assembly."""
    emb_sentences = []
    for i in range(30):
        emb_sentences.append(["vpn", "fail", f"f{i % 4}"])
        emb_sentences.append(["mail", "inbox", f"g{i % 4}"])
    emb = CbowEmbeddings(dim=12, epochs=4, min_count=1, seed=2).fit(emb_sentences)
    pairs = [
        ClickPair(("vpn", "fail"), "d1", ("vpn", "fail"), 3, 1),
        ClickPair(("vpn", "fail"), "d2", ("mail", "inbox"), 0, 2),
        ClickPair(("mail", "inbox"), "d2", ("mail", "inbox"), 2, 0),
        ClickPair(("mail", "inbox"), "d3", ("mail", "folder"), 1, 1),
    ]
    index = build_index([("d1", ["vpn", "fail"]), ("d2", ["mail", "inbox"]), ("d3", ["mail", "folder"])])
    graph = ClickGraphModel(neighbors=2, sim_threshold=0.1).fit(pairs, emb)
    train = [
        TrainPair(p.query_tokens, p.doc_tokens, [("mail", "inbox")])
        for p in pairs
        if p.click_count
    ]
    matcher = SemanticMatcher(d_w=6, d_c=6, d_s=4, epochs=2, learning_rate=0.2, seed=0).fit(train)
    return pairs, index, graph, matcher


class TestAssemble:
    def test_identity_text_pair(self, assembled):
        pairs, index, graph, matcher = assembled
        s = assemble_features(pairs[0], index, graph, matcher)
        assert s.relevance == 1
        assert s.features[5] == 1.0  # coord
        assert s.features[6] == pytest.approx(1.0)  # identical texts
        assert len(s.features) == N_FEATURES
        assert s.query_id == "vpn fail"

    def test_semantic_only_pair(self, assembled):
        pairs, index, graph, matcher = assembled
        # Clicked pair whose query shares no term with the title: F1-F6 = 0,
        # the semantic features generally are not.
        clicked_mismatch = ClickPair(("vpn", "fail"), "d2", ("mail", "inbox"), 1, 0)
        s = assemble_features(clicked_mismatch, index, graph, matcher)
        assert np.all(s.features[:6] == 0.0)
        assert s.features[7] != 0.0 or s.features[8] != 0.0

    def test_missing_subsystem_named(self, assembled):
        pairs, index, graph, matcher = assembled
        with pytest.raises(ValueError, match="semantic matcher"):
            assemble_features(pairs[0], index, graph, None)

    def test_assemble_all_matches_single(self, assembled):
        pairs, index, graph, matcher = assembled
        batch = assemble_all(pairs, index, graph, matcher)
        for got, pair in zip(batch, pairs):
            one = assemble_features(pair, index, graph, matcher)
            assert np.allclose(got.features, one.features, atol=1e-12)
            assert got.relevance == one.relevance

    def test_relevance_labels(self):
        p = ClickPair(("q",), "d", ("t",), 0, 2)
        assert relevance_label(p) == 0
        assert relevance_label(ClickPair(("q",), "d", ("t",), 1, 0)) == 1
        assert relevance_label(ClickPair(("q",), "d", ("t",), 3, 0)) == 1
        assert relevance_label(ClickPair(("q",), "d", ("t",), 1, 0), graded=True) == 1
        assert relevance_label(ClickPair(("q",), "d", ("t",), 3, 0), graded=True) == 2
        assert relevance_label(ClickPair(("q",), "d", ("t",), 9, 0), graded=True) == 3


class TestNormalize:
    def test_constant_feature_maps_to_zero(self):
        stats = compute_feature_stats(np.array([[5.0], [5.0]]))
        assert normalize_matrix(np.array([[5.0]]), stats) == pytest.approx(np.array([[0.0]]))

    def test_midpoint(self):
        stats = FeatureStats(np.array([0.0]), np.array([10.0]))
        assert normalize_matrix(np.array([[5.0]]), stats)[0, 0] == pytest.approx(0.5)

    def test_clamps_beyond_training_range(self):
        stats = FeatureStats(np.array([0.0]), np.array([10.0]))
        assert normalize_matrix(np.array([[12.0]]), stats)[0, 0] == 1.0
        assert normalize_matrix(np.array([[-3.0]]), stats)[0, 0] == 0.0

    def test_normalize_features_returns_new_samples(self):
        samples = [sample("q", "d1", 1, [0.0, 4.0]), sample("q", "d2", 0, [10.0, 4.0])]
        stats = compute_feature_stats(np.vstack([s.features for s in samples]))
        out = normalize_features(samples, stats)
        assert out[0].features[0] == 0.0
        assert out[1].features[0] == 1.0
        assert out[0].features[1] == 0.0  # constant
        assert samples[0].features[0] == 0.0  # originals untouched


class TestCoordinateAscent:
    def test_perfect_feature_reaches_ndcg_one(self):
        samples = signal_noise_samples()
        model = train_coordinate_ascent(samples, metric_k=10, seed=0)
        assert model.train_metric_ == pytest.approx(1.0)
        assert mean_ndcg_of(model, samples) == pytest.approx(1.0)

    def test_improves_over_initializations(self):
        samples = signal_noise_samples(seed=3)
        model = train_coordinate_ascent(samples, seed=1)
        X, y, qids = samples_to_arrays(samples)
        from clickrank.ltr import _NdcgContext

        ctx = _NdcgContext(y, qids, 10)
        uniform = np.full(X.shape[1], 1.0 / X.shape[1])
        assert model.train_metric_ >= ctx.mean_ndcg(X @ uniform) - 1e-12

    def test_singleton_queries_do_not_change_ordering(self):
        base = signal_noise_samples(seed=2)
        with_singletons = base + [sample("solo1", "s1", 1, [1.0, 0.5])]
        m1 = train_coordinate_ascent(base, seed=4)
        m2 = train_coordinate_ascent(with_singletons, seed=4)
        X, _, _ = samples_to_arrays(base)
        order1 = np.argsort(-m1.predict(X), kind="stable")
        order2 = np.argsort(-m2.predict(X), kind="stable")
        # Orders over multi-doc queries agree (both rank by feature 0).
        assert mean_ndcg_of(m1, base) == mean_ndcg_of(m2, base) == pytest.approx(1.0)
        del order1, order2

    def test_scaling_weights_preserves_ordering(self):
        samples = signal_noise_samples(seed=5)
        model = train_coordinate_ascent(samples, seed=0)
        X, _, _ = samples_to_arrays(samples)
        base_order = np.argsort(-model.predict(X), kind="stable")
        model.weights_ = model.weights_ * 7.5
        assert np.array_equal(np.argsort(-model.predict(X), kind="stable"), base_order)

    def test_degenerate_input_rejected(self):
        flat = [sample("q", f"d{i}", 1, [float(i)]) for i in range(4)]
        with pytest.raises(DegenerateTrainingError):
            train_coordinate_ascent(flat)

    def test_trained_at_least_zero_model(self):
        samples = signal_noise_samples(seed=6)
        model = train_coordinate_ascent(samples, seed=0)
        assert mean_ndcg_of(model, samples) >= mean_ndcg_of(_ZeroModel(), samples)


class TestRankNet:
    def test_equal_scores_pair_loss_is_ln2(self):
        X = np.array([[1.0, 0.0], [1.0, 0.0]])
        y = np.array([1, 0])
        loss, _ = RankNetRanker.loss_and_gradient(np.zeros(2), X, y, ["q", "q"])
        assert loss == pytest.approx(np.log(2))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(3, 4))
        y = np.array([2, 1, 0])
        qids = ["q"] * 3
        w = rng.normal(size=4)
        loss, grad = RankNetRanker.loss_and_gradient(w, X, y, qids)
        for idx in range(4):
            h = 1e-6 * max(1.0, abs(w[idx]))
            wp, wm = w.copy(), w.copy()
            wp[idx] += h
            wm[idx] -= h
            up, _ = RankNetRanker.loss_and_gradient(wp, X, y, qids)
            down, _ = RankNetRanker.loss_and_gradient(wm, X, y, qids)
            numeric = (up - down) / (2 * h)
            denom = max(1e-10, abs(numeric) + abs(grad[idx]))
            assert abs(numeric - grad[idx]) / denom < 1e-6

    def test_separable_reaches_zero_error(self):
        samples = signal_noise_samples(seed=7)
        X, y, qids = samples_to_arrays(samples)
        model = RankNetRanker(learning_rate=1.0, epochs=400, seed=0).fit(X, y, qids)
        assert model.pairwise_error(X, y, qids) == 0.0
        assert model.loss_per_epoch_[-1] < model.loss_per_epoch_[0]

    def test_no_pairs_rejected(self):
        X = np.ones((3, 2))
        with pytest.raises(DegenerateTrainingError):
            RankNetRanker().fit(X, np.array([1, 1, 1]), ["q"] * 3)

    def test_deterministic(self):
        samples = signal_noise_samples(seed=8)
        X, y, qids = samples_to_arrays(samples)
        m1 = RankNetRanker(seed=3).fit(X, y, qids)
        m2 = RankNetRanker(seed=3).fit(X, y, qids)
        assert np.array_equal(m1.weights_, m2.weights_)

    def test_trained_at_least_zero_model(self):
        samples = signal_noise_samples(seed=9)
        X, y, qids = samples_to_arrays(samples)
        model = RankNetRanker(epochs=200).fit(X, y, qids)
        assert mean_ndcg_of(model, samples) >= mean_ndcg_of(_ZeroModel(), samples)


class TestRankBoost:
    def test_perfect_weak_ranker_round_one(self):
        samples = signal_noise_samples(seed=10)
        X, y, qids = samples_to_arrays(samples)
        model = RankBoostRanker(rounds=3).fit(X, y, qids)
        f, theta, direction, alpha = model.rounds_[0]
        assert f == 0
        assert direction == 1
        assert alpha > 10  # r capped at 1 - 1e-10 gives a large finite alpha
        scores = model.predict(X)
        tops = scores[y == 1]
        bottoms = scores[y == 0]
        assert tops.min() > bottoms.max()

    def test_distribution_stays_normalized(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(12, 3))
        y = rng.integers(0, 3, size=12)
        qids = ["q1"] * 6 + ["q2"] * 6
        model = RankBoostRanker(rounds=5)
        # Re-run fit with an instrumented distribution check.
        from clickrank import ltr as ltr_mod

        tops, bottoms = ltr_mod._preference_pairs(np.asarray(y), qids)
        model.fit(X, y, qids)
        dist = np.full(len(tops), 1.0 / len(tops))
        for f, theta, direction, alpha in model.rounds_:
            h = (X[:, f] > theta).astype(float)
            margins = direction * (h[tops] - h[bottoms])
            dist = dist * np.exp(-alpha * margins)
            dist /= dist.sum()
            assert dist.sum() == pytest.approx(1.0, abs=1e-9)

    def test_zero_rounds_scores_all_equal(self):
        samples = signal_noise_samples(seed=11)
        X, y, qids = samples_to_arrays(samples)
        model = RankBoostRanker(rounds=0).fit(X, y, qids)
        assert np.all(model.predict(X) == 0.0)

    def test_no_pairs_rejected(self):
        with pytest.raises(DegenerateTrainingError):
            RankBoostRanker().fit(np.ones((2, 2)), np.array([0, 0]), ["q", "q"])

    def test_trained_at_least_zero_model(self):
        samples = signal_noise_samples(seed=12)
        X, y, qids = samples_to_arrays(samples)
        model = RankBoostRanker(rounds=10).fit(X, y, qids)
        assert mean_ndcg_of(model, samples) >= mean_ndcg_of(_ZeroModel(), samples)


class TestRerank:
    def candidates(self):
        return [
            sample("q", "first", 0, [3.0, 0.0]),
            sample("q", "second", 1, [2.0, 0.0]),
            sample("q", "third", 1, [1.0, 0.0]),
        ]

    def test_equal_scores_keep_input_order(self):
        model = CoordinateAscentRanker()
        model.weights_ = np.array([0.0, 1.0])
        assert rerank(model, self.candidates()) == ["first", "second", "third"]

    def test_weight_on_f1_reproduces_baseline(self):
        model = CoordinateAscentRanker()
        model.weights_ = np.array([1.0, 0.0])
        assert rerank(model, self.candidates()) == ["first", "second", "third"]

    def test_negated_weights_reverse(self):
        model = CoordinateAscentRanker()
        model.weights_ = np.array([-1.0, 0.0])
        assert rerank(model, self.candidates()) == ["third", "second", "first"]

    def test_output_is_permutation(self):
        rng = np.random.default_rng(2)
        cands = [sample("q", f"d{i}", 0, rng.normal(size=3)) for i in range(9)]
        model = CoordinateAscentRanker()
        model.weights_ = rng.normal(size=3)
        out = rerank(model, cands)
        assert sorted(out) == sorted(c.doc_id for c in cands)

    def test_mask_and_stats_applied(self):
        model = CoordinateAscentRanker()
        model.weights_ = np.array([1.0])
        stats = FeatureStats(np.array([0.0]), np.array([4.0]))
        out = rerank(model, self.candidates(), mask=(0,), stats=stats)
        assert out == ["first", "second", "third"]

    def test_empty_candidates(self):
        model = CoordinateAscentRanker()
        model.weights_ = np.array([1.0])
        assert rerank(model, []) == []


class TestMasks:
    def test_table_rows(self):
        assert MASK_ORDER == ("baseline", "basic", "deep", "clickgraph", "final")
        assert FEATURE_MASKS["baseline"] == (0,)
        assert FEATURE_MASKS["basic"] == (1, 2, 3, 4, 5)
        assert FEATURE_MASKS["deep"] == (6,)
        assert FEATURE_MASKS["clickgraph"] == (7, 8)
        assert FEATURE_MASKS["final"] == tuple(range(9))

    def test_mask_selection_without_code_change(self):
        samples = signal_noise_samples(seed=13)
        X, y, qids = samples_to_arrays(samples)
        for mask in ((0,), (1,), (0, 1)):
            Xm = X[:, list(mask)]
            model = RankNetRanker(epochs=50).fit(Xm, y, qids)
            assert model.n_features_in_ == len(mask)


class TestPersistenceLtr:
    def fitted_models(self):
        samples = signal_noise_samples(seed=14)
        X, y, qids = samples_to_arrays(samples)
        return samples, [
            train_coordinate_ascent(samples, seed=0),
            RankNetRanker(epochs=50).fit(X, y, qids),
            RankBoostRanker(rounds=5).fit(X, y, qids),
        ]

    def test_roundtrip_identical_scores(self, tmp_path):
        samples, models = self.fitted_models()
        X, _, _ = samples_to_arrays(samples)
        for i, model in enumerate(models):
            path = tmp_path / f"m{i}.txt"
            save_model(model, path, mask_name="final")
            loaded = load_model(path)
            assert type(loaded) is type(model)
            assert np.allclose(loaded.predict(X), model.predict(X), atol=0)
            assert loaded.mask_name_ == "final"

    def test_stats_roundtrip(self, tmp_path):
        samples, models = self.fitted_models()
        stats = compute_feature_stats(samples_to_arrays(samples)[0])
        path = tmp_path / "m.txt"
        save_model(models[0], path, stats=stats)
        loaded = load_model(path)
        assert np.allclose(loaded.feature_stats_.mins, stats.mins)
        assert np.allclose(loaded.feature_stats_.maxs, stats.maxs)

    def test_wrong_kind_tag(self, tmp_path):
        path = tmp_path / "m.txt"
        path.write_text("gradient_boosted_trees\nweights 1.0\n", encoding="utf-8")
        with pytest.raises(ModelFormatError, match="kind"):
            load_model(path)


class TestFeatureFile:
    def test_roundtrip_preserves_order_and_values(self, tmp_path):
        rng = np.random.default_rng(3)
        samples = [
            sample(f"query {i % 3} 文字", f"https://kb.example.com/d{i}", int(i % 2), rng.normal(size=9))
            for i in range(10)
        ]
        path = tmp_path / "features.txt"
        write_feature_file(samples, path)
        loaded = read_feature_file(path)
        assert len(loaded) == len(samples)
        for a, b in zip(samples, loaded):
            assert a.query_id == b.query_id
            assert a.doc_id == b.doc_id
            assert a.relevance == b.relevance
            assert np.array_equal(a.features, b.features)

    def test_file_shape(self, tmp_path):
        path = tmp_path / "features.txt"
        write_feature_file([sample("q one", "d#1", 1, [0.5] * 9)], path)
        line = path.read_text(encoding="utf-8").strip()
        assert line.startswith("1 qid:q%20one 1:0.5 2:0.5")
        assert line.endswith("# d%231")

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "features.txt"
        path.write_text("1 noqid 1:0.5\n", encoding="utf-8")
        with pytest.raises(ModelFormatError):
            read_feature_file(path)
