"""Command-line entry points for the full workflow.

Typical sequence:

    clickrank synth --workdir run
    clickrank ingest --workdir run
    clickrank index --workdir run
    clickrank train-embeddings --workdir run
    clickrank build-clickgraph --workdir run
    clickrank train-deep --workdir run
    clickrank train-ltr --workdir run --algorithm coordinate_ascent --mask final
    clickrank evaluate --workdir run
    clickrank search --workdir run --q "vpn connection" --k 10

Each stage reads and writes the documented artifact files in --workdir.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import corpus as corpus_mod
from . import evaluation, ltr, pipeline, service, synth
from .clickgraph import ClickGraphModel
from .deepmodel import PRESETS, SemanticMatcher
from .embeddings import CbowEmbeddings
from .errors import ClickrankError
from .index import InvertedIndex, build_index
from .pipeline import PipelineBundle, artifact_path

ALGORITHMS = ("coordinate_ascent", "rankboost", "ranknet")


def _trainer(algorithm: str, seed: int, metric_k: int = 10):
    if algorithm == "coordinate_ascent":
        return lambda X, y, q: ltr.CoordinateAscentRanker(metric_k=metric_k, seed=seed).fit(X, y, q)
    if algorithm == "ranknet":
        return lambda X, y, q: ltr.RankNetRanker(seed=seed).fit(X, y, q)
    if algorithm == "rankboost":
        return lambda X, y, q: ltr.RankBoostRanker().fit(X, y, q)
    raise ClickrankError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")


def cmd_synth(args) -> int:
    config = synth.SynthConfig.from_file(args.config) if args.config else synth.SynthConfig()
    if args.seed is not None:
        config.seed = args.seed
    corpus = synth.generate_corpus(config)
    records = synth.generate_clicklog(corpus, config)
    workdir = Path(args.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    synth.write_clicklog(records, artifact_path(workdir, "clicklog"))
    synth.write_truth(corpus, artifact_path(workdir, "truth"))
    print(
        f"synth: {len(corpus.docs)} docs, {len(corpus.queries)} queries, "
        f"{len(records)} click records -> {artifact_path(workdir, 'clicklog')}"
    )
    return 0


def cmd_ingest(args) -> int:
    workdir = Path(args.workdir)
    log_path = Path(args.clicklog) if args.clicklog else artifact_path(workdir, "clicklog")
    records = corpus_mod.load_click_log(log_path)
    if args.no_stopwords:
        stops: frozenset[str] = frozenset()
    elif args.stoplist:
        stops = frozenset().union(*(corpus_mod.load_stoplist(p) for p in args.stoplist))
    else:
        stops = corpus_mod.default_stoplist()
    pairs, skipped = corpus_mod.aggregate(records, stops)
    docs = corpus_mod.collect_documents(pairs)
    pipeline.save_pairs(pairs, skipped, artifact_path(workdir, "pairs"))
    pipeline.save_docs(docs, artifact_path(workdir, "docs"))
    with open(artifact_path(workdir, "stopwords"), "w", encoding="utf-8") as fh:
        for entry in sorted(stops):
            fh.write(entry + "\n")
    print(
        f"ingest: {len(records)} records -> {len(pairs)} unique pairs over "
        f"{len(docs)} documents ({skipped} records skipped)"
    )
    return 0


def cmd_index(args) -> int:
    workdir = Path(args.workdir)
    docs = pipeline.load_docs(artifact_path(workdir, "docs"))
    idx = build_index(docs.items())
    idx.save(artifact_path(workdir, "index"))
    print(f"index: {idx.doc_count} documents, {len(idx.postings)} terms")
    return 0


def cmd_train_embeddings(args) -> int:
    workdir = Path(args.workdir)
    pairs, _ = pipeline.load_pairs(artifact_path(workdir, "pairs"))
    docs = pipeline.load_docs(artifact_path(workdir, "docs"))
    sentences = [list(t) for t in docs.values()]
    seen = set()
    for p in pairs:
        if p.query_text not in seen:
            seen.add(p.query_text)
            sentences.append(list(p.query_tokens))
    model = CbowEmbeddings(
        dim=args.dim,
        window=args.window,
        negatives=args.negatives,
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        min_count=args.min_count,
        seed=args.seed,
    ).fit(sentences)
    model.save(artifact_path(workdir, "embeddings"))
    print(
        f"train-embeddings: vocab {len(model.vocab_)}, dim {model.dim}, "
        f"loss {model.loss_per_epoch_[0]:.4f} -> {model.loss_per_epoch_[-1]:.4f}"
    )
    return 0


def cmd_build_clickgraph(args) -> int:
    workdir = Path(args.workdir)
    pairs, _ = pipeline.load_pairs(artifact_path(workdir, "pairs"))
    embeddings = CbowEmbeddings.load(artifact_path(workdir, "embeddings"))
    model = ClickGraphModel(
        epsilon=args.epsilon,
        max_iters=args.max_iters,
        top_k=args.top_k,
        neighbors=args.neighbors,
        sim_threshold=args.sim_threshold,
        fallback=not args.no_fallback,
    ).fit(pairs, embeddings)
    model.save_vectors(artifact_path(workdir, "clickgraph"))
    print(
        f"build-clickgraph: {len(model.query_vectors_)} query and "
        f"{len(model.doc_vectors_)} doc vectors, "
        f"{'converged' if model.converged_ else 'stopped'} at iteration {model.iterations_}"
    )
    return 0


def cmd_train_deep(args) -> int:
    workdir = Path(args.workdir)
    pairs, _ = pipeline.load_pairs(artifact_path(workdir, "pairs"))
    docs = pipeline.load_docs(artifact_path(workdir, "docs"))
    preset = PRESETS[args.preset]
    init_vectors = None
    if args.init_from_embeddings:
        init_vectors = CbowEmbeddings.load(artifact_path(workdir, "embeddings"))
    matcher = SemanticMatcher(
        d_w=args.d_w,
        window=args.window,
        d_c=preset["d_c"],
        d_s=preset["d_s"],
        gamma=args.gamma,
        negatives=args.negatives,
        learning_rate=args.learning_rate,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        init_vectors=init_vectors,
    ).fit(pairs, docs)
    matcher.save(artifact_path(workdir, "deepmodel"))
    print(
        f"train-deep [{args.preset}]: loss "
        f"{matcher.loss_per_epoch_[0]:.4f} -> {matcher.loss_per_epoch_[-1]:.4f}"
    )
    return 0


def _load_or_assemble_features(workdir: Path) -> list[ltr.RankingSample]:
    feat_path = artifact_path(workdir, "features")
    if feat_path.exists():
        return ltr.read_feature_file(feat_path)
    pairs, _ = pipeline.load_pairs(artifact_path(workdir, "pairs"))
    docs = pipeline.load_docs(artifact_path(workdir, "docs"))
    idx = InvertedIndex.load(artifact_path(workdir, "index"))
    embeddings = CbowEmbeddings.load(artifact_path(workdir, "embeddings"))
    graph = ClickGraphModel.load_vectors(artifact_path(workdir, "clickgraph"), docs, embeddings)
    matcher = SemanticMatcher.load(artifact_path(workdir, "deepmodel"))
    samples = ltr.assemble_all(pairs, idx, graph, matcher)
    ltr.write_feature_file(samples, feat_path)
    return samples


def cmd_train_ltr(args) -> int:
    workdir = Path(args.workdir)
    samples = _load_or_assemble_features(workdir)
    mask = ltr.FEATURE_MASKS[args.mask]
    X, y, qids = ltr.samples_to_arrays(samples)
    X = X[:, list(mask)]
    stats = ltr.compute_feature_stats(X)
    model = _trainer(args.algorithm, args.seed, args.metric_k)(
        ltr.normalize_matrix(X, stats), y, qids
    )
    out = Path(args.model) if args.model else artifact_path(workdir, "model")
    ltr.save_model(model, out, mask_name=args.mask, stats=stats)
    print(f"train-ltr: {args.algorithm} on mask {args.mask} ({len(samples)} samples) -> {out}")
    return 0


def cmd_evaluate(args) -> int:
    workdir = Path(args.workdir)
    samples = _load_or_assemble_features(workdir)
    masks = list(ltr.MASK_ORDER) if args.masks == "all" else args.masks.split(",")
    algorithms = list(ALGORITHMS) if args.algorithms == "all" else args.algorithms.split(",")
    k_values = tuple(int(k) for k in args.k.split(","))
    report = evaluation.EvalReport()
    for mask_name in masks:
        if mask_name not in ltr.FEATURE_MASKS:
            raise ClickrankError(f"unknown mask {mask_name!r}")
        for algorithm in sorted(algorithms):
            means, folds = evaluation.cross_validate(
                samples,
                _trainer(algorithm, args.seed, max(k_values)),
                ltr.FEATURE_MASKS[mask_name],
                k_values=k_values,
                folds=args.folds,
                seed=args.seed,
            )
            report.rows.append(evaluation.EvalRow(mask_name, algorithm, means, folds))
    evaluation.write_report(report, artifact_path(workdir, "report"))
    sys.stdout.write(evaluation.format_report(report, k_values))
    return 0


def cmd_bench(args) -> int:
    workdir = Path(args.workdir)
    bundle = PipelineBundle.load(workdir, n_candidates=args.candidates)
    pairs, _ = pipeline.load_pairs(artifact_path(workdir, "pairs"))
    queries: list[str] = []
    for p in pairs:
        text = p.query_text
        if text not in queries:
            queries.append(text)
        if len(queries) >= args.queries:
            break
    stats = evaluation.benchmark_latency(
        lambda q: bundle.run(q, args.k), queries, repetitions=args.repetitions
    )
    payload = {
        "mean_seconds": stats.mean,
        "p50_seconds": stats.p50,
        "p95_seconds": stats.p95,
        "samples": stats.samples,
        "candidates": args.candidates,
    }
    with open(artifact_path(workdir, "bench"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    print(
        f"bench: mean={stats.mean:.5f}s p50={stats.p50:.5f}s p95={stats.p95:.5f}s "
        f"over {stats.samples} timed queries"
    )
    return 0


def cmd_serve(args) -> int:
    bundle = PipelineBundle.load(Path(args.workdir), n_candidates=args.candidates)
    service.serve(bundle, host=args.host, port=args.port)
    return 0


def cmd_search(args) -> int:
    bundle = PipelineBundle.load(Path(args.workdir), n_candidates=args.candidates)
    for result in bundle.run(args.q, args.k):
        print(f"{result.doc_id}\t{result.score:.6f}\t{result.baseline_score:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clickrank",
        description="Bilingual click-log search re-ranking pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--workdir", default=".", help="artifact directory (default: .)")
        return p

    p = add("synth", cmd_synth, "generate a synthetic bilingual click log")
    p.add_argument("--config", help="key=value config file overriding defaults")
    p.add_argument("--seed", type=int, default=None)

    p = add("ingest", cmd_ingest, "normalize and aggregate the click log")
    p.add_argument("--clicklog", help="path to the click log (default: workdir/clicklog.jsonl)")
    p.add_argument("--stoplist", action="append", help="stoplist file; repeatable")
    p.add_argument("--no-stopwords", action="store_true")

    add("index", cmd_index, "build the inverted index from ingested documents")

    p = add("train-embeddings", cmd_train_embeddings, "train CBOW word embeddings")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--window", type=int, default=4)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--learning-rate", type=float, default=0.025)
    p.add_argument("--min-count", type=int, default=2)
    p.add_argument("--seed", type=int, default=1)

    p = add("build-clickgraph", cmd_build_clickgraph, "propagate click-graph vectors")
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.add_argument("--max-iters", type=int, default=30)
    p.add_argument("--top-k", type=int, default=20)
    p.add_argument("--neighbors", type=int, default=5)
    p.add_argument("--sim-threshold", type=float, default=0.5)
    p.add_argument("--no-fallback", action="store_true")

    p = add("train-deep", cmd_train_deep, "train the deep semantic scorer")
    p.add_argument("--preset", choices=sorted(PRESETS), default="deep1")
    p.add_argument("--d-w", type=int, default=64)
    p.add_argument("--window", type=int, default=3)
    p.add_argument("--gamma", type=float, default=10.0)
    p.add_argument("--negatives", type=int, default=4)
    p.add_argument("--learning-rate", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=2)
    p.add_argument("--init-from-embeddings", action="store_true",
                   help="seed the word table from embeddings.txt")

    p = add("train-ltr", cmd_train_ltr, "train the final learning-to-rank model")
    p.add_argument("--algorithm", choices=ALGORITHMS, default="coordinate_ascent")
    p.add_argument("--mask", choices=sorted(ltr.FEATURE_MASKS), default="final")
    p.add_argument("--metric-k", type=int, default=10)
    p.add_argument("--seed", type=int, default=3)
    p.add_argument("--model", help="output path (default: workdir/model.txt)")

    p = add("evaluate", cmd_evaluate, "cross-validate masks x algorithms, emit the report")
    p.add_argument("--masks", default="all", help="'all' or comma-separated mask names")
    p.add_argument("--algorithms", default="all", help="'all' or comma-separated algorithms")
    p.add_argument("--k", default="5,10", help="comma-separated NDCG cutoffs")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)

    p = add("bench", cmd_bench, "measure end-to-end per-query latency")
    p.add_argument("--queries", type=int, default=50)
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--candidates", type=int, default=100)
    p.add_argument("--k", type=int, default=10)

    p = add("serve", cmd_serve, "run the query service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--candidates", type=int, default=100)

    p = add("search", cmd_search, "retrieve and re-rank for one query")
    p.add_argument("--q", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--candidates", type=int, default=100)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ClickrankError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def run() -> None:
    raise SystemExit(main())
