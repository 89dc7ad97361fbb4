"""Bilingual click-log search re-ranking pipeline.

BM25 candidate retrieval, click-graph vector propagation, a convolutional
siamese semantic scorer, and learning-to-rank fusion, evaluated with NDCG@k
under query-level cross-validation.
"""

from .clickgraph import ClickGraphModel, clickgraph_features, propagate
from .corpus import ClickPair, RawClickRecord, aggregate, load_click_log, tokenize
from .deepmodel import SemanticMatcher, TrainPair
from .embeddings import CbowEmbeddings, cosine
from .evaluation import benchmark_latency, cross_validate, kfold_split, ndcg_at_k
from .index import Bm25Params, InvertedIndex, build_index
from .ltr import (
    FEATURE_MASKS,
    CoordinateAscentRanker,
    RankBoostRanker,
    RankingSample,
    RankNetRanker,
    assemble_features,
    rerank,
)
from .pipeline import PipelineBundle, SearchResult, run_pipeline
from .synth import SynthConfig, generate_clicklog, generate_corpus

__version__ = "0.1.0"

__all__ = [
    "Bm25Params",
    "CbowEmbeddings",
    "ClickGraphModel",
    "ClickPair",
    "CoordinateAscentRanker",
    "FEATURE_MASKS",
    "InvertedIndex",
    "PipelineBundle",
    "RankBoostRanker",
    "RankNetRanker",
    "RankingSample",
    "RawClickRecord",
    "SearchResult",
    "SemanticMatcher",
    "SynthConfig",
    "TrainPair",
    "aggregate",
    "assemble_features",
    "benchmark_latency",
    "build_index",
    "clickgraph_features",
    "cosine",
    "cross_validate",
    "generate_clicklog",
    "generate_corpus",
    "kfold_split",
    "load_click_log",
    "ndcg_at_k",
    "propagate",
    "rerank",
    "run_pipeline",
    "tokenize",
]
