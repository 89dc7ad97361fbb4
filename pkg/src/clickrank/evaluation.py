"""Ranking quality and latency evaluation.

NDCG@k with exponential gains, query-level 5-fold cross-validation (so no
query's documents straddle a train/test boundary), and wall-clock latency
statistics for the online path. Reports are printed as an aligned table and
written as line-delimited JSON with a fixed row/column order.
"""

from __future__ import annotations

import json
import math
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ClickrankError

REPORT_FORMAT = "clickrank-eval-report"
REPORT_VERSION = 1


def ndcg_at_k(relevances: Sequence[int], k: int) -> float | None:
    """NDCG@k of a ranked relevance list.

    DCG@k sums (2^rel - 1) / log2(i + 1) over the first k positions; the
    divisor is the DCG of the same relevances sorted descending. Returns
    None (the "undefined" sentinel) when the ideal DCG is zero; such queries
    are excluded from averages. Negative relevance raises ValueError.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    rels = list(relevances)
    if any(r < 0 for r in rels):
        raise ValueError("relevance grades must be >= 0")

    def dcg(seq: Sequence[int]) -> float:
        return sum(
            (2.0**rel - 1.0) / math.log2(i + 2) for i, rel in enumerate(seq[:k])
        )

    ideal = dcg(sorted(rels, reverse=True))
    if ideal == 0.0:
        return None
    return dcg(rels) / ideal


def kfold_split(
    query_ids: Iterable[str], folds: int = 5, seed: int = 0
) -> dict[str, int]:
    """Assign each query id a fold in [0, folds) by seeded shuffle + round robin.

    Folds partition the query set with sizes differing by at most one.
    Raises ValueError with fewer distinct query ids than folds.
    """
    unique = sorted(set(query_ids))
    if len(unique) < folds:
        raise ValueError(f"need at least {folds} distinct queries, got {len(unique)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(unique))
    return {unique[int(idx)]: pos % folds for pos, idx in enumerate(order)}


@dataclass
class EvalRow:
    """Cross-validation outcome for one (feature mask, algorithm) cell."""

    mask: str
    algorithm: str
    mean_ndcg: dict[int, float]
    fold_ndcg: dict[int, list[float]]


@dataclass
class LatencyStats:
    mean: float
    p50: float
    p95: float
    samples: int


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    latency: LatencyStats | None = None


class CrossValidationError(ClickrankError):
    """A trainer failed inside cross-validation; message names the fold."""


def cross_validate(
    samples: Sequence,
    trainer: Callable[[np.ndarray, np.ndarray, list[str]], object],
    mask: Sequence[int],
    k_values: Sequence[int] = (5, 10),
    folds: int = 5,
    seed: int = 0,
    zero_ideal: str = "exclude",
) -> tuple[dict[int, float], dict[int, list[float]]]:
    """Query-level k-fold cross-validation of one trainer on one mask.

    Per fold: features are restricted to `mask` columns, min-max stats come
    from the four training folds only, the trainer gets the normalized
    training arrays, and NDCG@k is computed on the held-out fold. Returns
    (mean over folds per k, per-fold values per k). `zero_ideal` selects
    whether unjudgeable queries are excluded from fold means ("exclude",
    default) or scored 0 ("zero").
    """
    from . import ltr  # local import: ltr depends on nothing here at runtime

    if zero_ideal not in ("exclude", "zero"):
        raise ValueError("zero_ideal must be 'exclude' or 'zero'")
    X, y, qids = ltr.samples_to_arrays(samples)
    X = X[:, list(mask)]
    assignment = kfold_split(qids, folds=folds, seed=seed)
    fold_values: dict[int, list[float]] = {k: [] for k in k_values}
    for fold in range(folds):
        train_rows = [i for i, q in enumerate(qids) if assignment[q] != fold]
        test_rows = [i for i, q in enumerate(qids) if assignment[q] == fold]
        train_q = {qids[i] for i in train_rows}
        test_q = {qids[i] for i in test_rows}
        if train_q & test_q:
            raise CrossValidationError(f"fold {fold}: train/test queries overlap")
        stats = ltr.compute_feature_stats(X[train_rows])
        X_train = ltr.normalize_matrix(X[train_rows], stats)
        X_test = ltr.normalize_matrix(X[test_rows], stats)
        try:
            model = trainer(X_train, y[train_rows], [qids[i] for i in train_rows])
            scores = np.asarray(model.predict(X_test), dtype=float)
        except Exception as exc:
            raise CrossValidationError(f"fold {fold}: {exc}") from exc
        groups: dict[str, list[int]] = {}
        for pos, i in enumerate(test_rows):
            groups.setdefault(qids[i], []).append(pos)
        for k in k_values:
            values = []
            for idxs in groups.values():
                order = sorted(idxs, key=lambda p: -scores[p])
                ndcg = ndcg_at_k([int(y[test_rows[p]]) for p in order], k)
                if ndcg is None:
                    if zero_ideal == "zero":
                        values.append(0.0)
                else:
                    values.append(ndcg)
            fold_values[k].append(sum(values) / len(values) if values else 0.0)
    means = {k: sum(v) / len(v) for k, v in fold_values.items()}
    return means, fold_values


def benchmark_latency(
    pipeline: Callable[[str], object],
    queries: Sequence[str],
    repetitions: int = 3,
) -> LatencyStats:
    """Wall-clock seconds per query over the full pipeline callable.

    One warm-up pass over the queries is excluded; each of `repetitions`
    measured passes times every query individually.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    if not queries:
        raise ValueError("queries must be non-empty")
    for q in queries:
        pipeline(q)
    timings: list[float] = []
    for _ in range(repetitions):
        for q in queries:
            start = time.perf_counter()
            pipeline(q)
            timings.append(time.perf_counter() - start)
    timings.sort()
    return LatencyStats(
        mean=sum(timings) / len(timings),
        p50=statistics.quantiles(timings, n=100)[49] if len(timings) > 1 else timings[0],
        p95=statistics.quantiles(timings, n=100)[94] if len(timings) > 1 else timings[0],
        samples=len(timings),
    )


def format_report(report: EvalReport, k_values: Sequence[int] = (5, 10)) -> str:
    """Human-readable aligned table, model rows in fixed order."""
    algorithms = sorted({row.algorithm for row in report.rows})
    lines = []
    for k in k_values:
        header = [f"NDCG@{k}".ljust(12)] + [a.ljust(18) for a in algorithms]
        lines.append("".join(header).rstrip())
        for mask in _mask_order(report):
            cells = [mask.ljust(12)]
            for algo in algorithms:
                row = _find_row(report, mask, algo)
                cells.append(
                    (f"{row.mean_ndcg[k]:.4f}" if row and k in row.mean_ndcg else "-").ljust(18)
                )
            lines.append("".join(cells).rstrip())
        lines.append("")
    if report.latency is not None:
        lines.append(
            f"latency mean={report.latency.mean:.5f}s "
            f"p50={report.latency.p50:.5f}s p95={report.latency.p95:.5f}s "
            f"({report.latency.samples} samples)"
        )
    return "\n".join(lines).rstrip() + "\n"


def _mask_order(report: EvalReport) -> list[str]:
    from .ltr import MASK_ORDER

    present = {row.mask for row in report.rows}
    ordered = [m for m in MASK_ORDER if m in present]
    ordered += sorted(present - set(ordered))
    return ordered


def _find_row(report: EvalReport, mask: str, algorithm: str) -> EvalRow | None:
    for row in report.rows:
        if row.mask == mask and row.algorithm == algorithm:
            return row
    return None


def write_report(report: EvalReport, path: str | Path) -> None:
    """Machine-readable line-delimited JSON, fixed row then column order."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format": REPORT_FORMAT, "version": REPORT_VERSION}) + "\n")
        for mask in _mask_order(report):
            for algo in sorted({r.algorithm for r in report.rows}):
                row = _find_row(report, mask, algo)
                if row is None:
                    continue
                rec = {
                    "mask": row.mask,
                    "algorithm": row.algorithm,
                    "ndcg": {str(k): v for k, v in sorted(row.mean_ndcg.items())},
                    "folds": {str(k): v for k, v in sorted(row.fold_ndcg.items())},
                }
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_report(path: str | Path) -> EvalReport:
    report = EvalReport()
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != REPORT_FORMAT or header.get("version") != REPORT_VERSION:
            raise ClickrankError(f"{path}: expected {REPORT_FORMAT} v{REPORT_VERSION}")
        for line in fh:
            rec = json.loads(line)
            report.rows.append(
                EvalRow(
                    mask=rec["mask"],
                    algorithm=rec["algorithm"],
                    mean_ndcg={int(k): v for k, v in rec["ndcg"].items()},
                    fold_ndcg={int(k): v for k, v in rec["folds"].items()},
                )
            )
    return report
