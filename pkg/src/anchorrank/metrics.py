"""Ranking quality metrics and the evaluation report.

All metrics operate on a ranked (node id, score) list plus a ground-truth
importance map. Ties are always broken by ascending node id, on both the
prediction side and the truth side, so every number here is reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .graphs import Dataset, merge_to_single, role_labels

RankedList = list[tuple[str, float]]


def rank_nodes(node_ids: Sequence[str], scores: Sequence[float]) -> RankedList:
    """Sort nodes by descending score, breaking ties by ascending id."""
    if len(node_ids) != len(scores):
        raise ValueError(f"{len(node_ids)} ids vs {len(scores)} scores")
    return sorted(zip(node_ids, map(float, scores)), key=lambda t: (-t[1], t[0]))


def ndcg_at_k(pred: RankedList, truth: Mapping[str, float], k: int) -> float:
    """Normalized discounted cumulative gain with ln(1+importance) relevance.

    ``k`` larger than the list evaluates at full length; an all-zero truth
    yields 0 by convention.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    k = min(k, len(pred))
    rel = {nid: math.log1p(truth[nid]) for nid, _ in pred}
    dcg = sum(rel[nid] / math.log2(i + 2) for i, (nid, _) in enumerate(pred[:k]))
    ideal = sorted(rel, key=lambda nid: (-truth[nid], nid))
    idcg = sum(rel[nid] / math.log2(i + 2) for i, nid in enumerate(ideal[:k]))
    if idcg == 0.0:
        return 0.0
    return dcg / idcg


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties getting the average of their positions."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        ranks[order[i : j + 1]] = avg
        i = j + 1
    return ranks


def spearman(pred_scores: Sequence[float], truth_scores: Sequence[float]) -> float:
    """Rank correlation with average-rank tie handling.

    Returns NaN when either input has zero rank variance (correlation is
    undefined there), which is distinct from every legal value in [-1, 1].
    """
    x = np.asarray(pred_scores, dtype=np.float64)
    y = np.asarray(truth_scores, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError(f"need two equal-length vectors of >= 2 values, got {x.shape}, {y.shape}")
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return float("nan")
    return float(dx @ dy) / math.sqrt(sxx * syy)


def overlap_at_k(
    pred: RankedList, truth: Mapping[str, float], gt_size: int, k: int
) -> float:
    """Overlap ratio of the top-m predicted and top-m true nodes, m = k * gt_size.

    ``m`` is capped at the node count. The truth-side top-m uses descending
    importance with ascending-id ties, mirroring the prediction-side rule.
    """
    if gt_size < 1:
        raise ValueError(f"gt_size must be >= 1, got {gt_size}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    m = min(k * gt_size, len(pred))
    pred_top = {nid for nid, _ in pred[:m]}
    truth_top = set(sorted(truth, key=lambda nid: (-truth[nid], nid))[:m])
    return len(pred_top & truth_top) / m


# ---------------------------------------------------------------------------
# evaluation report


@dataclass(frozen=True)
class EvalCell:
    graph_id: str
    pair_index: int
    ndcg: float
    spm: float
    over: float


@dataclass
class EvalReport:
    """Per-(graph, pair) metrics plus unweighted-mean aggregates."""

    method: str
    split: str
    k_rank: int
    k_over: int
    single_graph: bool = False
    cells: list[EvalCell] = field(default_factory=list)

    @property
    def aggregate(self) -> dict[str, float]:
        def agg(vals: list[float]) -> float:
            arr = np.asarray(vals, dtype=np.float64)
            if arr.size == 0:
                return float("nan")
            return float(np.nanmean(arr))

        return {
            "ndcg": agg([c.ndcg for c in self.cells]),
            "spm": agg([c.spm for c in self.cells]),
            "over": agg([c.over for c in self.cells]),
        }

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "split": self.split,
            "k_rank": self.k_rank,
            "k_over": self.k_over,
            "single_graph": self.single_graph,
            "n_cells": len(self.cells),
            "aggregate": self.aggregate,
            "cells": [
                {
                    "graph_id": c.graph_id,
                    "pair_index": c.pair_index,
                    "ndcg": c.ndcg,
                    "spm": c.spm,
                    "over": c.over,
                }
                for c in self.cells
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def format_report_table(reports: Sequence[EvalReport]) -> str:
    """Aligned method-by-metric text table over one or more reports."""
    if not reports:
        return "(no reports)\n"
    k_rank = reports[0].k_rank
    k_over = reports[0].k_over
    headers = ["method", f"NDCG@{k_rank}", f"SPM@{k_rank}", f"OVER@{k_over}", "cells"]
    rows = []
    for r in reports:
        agg = r.aggregate
        rows.append(
            [r.method, f"{agg['ndcg']:.4f}", f"{agg['spm']:.4f}", f"{agg['over']:.4f}", str(len(r.cells))]
        )
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(headers)]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
        "  ".join("-" * widths[i] for i in range(len(headers))),
    ]
    for row in rows:
        lines.append("  ".join(row[i].ljust(widths[i]) for i in range(len(headers))))
    return "\n".join(lines) + "\n"


def format_comparison(reports_by_dataset: Mapping[str, Sequence[EvalReport]]) -> str:
    """Method rows against (dataset x metric) column groups.

    Every dataset contributes three columns (NDCG, SPM, OVER at that
    dataset's cutoffs); methods missing from a dataset render as blanks.
    """
    datasets = list(reports_by_dataset)
    methods: list[str] = []
    for reports in reports_by_dataset.values():
        for r in reports:
            if r.method not in methods:
                methods.append(r.method)
    headers = ["method"]
    for label in datasets:
        reports = reports_by_dataset[label]
        k_rank = reports[0].k_rank if reports else 20
        k_over = reports[0].k_over if reports else 2
        headers += [f"{label}:NDCG@{k_rank}", f"{label}:SPM@{k_rank}", f"{label}:OVER@{k_over}"]
    rows = []
    for method in methods:
        row = [method]
        for label in datasets:
            found = next((r for r in reports_by_dataset[label] if r.method == method), None)
            if found is None:
                row += ["-", "-", "-"]
            else:
                agg = found.aggregate
                row += [f"{agg['ndcg']:.4f}", f"{agg['spm']:.4f}", f"{agg['over']:.4f}"]
        rows.append(row)
    widths = [max(len(headers[i]), *(len(r[i]) for r in rows)) for i in range(len(headers))]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
        "  ".join("-" * w for w in widths),
    ]
    for row in rows:
        lines.append("  ".join(row[i].ljust(widths[i]) for i in range(len(row))))
    return "\n".join(lines) + "\n"


def evaluate(
    scorer,
    dataset: Dataset,
    split: str = "test",
    k_rank: int | None = None,
    k_over: int = 2,
    single_graph: bool = False,
    method: str | None = None,
) -> EvalReport:
    """Score every (graph, pair) cell of a split and aggregate the metrics.

    The scorer must expose ``score_pair(graph, pair) -> scores`` in graph
    node order. ``single_graph=True`` merges the split into one graph first
    and switches the rank cutoff default from 20 to 100.
    """
    graphs = dataset.graphs_in(split)
    if not graphs:
        raise ValueError(f"split {split!r} is empty")
    if single_graph:
        merged = merge_to_single(Dataset.create(graphs, {"train": [g.id for g in graphs]}))
        graphs = (merged,)
    if k_rank is None:
        k_rank = 100 if single_graph else 20
    report = EvalReport(
        method=method or getattr(scorer, "method_name", type(scorer).__name__),
        split=split,
        k_rank=k_rank,
        k_over=k_over,
        single_graph=single_graph,
    )
    for graph in graphs:
        for idx, pair in enumerate(graph.pairs):
            try:
                scores = scorer.score_pair(graph, pair)
            except Exception as exc:
                raise RuntimeError(
                    f"scorer failed on graph {graph.id!r} pair {idx}: {exc}"
                ) from exc
            ranked = rank_nodes(graph.node_ids, scores)
            truth = dict(zip(graph.node_ids, role_labels(graph, pair)))
            top = ranked[: min(k_rank, len(ranked))]
            spm = (
                spearman([s for _, s in top], [truth[nid] for nid, _ in top])
                if len(top) >= 2
                else float("nan")
            )
            report.cells.append(
                EvalCell(
                    graph_id=graph.id,
                    pair_index=idx,
                    ndcg=ndcg_at_k(ranked, truth, k_rank),
                    spm=spm,
                    over=overlap_at_k(ranked, truth, len(pair.gt), k_over),
                )
            )
    return report
