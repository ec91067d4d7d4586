"""Classical random-walk baselines and reference scorers.

PageRank runs power iteration over the directed edges with dangling mass
spread uniformly; the personalized variant teleports to the anchor set
instead of the full vertex set. Both are exposed as scikit-learn style
scorers compatible with :func:`anchorrank.metrics.evaluate`.
"""

from __future__ import annotations

import warnings
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .graphs import AnchorPair, Graph, role_labels
from .validation import check_ca


def _edge_arrays(graph: Graph) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distinct (src, dst) index pairs plus per-source out-degrees."""
    pairs = sorted({(graph.id_to_index[e.src], graph.id_to_index[e.dst]) for e in graph.edges})
    src = np.array([p[0] for p in pairs], dtype=np.intp)
    dst = np.array([p[1] for p in pairs], dtype=np.intp)
    out_deg = np.bincount(src, minlength=graph.n_nodes).astype(np.float64)
    return src, dst, out_deg


def _power_iteration(
    graph: Graph,
    teleport: np.ndarray,
    damping: float,
    tol: float,
    max_iter: int,
) -> tuple[np.ndarray, bool]:
    n = graph.n_nodes
    src, dst, out_deg = _edge_arrays(graph)
    has_out = out_deg > 0
    inv_deg = np.where(has_out, 1.0 / np.maximum(out_deg, 1.0), 0.0)
    x = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        contrib = x * inv_deg
        new_x = np.zeros(n)
        if len(src):
            np.add.at(new_x, dst, contrib[src])
        dangling = x[~has_out].sum()
        new_x += dangling / n
        new_x = damping * new_x + (1.0 - damping) * teleport
        new_x /= new_x.sum()
        delta = np.abs(new_x - x).sum()
        x = new_x
        if delta < tol:
            return x, True
    return x, False


def pagerank(
    graph: Graph,
    damping: float = 0.85,
    tol: float = 1e-10,
    max_iter: int = 1000,
) -> tuple[np.ndarray, bool]:
    """L1-normalized PageRank scores in graph node order, plus a convergence flag."""
    if graph.n_nodes == 0:
        raise ValueError("graph has no nodes")
    teleport = np.full(graph.n_nodes, 1.0 / graph.n_nodes)
    scores, converged = _power_iteration(graph, teleport, damping, tol, max_iter)
    if not converged:
        warnings.warn(
            f"pagerank did not converge on graph {graph.id!r} within {max_iter} iterations",
            RuntimeWarning,
            stacklevel=2,
        )
    return scores, converged


def personalized_pagerank(
    graph: Graph,
    ca: Iterable[str],
    damping: float = 0.85,
    tol: float = 1e-10,
    max_iter: int = 1000,
) -> tuple[np.ndarray, bool]:
    """PageRank with the teleport vector uniform over the anchor set."""
    ca_ids = check_ca(graph, ca)
    teleport = np.zeros(graph.n_nodes)
    for c in ca_ids:
        teleport[graph.id_to_index[c]] = 1.0 / len(ca_ids)
    scores, converged = _power_iteration(graph, teleport, damping, tol, max_iter)
    if not converged:
        warnings.warn(
            f"personalized pagerank did not converge on graph {graph.id!r}",
            RuntimeWarning,
            stacklevel=2,
        )
    return scores, converged


class PairScorerMixin:
    """Adapter so anchor-aware and anchor-blind scorers share one protocol."""

    def score_pair(self, graph: Graph, pair: AnchorPair) -> np.ndarray:
        return self.score_nodes(graph, pair.ca_sorted)


class PageRankScorer(BaseEstimator, PairScorerMixin):
    """Anchor-blind structural baseline."""

    method_name = "pagerank"

    def __init__(self, damping: float = 0.85, tol: float = 1e-10, max_iter: int = 1000):
        self.damping = damping
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, dataset=None, y=None) -> "PageRankScorer":
        return self

    def score_nodes(self, graph: Graph, ca: Sequence[str] | None = None) -> np.ndarray:
        scores, _ = pagerank(graph, self.damping, self.tol, self.max_iter)
        return scores


class PersonalizedPageRankScorer(BaseEstimator, PairScorerMixin):
    """Anchor-aware structural baseline (teleport restricted to the anchors)."""

    method_name = "ppr"

    def __init__(self, damping: float = 0.85, tol: float = 1e-10, max_iter: int = 1000):
        self.damping = damping
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, dataset=None, y=None) -> "PersonalizedPageRankScorer":
        return self

    def score_nodes(self, graph: Graph, ca: Sequence[str]) -> np.ndarray:
        scores, _ = personalized_pagerank(graph, ca, self.damping, self.tol, self.max_iter)
        return scores


class OracleScorer(BaseEstimator):
    """Returns the ground-truth importance itself; upper bound for metrics."""

    method_name = "oracle"

    def fit(self, dataset=None, y=None) -> "OracleScorer":
        return self

    def score_pair(self, graph: Graph, pair: AnchorPair) -> np.ndarray:
        return role_labels(graph, pair)
