"""Input validation helpers shared by the estimators and the service."""

from __future__ import annotations

from typing import Iterable

from sklearn.exceptions import NotFittedError

from .graphs import Dataset, Graph


def check_fitted(estimator, attribute: str) -> None:
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit() or load()"
        )


def check_ca(graph: Graph, ca: Iterable[str]) -> tuple[str, ...]:
    """Validate an anchor set against a graph; returns the sorted ids."""
    ca_ids = tuple(sorted(set(ca)))
    if not ca_ids:
        raise ValueError("anchor set must be non-empty")
    unknown = [c for c in ca_ids if c not in graph.id_to_index]
    if unknown:
        raise KeyError(f"anchor ids {unknown} not in graph {graph.id!r}")
    return ca_ids


def check_graph(graph: Graph) -> Graph:
    graph.validate()
    return graph


def check_dataset(dataset: Dataset, require_split: str | None = None) -> Dataset:
    dataset.validate()
    if require_split is not None and not dataset.split.get(require_split):
        raise ValueError(f"dataset has an empty {require_split!r} split")
    return dataset


def check_top_k(top_k: int) -> int:
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    return top_k
