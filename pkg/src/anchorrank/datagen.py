"""Deterministic synthetic multi-graph corpora with planted anchor pairs.

Each graph is a set of topic clusters: dense within-cluster wiring, sparse
cross-cluster edges, and node texts drawn from a per-graph, per-topic
vocabulary. An anchor pair picks one topic, samples its anchors there, and
plants the important set as every node that is both within a hop radius of
an anchor and shares at least one vocabulary token with the anchor texts —
so neither pure structure nor pure text recovers the labels alone.

Two generator families ("A" and "B") differ in cluster wiring shape but
share the anchor-to-important rule, which is what lets a model trained on
one family transfer to the other.
"""

from __future__ import annotations

import math
import string
from collections import deque
from dataclasses import dataclass, fields
from typing import Mapping

import numpy as np

from .graphs import AnchorPair, Dataset, Edge, Graph, Node

FAMILIES = ("A", "B")


class GenerationError(ValueError):
    """The generator config is invalid or infeasible."""


@dataclass
class GenConfig:
    n_graphs: int = 100
    nodes_per_graph: int = 43
    edge_density: float = 1.8
    n_pairs_per_graph: int = 2
    n_topics: int = 4
    vocab_per_topic: int = 12
    ca_size: int = 3
    gt_radius: int = 2
    seed: int = 0
    family: str = "A"

    def validate(self) -> None:
        for name in (
            "n_graphs",
            "nodes_per_graph",
            "n_pairs_per_graph",
            "n_topics",
            "vocab_per_topic",
            "ca_size",
            "gt_radius",
        ):
            if getattr(self, name) < 1:
                raise GenerationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.edge_density <= 0:
            raise GenerationError(f"edge_density must be > 0, got {self.edge_density}")
        if self.family not in FAMILIES:
            raise GenerationError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.nodes_per_graph < self.n_topics * self.ca_size:
            raise GenerationError(
                f"infeasible config: nodes_per_graph ({self.nodes_per_graph}) cannot "
                f"host {self.n_topics} clusters of at least ca_size ({self.ca_size}) nodes"
            )

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "GenConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in doc.items() if k in known})


def _random_word(rng: np.random.Generator) -> str:
    length = int(rng.integers(4, 8))
    letters = rng.integers(0, 26, size=length)
    return "".join(string.ascii_lowercase[i] for i in letters)


def _graph_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def _undirected_adjacency(n: int, edges: list[tuple[int, int]]) -> list[set[int]]:
    adj: list[set[int]] = [set() for _ in range(n)]
    for a, b in edges:
        if a != b:
            adj[a].add(b)
            adj[b].add(a)
    return adj


def _within_radius(adj: list[set[int]], sources: list[int], radius: int) -> set[int]:
    dist = {s: 0 for s in sources}
    queue = deque(sources)
    while queue:
        u = queue.popleft()
        if dist[u] == radius:
            continue
        for v in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return set(dist)


def _generate_graph(config: GenConfig, index: int) -> Graph:
    rng = _graph_rng(config.seed, index)
    family_b = config.family == "B"

    # Graph size jitters around the configured mean; never below feasibility.
    floor = config.n_topics * config.ca_size
    spread = max(1.0, 0.15 * config.nodes_per_graph)
    n = max(floor, int(round(rng.normal(config.nodes_per_graph, spread))))

    # Cluster sizes: every topic first gets ca_size nodes, the rest spread at random.
    sizes = [config.ca_size] * config.n_topics
    for _ in range(n - sum(sizes)):
        sizes[int(rng.integers(0, config.n_topics))] += 1
    topic_of: list[int] = []
    for t, size in enumerate(sizes):
        topic_of.extend([t] * size)

    # Per-graph, per-topic disjoint vocabularies.
    vocab: list[list[str]] = []
    used: set[str] = set()
    for _ in range(config.n_topics):
        words = []
        while len(words) < config.vocab_per_topic:
            w = _random_word(rng)
            if w not in used:
                used.add(w)
                words.append(w)
        vocab.append(words)

    texts = []
    for i in range(n):
        k = int(rng.integers(3, 7))
        words = rng.choice(vocab[topic_of[i]], size=min(k, config.vocab_per_topic), replace=False)
        texts.append(" ".join(words))

    # Within-cluster wiring. Family A grows by preferential attachment,
    # family B attaches uniformly at random; B also wires across clusters
    # more aggressively.
    m_within = max(1, int(round(config.edge_density * (0.8 if family_b else 1.0))))
    cross_rate = 0.25 if family_b else 0.12
    edges: set[tuple[int, int]] = set()
    members_of: list[list[int]] = [[] for _ in range(config.n_topics)]
    for i, t in enumerate(topic_of):
        members_of[t].append(i)
    for members in members_of:
        degree = {i: 1.0 for i in members}
        for pos in range(1, len(members)):
            new = members[pos]
            existing = members[:pos]
            targets = min(m_within, len(existing))
            if family_b:
                weights = np.ones(len(existing))
            else:
                weights = np.array([degree[e] for e in existing])
            weights = weights / weights.sum()
            picks = rng.choice(len(existing), size=targets, replace=False, p=weights)
            for p in picks:
                old = existing[int(p)]
                a, b = (new, old) if rng.random() < 0.5 else (old, new)
                edges.add((a, b))
                degree[new] += 1.0
                degree[old] += 1.0
    if config.n_topics > 1:
        n_cross = int(round(cross_rate * n))
        for _ in range(n_cross):
            a = int(rng.integers(0, n))
            other = [i for i in range(n) if topic_of[i] != topic_of[a]]
            b = other[int(rng.integers(0, len(other)))]
            edges.add((a, b))

    width = max(2, len(str(n - 1)))
    ids = [f"n{i:0{width}d}" for i in range(n)]
    adj = _undirected_adjacency(n, sorted(edges))

    # Plant the anchor pairs, preferring distinct topics per pair.
    topic_order = list(rng.permutation(config.n_topics))
    pairs: list[AnchorPair] = []
    for p in range(config.n_pairs_per_graph):
        topic = topic_order[p % config.n_topics]
        members = members_of[topic]
        ca_idx = sorted(rng.choice(members, size=config.ca_size, replace=False).tolist())
        ca_tokens = set()
        for c in ca_idx:
            ca_tokens.update(texts[c].split())
        near = _within_radius(adj, list(ca_idx), config.gt_radius)
        gt_idx = set(ca_idx)
        for v in near:
            if set(texts[v].split()) & ca_tokens:
                gt_idx.add(v)
        pairs.append(AnchorPair.of((ids[c] for c in ca_idx), (ids[g] for g in gt_idx)))

    edge_objs = []
    for a, b in sorted(edges):
        label = f"r{int(rng.integers(0, 4))}" if rng.random() < 0.3 else None
        edge_objs.append(Edge(src=ids[a], dst=ids[b], label=label))
    return Graph.create(
        id=f"{config.family}{index:04d}",
        nodes=[Node(id=ids[i], text=texts[i]) for i in range(n)],
        edges=edge_objs,
        pairs=pairs,
    )


def generate(
    config: GenConfig,
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> Dataset:
    """Produce a validated dataset; identical config and seed give identical output."""
    config.validate()
    if len(split_fractions) != 3 or abs(sum(split_fractions) - 1.0) > 1e-9:
        raise GenerationError(f"split fractions must sum to 1, got {split_fractions}")
    graphs = [_generate_graph(config, i) for i in range(config.n_graphs)]
    ids = [g.id for g in graphs]
    n_train = int(round(split_fractions[0] * len(ids)))
    n_val = int(round(split_fractions[1] * len(ids)))
    split = {
        "train": ids[:n_train],
        "val": ids[n_train : n_train + n_val],
        "test": ids[n_train + n_val :],
    }
    return Dataset.create(graphs, split)


@dataclass(frozen=True)
class DatasetStats:
    n_graphs: int
    avg_edges: float
    avg_bg: float
    avg_gt: float
    avg_ca: float


def stats(dataset: Dataset) -> DatasetStats:
    """Per-graph mean sizes; anchor/important sizes average over pairs."""
    if not dataset.graphs:
        raise ValueError("dataset is empty")
    edges = [g.n_edges for g in dataset.graphs]
    bg = [g.n_nodes for g in dataset.graphs]
    gt = [len(p.gt) for g in dataset.graphs for p in g.pairs]
    ca = [len(p.ca) for g in dataset.graphs for p in g.pairs]
    return DatasetStats(
        n_graphs=len(dataset.graphs),
        avg_edges=float(np.mean(edges)),
        avg_bg=float(np.mean(bg)),
        avg_gt=float(np.mean(gt)) if gt else math.nan,
        avg_ca=float(np.mean(ca)) if ca else math.nan,
    )


def format_stats(label: str, st: DatasetStats) -> str:
    headers = ["dataset", "#edges", "#bg", "#gt", "#ca", "#graphs"]
    row = [
        label,
        f"{st.avg_edges:.1f}",
        f"{st.avg_bg:.1f}",
        f"{st.avg_gt:.1f}",
        f"{st.avg_ca:.1f}",
        str(st.n_graphs),
    ]
    widths = [max(len(h), len(r)) for h, r in zip(headers, row)]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(headers, widths)),
        "  ".join("-" * w for w in widths),
        "  ".join(r.ljust(w) for r, w in zip(row, widths)),
    ]
    return "\n".join(lines) + "\n"
