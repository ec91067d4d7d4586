"""Per-node features relative to an anchor set.

Two kinds of features feed the network: a 5-statistic structural vector
(reachability counts plus max/min/avg hop distance to the anchor nodes) and
a fixed-width semantic embedding of the node text concatenated with the
anchor texts, produced by a pluggable deterministic provider.
"""

from __future__ import annotations

import abc
import hashlib
import json
import math
import re
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .graphs import Graph

SEP = " [SEP] "
_TOKEN_RE = re.compile(r"[\w']+")


class ProviderError(RuntimeError):
    """A semantic provider could not embed the requested text."""


@dataclass(frozen=True)
class StructuralFeatures:
    """The raw structural statistics of one node w.r.t. one anchor set."""

    descendant_count: int
    direct_child_count: int
    max_steps_to_ca: float
    min_steps_to_ca: float
    avg_steps_to_ca: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.descendant_count,
                self.direct_child_count,
                self.max_steps_to_ca,
                self.min_steps_to_ca,
                self.avg_steps_to_ca,
            ],
            dtype=np.float64,
        )


def _bfs_distances(adjacency: Sequence[Sequence[int]], start: int) -> list[int]:
    """Hop distances from ``start``; -1 marks unreachable nodes."""
    dist = [-1] * len(adjacency)
    dist[start] = 0
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in adjacency[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def _reachable_count(graph: Graph, start: int) -> int:
    """Distinct nodes reachable from ``start`` along edge direction, excluding it."""
    seen = {start}
    queue = deque([start])
    count = 0
    while queue:
        u = queue.popleft()
        for v in graph.out_neighbors[u]:
            if v not in seen:
                seen.add(v)
                count += 1
                queue.append(v)
    return count


def structural_features(graph: Graph, ca: Iterable[str], node: str) -> StructuralFeatures:
    """Compute the 5 structural statistics of ``node`` relative to ``ca``.

    Distances use the undirected view of the graph; an anchor that cannot be
    reached contributes the sentinel ``|V|``. Reachability counts follow edge
    direction.
    """
    ca_ids = sorted(set(ca))
    if not ca_ids:
        raise ValueError("anchor set must be non-empty")
    unknown = [i for i in ca_ids + [node] if i not in graph.id_to_index]
    if unknown:
        raise KeyError(f"unknown node ids {unknown} in graph {graph.id!r}")
    idx = graph.id_to_index[node]
    dist = _bfs_distances(graph.und_neighbors, idx)
    sentinel = graph.n_nodes
    steps = [
        dist[graph.id_to_index[c]] if dist[graph.id_to_index[c]] >= 0 else sentinel
        for c in ca_ids
    ]
    children = len(set(graph.out_neighbors[idx]) - {idx})
    return StructuralFeatures(
        descendant_count=_reachable_count(graph, idx),
        direct_child_count=children,
        max_steps_to_ca=float(max(steps)),
        min_steps_to_ca=float(min(steps)),
        avg_steps_to_ca=float(sum(steps) / len(steps)),
    )


def structural_feature_matrix(graph: Graph, ca: Iterable[str]) -> np.ndarray:
    """Raw structural feature rows for every node, in graph node order.

    Equivalent to calling :func:`structural_features` per node but runs one
    BFS per anchor instead of one per node.
    """
    ca_ids = sorted(set(ca))
    if not ca_ids:
        raise ValueError("anchor set must be non-empty")
    unknown = [i for i in ca_ids if i not in graph.id_to_index]
    if unknown:
        raise KeyError(f"unknown node ids {unknown} in graph {graph.id!r}")
    n = graph.n_nodes
    sentinel = float(n)
    dists = np.empty((len(ca_ids), n), dtype=np.float64)
    for row, c in enumerate(ca_ids):
        d = _bfs_distances(graph.und_neighbors, graph.id_to_index[c])
        dists[row] = [x if x >= 0 else sentinel for x in d]
    out = np.empty((n, 5), dtype=np.float64)
    for i in range(n):
        out[i, 0] = _reachable_count(graph, i)
        out[i, 1] = len(set(graph.out_neighbors[i]) - {i})
    out[:, 2] = dists.max(axis=0)
    out[:, 3] = dists.min(axis=0)
    out[:, 4] = dists.mean(axis=0)
    return out


def normalize_structural(features: StructuralFeatures, graph_size: int) -> np.ndarray:
    """Map raw statistics to a bounded 5-vector: counts by ln(1+x), distances by 1/|V|."""
    if graph_size < 1:
        raise ValueError(f"graph_size must be >= 1, got {graph_size}")
    return normalize_structural_matrix(features.as_array()[None, :], graph_size)[0]


def normalize_structural_matrix(raw: np.ndarray, graph_size: int) -> np.ndarray:
    if graph_size < 1:
        raise ValueError(f"graph_size must be >= 1, got {graph_size}")
    out = np.empty_like(raw, dtype=np.float64)
    out[:, :2] = np.log1p(raw[:, :2])
    out[:, 2:] = raw[:, 2:] / float(graph_size)
    return out


class EmbeddingProvider(abc.ABC):
    """Deterministic text-to-vector encoder.

    Identical input text must yield byte-identical vectors; providers are
    read-only and shareable across threads.
    """

    name: str
    dim: int

    @abc.abstractmethod
    def embed(self, text: str) -> np.ndarray:
        """Return a float64 vector of length ``dim`` for ``text``."""

    def spec(self) -> dict:
        """JSON-serializable description sufficient to rebuild the provider."""
        return {"kind": self.name, "dim": self.dim}


def semantic_embed(
    provider: EmbeddingProvider, node_text: str, ca_texts: Sequence[str]
) -> np.ndarray:
    """Embed a node's text in the context of the anchor texts.

    The provider sees the node text and every anchor text joined by a
    separator token, so anchor content conditions the node representation.
    """
    if not ca_texts:
        raise ValueError("ca_texts must be non-empty")
    vec = provider.embed(SEP.join([node_text, *ca_texts]))
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (provider.dim,):
        raise ProviderError(
            f"provider {provider.name!r} returned shape {vec.shape}, "
            f"expected ({provider.dim},)"
        )
    if not np.isfinite(vec).all():
        raise ProviderError(f"provider {provider.name!r} returned non-finite values")
    return vec


class HashEmbeddingProvider(EmbeddingProvider):
    """Hashed bag-of-tokens stand-in for a pretrained sentence encoder.

    Tokens are hashed into ``dim/2`` signed buckets. The first half of the
    output summarizes the first half of the token sequence and the second
    half the rest, so the vector keeps the two-positional-summaries shape of
    first/last-token pooling. Each half is L2-normalized unless empty.
    """

    name = "hash"

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 8 or dim % 2 != 0:
            raise ValueError(f"dim must be an even integer >= 8, got {dim}")
        self.dim = dim
        self.seed = int(seed)
        self._salt = self.seed.to_bytes(8, "little", signed=True)

    def spec(self) -> dict:
        return {"kind": self.name, "dim": self.dim, "seed": self.seed}

    def bucket_and_sign(self, token: str) -> tuple[int, float]:
        h = hashlib.blake2b(token.encode("utf-8"), digest_size=8, salt=self._salt)
        value = int.from_bytes(h.digest(), "little")
        bucket = value % (self.dim // 2)
        sign = 1.0 if (value >> 63) & 1 else -1.0
        return bucket, sign

    def _bag(self, tokens: Sequence[str]) -> np.ndarray:
        half = np.zeros(self.dim // 2, dtype=np.float64)
        for tok in tokens:
            bucket, sign = self.bucket_and_sign(tok)
            half[bucket] += sign
        norm = math.sqrt(float(half @ half))
        if norm > 0.0:
            half /= norm
        return half

    def embed(self, text: str) -> np.ndarray:
        tokens = _TOKEN_RE.findall(text.lower())
        cut = (len(tokens) + 1) // 2
        return np.concatenate([self._bag(tokens[:cut]), self._bag(tokens[cut:])])


class FileEmbeddingProvider(EmbeddingProvider):
    """Serves precomputed vectors from a JSON map of text -> vector."""

    name = "file"

    def __init__(self, vectors: Mapping[str, Sequence[float]], dim: int, path: str = ""):
        self.dim = int(dim)
        self.path = path
        table: dict[str, np.ndarray] = {}
        for key, vec in vectors.items():
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (self.dim,):
                raise ProviderError(
                    f"embedding for key {key!r} has length {arr.shape}, expected {self.dim}"
                )
            if not np.isfinite(arr).all():
                raise ProviderError(f"embedding for key {key!r} is not finite")
            table[key] = arr
        self._table = table

    @classmethod
    def load(cls, path: str | Path, dim: int) -> "FileEmbeddingProvider":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(doc, dict):
            raise ProviderError(f"{path}: embedding file must be a JSON object")
        return cls(doc, dim=dim, path=str(path))

    def spec(self) -> dict:
        return {"kind": self.name, "dim": self.dim, "path": self.path}

    def embed(self, text: str) -> np.ndarray:
        try:
            return self._table[text].copy()
        except KeyError:
            raise ProviderError(f"no stored embedding for key {text!r}") from None


def provider_from_spec(spec: Mapping) -> EmbeddingProvider:
    kind = spec.get("kind")
    if kind == "hash":
        return HashEmbeddingProvider(dim=int(spec["dim"]), seed=int(spec.get("seed", 0)))
    if kind == "file":
        return FileEmbeddingProvider.load(spec["path"], dim=int(spec["dim"]))
    raise ValueError(f"unknown provider kind {kind!r}")


def default_hash_provider(dim: int = 64, seed: int = 0) -> HashEmbeddingProvider:
    """The built-in deterministic provider used when no external vectors exist."""
    return HashEmbeddingProvider(dim=dim, seed=seed)


def load_file_provider(path: str | Path, dim: int) -> FileEmbeddingProvider:
    """Provider serving vectors precomputed offline (e.g. by a real encoder)."""
    return FileEmbeddingProvider.load(path, dim=dim)


def semantic_matrix(
    graph: Graph, ca_ids: Sequence[str], provider: EmbeddingProvider
) -> np.ndarray:
    """Anchor-conditioned embedding rows for every node, in graph node order."""
    ca_sorted = sorted(set(ca_ids))
    ca_texts = [graph.node_text(c) for c in ca_sorted]
    rows = [semantic_embed(provider, n.text, ca_texts) for n in graph.nodes]
    return np.stack(rows, axis=0)
