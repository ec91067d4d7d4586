"""Graph and multi-graph dataset model with JSON-lines I/O.

A :class:`Graph` is a set of text-labelled nodes, directed edges, and a list
of anchor pairs. Each :class:`AnchorPair` names an anchor set (``ca``) and
the nodes considered important relative to it (``gt``), with the inclusion
chain ``ca <= gt <= nodes`` enforced on load. Graphs and datasets are
immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

SPLIT_NAMES = ("train", "val", "test")


class GraphValidationError(ValueError):
    """A graph or dataset violates a structural invariant."""


class DatasetParseError(ValueError):
    """A dataset or split file could not be parsed."""


@dataclass(frozen=True)
class Node:
    id: str
    text: str = ""


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    label: str | None = None


@dataclass(frozen=True)
class AnchorPair:
    """One (anchor set, important set) labelling of a graph."""

    ca: frozenset[str]
    gt: frozenset[str]

    @classmethod
    def of(cls, ca: Iterable[str], gt: Iterable[str]) -> "AnchorPair":
        return cls(ca=frozenset(ca), gt=frozenset(gt))

    @property
    def ca_sorted(self) -> tuple[str, ...]:
        return tuple(sorted(self.ca))

    @property
    def gt_sorted(self) -> tuple[str, ...]:
        return tuple(sorted(self.gt))


@dataclass(frozen=True)
class Graph:
    id: str
    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]
    pairs: tuple[AnchorPair, ...] = ()
    importance: Mapping[str, float] | None = None

    @classmethod
    def create(
        cls,
        id: str,
        nodes: Sequence[Node],
        edges: Sequence[Edge],
        pairs: Sequence[AnchorPair] = (),
        importance: Mapping[str, float] | None = None,
    ) -> "Graph":
        """Build a validated graph; duplicate edges are dropped, first wins."""
        seen: set[Edge] = set()
        deduped = []
        for e in edges:
            if e not in seen:
                seen.add(e)
                deduped.append(e)
        graph = cls(
            id=id,
            nodes=tuple(nodes),
            edges=tuple(deduped),
            pairs=tuple(pairs),
            importance=dict(importance) if importance is not None else None,
        )
        graph.validate()
        return graph

    def validate(self) -> None:
        if not self.id:
            raise GraphValidationError("graph id must be non-empty")
        ids = [n.id for n in self.nodes]
        id_set = set(ids)
        if len(id_set) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise GraphValidationError(
                f"graph {self.id!r}: duplicate node ids {dupes}"
            )
        if any(not i for i in ids):
            raise GraphValidationError(f"graph {self.id!r}: empty node id")
        for e in self.edges:
            if e.src not in id_set or e.dst not in id_set:
                raise GraphValidationError(
                    f"graph {self.id!r}: edge {e.src!r}->{e.dst!r} references "
                    "a missing node"
                )
        for k, pair in enumerate(self.pairs):
            if not pair.ca:
                raise GraphValidationError(
                    f"graph {self.id!r}: pair {k} has an empty anchor set"
                )
            if not pair.ca <= pair.gt:
                raise GraphValidationError(
                    f"graph {self.id!r}: pair {k} violates ca <= gt "
                    f"(offending ids {sorted(pair.ca - pair.gt)})"
                )
            if not pair.gt <= id_set:
                raise GraphValidationError(
                    f"graph {self.id!r}: pair {k} has gt ids outside the graph "
                    f"({sorted(pair.gt - id_set)})"
                )
        if self.importance is not None:
            missing = id_set - set(self.importance)
            if missing:
                raise GraphValidationError(
                    f"graph {self.id!r}: importance map misses nodes "
                    f"{sorted(missing)[:5]}"
                )
            bad = [i for i, v in self.importance.items() if v < 0]
            if bad:
                raise GraphValidationError(
                    f"graph {self.id!r}: negative importance for {sorted(bad)[:5]}"
                )

    # Derived read-only views; cached_property is safe on frozen dataclasses.

    @cached_property
    def node_ids(self) -> tuple[str, ...]:
        return tuple(n.id for n in self.nodes)

    @cached_property
    def id_to_index(self) -> dict[str, int]:
        return {n.id: i for i, n in enumerate(self.nodes)}

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def out_neighbors(self) -> tuple[tuple[int, ...], ...]:
        """Distinct successors per node index (self-loops kept)."""
        idx = self.id_to_index
        out: list[set[int]] = [set() for _ in self.nodes]
        for e in self.edges:
            out[idx[e.src]].add(idx[e.dst])
        return tuple(tuple(sorted(s)) for s in out)

    @cached_property
    def und_neighbors(self) -> tuple[tuple[int, ...], ...]:
        """Undirected adjacency (self-loops dropped)."""
        idx = self.id_to_index
        und: list[set[int]] = [set() for _ in self.nodes]
        for e in self.edges:
            a, b = idx[e.src], idx[e.dst]
            if a != b:
                und[a].add(b)
                und[b].add(a)
        return tuple(tuple(sorted(s)) for s in und)

    def node_text(self, node_id: str) -> str:
        return self.nodes[self.id_to_index[node_id]].text

    def to_dict(self) -> dict:
        doc: dict = {
            "id": self.id,
            "nodes": [{"id": n.id, "text": n.text} for n in self.nodes],
            "edges": [
                {"src": e.src, "dst": e.dst}
                if e.label is None
                else {"src": e.src, "dst": e.dst, "label": e.label}
                for e in self.edges
            ],
            "pairs": [
                {"ca": list(p.ca_sorted), "gt": list(p.gt_sorted)}
                for p in self.pairs
            ],
        }
        if self.importance is not None:
            doc["importance"] = {k: self.importance[k] for k in sorted(self.importance)}
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Graph":
        try:
            nodes = [Node(id=n["id"], text=n.get("text", "")) for n in doc["nodes"]]
            edges = [
                Edge(src=e["src"], dst=e["dst"], label=e.get("label"))
                for e in doc.get("edges", [])
            ]
            pairs = [AnchorPair.of(p["ca"], p["gt"]) for p in doc.get("pairs", [])]
            importance = doc.get("importance")
            return cls.create(
                id=doc["id"],
                nodes=nodes,
                edges=edges,
                pairs=pairs,
                importance=importance,
            )
        except (KeyError, TypeError) as exc:
            raise DatasetParseError(f"malformed graph object: {exc}") from exc


@dataclass(frozen=True)
class Dataset:
    """A collection of graphs plus a train/val/test assignment."""

    graphs: tuple[Graph, ...]
    split: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    @classmethod
    def create(
        cls,
        graphs: Sequence[Graph],
        split: Mapping[str, Sequence[str]] | None = None,
    ) -> "Dataset":
        if split is None:
            split = {"train": [g.id for g in graphs], "val": [], "test": []}
        norm = {name: tuple(split.get(name, ())) for name in SPLIT_NAMES}
        ds = cls(graphs=tuple(graphs), split=norm)
        ds.validate()
        return ds

    def validate(self) -> None:
        ids = [g.id for g in self.graphs]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise GraphValidationError(f"duplicate graph ids {dupes}")
        seen: set[str] = set()
        for name in SPLIT_NAMES:
            members = self.split.get(name, ())
            overlap = seen & set(members)
            if overlap:
                raise GraphValidationError(
                    f"splits overlap on graph ids {sorted(overlap)}"
                )
            unknown = set(members) - set(ids)
            if unknown:
                raise GraphValidationError(
                    f"split {name!r} references unknown graphs {sorted(unknown)}"
                )
            seen |= set(members)
        for g in self.graphs:
            g.validate()

    @cached_property
    def by_id(self) -> dict[str, Graph]:
        return {g.id: g for g in self.graphs}

    @property
    def n_graphs(self) -> int:
        return len(self.graphs)

    def graphs_in(self, split_name: str) -> tuple[Graph, ...]:
        if split_name not in SPLIT_NAMES:
            raise KeyError(f"unknown split {split_name!r}; expected one of {SPLIT_NAMES}")
        return tuple(self.by_id[i] for i in self.split.get(split_name, ()))


def load_dataset(path: str | Path, split_path: str | Path | None = None) -> Dataset:
    """Load a JSON-lines dataset file, optionally with a split file.

    Without a split file every graph lands in the train split.
    """
    path = Path(path)
    graphs: list[Graph] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetParseError(
                    f"{path}:{lineno}: invalid JSON ({exc.msg})"
                ) from exc
            try:
                graphs.append(Graph.from_dict(doc))
            except (DatasetParseError, GraphValidationError) as exc:
                raise type(exc)(f"{path}:{lineno}: {exc}") from exc
    split = load_split(split_path) if split_path is not None else None
    return Dataset.create(graphs, split)


def load_split(path: str | Path) -> dict[str, tuple[str, ...]]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetParseError(f"{path}: invalid JSON ({exc.msg})") from exc
    if not isinstance(doc, dict):
        raise DatasetParseError(f"{path}: split file must be a JSON object")
    return {name: tuple(doc.get(name, ())) for name in SPLIT_NAMES}


def save_dataset(
    dataset: Dataset,
    path: str | Path,
    split_path: str | Path | None = None,
) -> None:
    """Write the JSON-lines dataset (and optionally the split file)."""
    path = Path(path)
    path.write_text(dataset_to_jsonl(dataset), encoding="utf-8")
    if split_path is not None:
        Path(split_path).write_text(split_to_json(dataset.split), encoding="utf-8")


def dataset_to_jsonl(dataset: Dataset) -> str:
    lines = [json.dumps(g.to_dict(), ensure_ascii=False) for g in dataset.graphs]
    return "".join(line + "\n" for line in lines)


def split_to_json(split: Mapping[str, Sequence[str]]) -> str:
    doc = {name: list(split.get(name, ())) for name in SPLIT_NAMES}
    return json.dumps(doc, indent=2) + "\n"


def role_labels(graph: Graph, pair: AnchorPair) -> np.ndarray:
    """Per-node importance targets in graph node order.

    Continuous importance passes through verbatim when the graph carries it;
    otherwise membership in ``pair.gt`` yields a binary 0/1 vector.
    """
    if pair not in graph.pairs:
        raise GraphValidationError(
            f"pair with ca={sorted(pair.ca)} is not registered on graph {graph.id!r}"
        )
    if graph.importance is not None:
        return np.array([graph.importance[n.id] for n in graph.nodes], dtype=np.float64)
    return np.array([1.0 if n.id in pair.gt else 0.0 for n in graph.nodes])


def merge_to_single(dataset: Dataset, merged_id: str = "merged") -> Graph:
    """Collapse every graph of the dataset into one graph.

    Node ids colliding across source graphs are rewritten to
    ``"<graphId>/<nodeId>"``; unique ids are kept as-is. Edges and anchor
    pairs are carried over with remapped endpoints. The merged importance
    map is present only when every source graph has one.
    """
    if not dataset.graphs:
        raise GraphValidationError("cannot merge an empty dataset")
    if len(dataset.graphs) == 1:
        return dataset.graphs[0]

    counts: dict[str, int] = {}
    for g in dataset.graphs:
        for nid in g.node_ids:
            counts[nid] = counts.get(nid, 0) + 1

    def remap(g: Graph, nid: str) -> str:
        return f"{g.id}/{nid}" if counts[nid] > 1 else nid

    nodes: list[Node] = []
    edges: list[Edge] = []
    pairs: list[AnchorPair] = []
    importance: dict[str, float] = {}
    all_have_importance = all(g.importance is not None for g in dataset.graphs)
    for g in dataset.graphs:
        for n in g.nodes:
            nodes.append(Node(id=remap(g, n.id), text=n.text))
        for e in g.edges:
            edges.append(Edge(src=remap(g, e.src), dst=remap(g, e.dst), label=e.label))
        for p in g.pairs:
            pairs.append(
                AnchorPair.of((remap(g, i) for i in p.ca), (remap(g, i) for i in p.gt))
            )
        if all_have_importance:
            for nid, v in g.importance.items():  # type: ignore[union-attr]
                importance[remap(g, nid)] = v
    return Graph.create(
        id=merged_id,
        nodes=nodes,
        edges=edges,
        pairs=pairs,
        importance=importance if all_have_importance else None,
    )
