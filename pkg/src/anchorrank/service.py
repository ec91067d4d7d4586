"""Read-only HTTP scoring service.

Endpoints:

* ``GET /graphs`` — graph ids with node counts
* ``GET /graphs/{id}`` — nodes and edges of one graph
* ``POST /score`` — body ``{"graph_id", "ca", "top_k"}``; returns both the
  model ranking and the personalized-pagerank ranking for comparison

The service never mutates the checkpoint or the dataset; identical requests
give identical responses. A static frontend build can be mounted at /ui.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .baselines import personalized_pagerank
from .graphs import Dataset
from .metrics import rank_nodes
from .ranker import AnchorRanker


class ScoreRequest(BaseModel):
    graph_id: str
    ca: list[str] = Field(default_factory=list)
    top_k: int = 20


def create_app(
    ranker: AnchorRanker,
    dataset: Dataset,
    ppr_damping: float = 0.85,
    ui_dir: str | None = None,
) -> FastAPI:
    app = FastAPI(title="anchorrank scoring service", version="0.1.0")

    @app.get("/graphs")
    def list_graphs() -> list[dict]:
        return [{"id": g.id, "n_nodes": g.n_nodes} for g in dataset.graphs]

    @app.get("/graphs/{graph_id}")
    def get_graph(graph_id: str) -> dict:
        graph = dataset.by_id.get(graph_id)
        if graph is None:
            raise HTTPException(status_code=404, detail=f"unknown graph {graph_id!r}")
        return {
            "id": graph.id,
            "nodes": [{"id": n.id, "text": n.text} for n in graph.nodes],
            "edges": [{"src": e.src, "dst": e.dst, "label": e.label} for e in graph.edges],
        }

    @app.post("/score")
    def score(req: ScoreRequest) -> dict:
        graph = dataset.by_id.get(req.graph_id)
        if graph is None:
            raise HTTPException(status_code=404, detail=f"unknown graph {req.graph_id!r}")
        if not req.ca:
            raise HTTPException(status_code=400, detail="CA must be non-empty")
        unknown = [c for c in req.ca if c not in graph.id_to_index]
        if unknown:
            raise HTTPException(status_code=400, detail=f"unknown CA nodes {unknown}")
        if req.top_k < 1:
            raise HTTPException(status_code=400, detail="top_k must be >= 1")
        ranked = ranker.predict(graph, req.ca, top_k=req.top_k)
        ppr_scores, _ = personalized_pagerank(graph, req.ca, damping=ppr_damping)
        ppr_ranked = rank_nodes(graph.node_ids, ppr_scores)[: req.top_k]
        return {
            "graph_id": graph.id,
            "ca": sorted(set(req.ca)),
            "ranking": [{"node": nid, "score": s} for nid, s in ranked],
            "baseline_ppr": [{"node": nid, "score": s} for nid, s in ppr_ranked],
        }

    if ui_dir and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app
