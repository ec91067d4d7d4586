/** Wire types of the anchorrank scoring service. */

export interface GraphSummary {
  id: string;
  n_nodes: number;
}

export interface GraphNode {
  id: string;
  text: string;
}

export interface GraphEdge {
  src: string;
  dst: string;
  label: string | null;
}

export interface GraphDetail {
  id: string;
  nodes: GraphNode[];
  edges: GraphEdge[];
}

export interface RankedEntry {
  node: string;
  score: number;
}

export interface ScoreRequest {
  graph_id: string;
  ca: string[];
  top_k: number;
}

export interface ScoreResponse {
  graph_id: string;
  ca: string[];
  ranking: RankedEntry[];
  baseline_ppr: RankedEntry[];
}
