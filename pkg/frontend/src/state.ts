/** Pure state machine of the explorer.
 *
 * Every transition returns a fresh state derived only from the previous
 * state, the user action, and server responses — there is no hidden cache,
 * so switching graphs provably clears everything downstream. Score
 * responses carry the request sequence number that produced them; anything
 * older than the column's latest request is dropped on arrival.
 */

import type { GraphDetail, GraphSummary, RankedEntry, ScoreResponse } from "./types.js";

export type Column = "A" | "B";
export type RankingView = "model" | "ppr";

export interface ColumnState {
  anchors: string[];
  /** sequence number of the newest request issued for this column */
  requestSeq: number;
  /** sequence number the current response belongs to */
  responseSeq: number;
  response: ScoreResponse | null;
  pending: boolean;
  error: string | null;
}

export interface ExplorerState {
  graphs: GraphSummary[];
  graphsError: string | null;
  selectedGraph: GraphDetail | null;
  graphError: string | null;
  nodeFilter: string;
  topK: number;
  view: RankingView;
  compareEnabled: boolean;
  columns: Record<Column, ColumnState>;
}

const emptyColumn = (): ColumnState => ({
  anchors: [],
  requestSeq: 0,
  responseSeq: 0,
  response: null,
  pending: false,
  error: null,
});

export function initialState(): ExplorerState {
  return {
    graphs: [],
    graphsError: null,
    selectedGraph: null,
    graphError: null,
    nodeFilter: "",
    topK: 20,
    view: "model",
    compareEnabled: false,
    columns: { A: emptyColumn(), B: emptyColumn() },
  };
}

export function withGraphList(state: ExplorerState, graphs: GraphSummary[]): ExplorerState {
  return { ...state, graphs, graphsError: null };
}

export function withGraphListError(state: ExplorerState, message: string): ExplorerState {
  return { ...state, graphsError: message };
}

/** Selecting a graph resets anchors, responses, and errors of both columns. */
export function withSelectedGraph(state: ExplorerState, graph: GraphDetail): ExplorerState {
  return {
    ...state,
    selectedGraph: graph,
    graphError: null,
    nodeFilter: "",
    columns: { A: emptyColumn(), B: emptyColumn() },
  };
}

export function withGraphError(state: ExplorerState, message: string): ExplorerState {
  return { ...state, graphError: message };
}

export function withNodeFilter(state: ExplorerState, filter: string): ExplorerState {
  return { ...state, nodeFilter: filter };
}

export function withTopK(state: ExplorerState, topK: number): ExplorerState {
  if (!Number.isInteger(topK) || topK < 1) {
    throw new RangeError(`top_k must be a positive integer, got ${topK}`);
  }
  return { ...state, topK };
}

export function withView(state: ExplorerState, view: RankingView): ExplorerState {
  return { ...state, view };
}

export function withCompareEnabled(state: ExplorerState, enabled: boolean): ExplorerState {
  const columns = enabled
    ? state.columns
    : { A: state.columns.A, B: emptyColumn() };
  return { ...state, compareEnabled: enabled, columns };
}

export function toggleAnchor(state: ExplorerState, column: Column, nodeId: string): ExplorerState {
  const graph = state.selectedGraph;
  if (!graph) {
    throw new Error("no graph selected");
  }
  if (!graph.nodes.some((n) => n.id === nodeId)) {
    throw new Error(`node ${nodeId} is not part of graph ${graph.id}`);
  }
  const current = state.columns[column];
  const anchors = current.anchors.includes(nodeId)
    ? current.anchors.filter((a) => a !== nodeId)
    : [...current.anchors, nodeId].sort();
  return {
    ...state,
    columns: { ...state.columns, [column]: { ...current, anchors, error: null } },
  };
}

/** Marks a new in-flight request and returns its sequence number. */
export function beginScore(state: ExplorerState, column: Column): [ExplorerState, number] {
  const current = state.columns[column];
  const seq = current.requestSeq + 1;
  const next = {
    ...state,
    columns: {
      ...state.columns,
      [column]: { ...current, requestSeq: seq, pending: true, error: null },
    },
  };
  return [next, seq];
}

/** Applies a response unless a newer request has been issued since. */
export function applyScoreResponse(
  state: ExplorerState,
  column: Column,
  seq: number,
  response: ScoreResponse,
): ExplorerState {
  const current = state.columns[column];
  if (seq < current.requestSeq || seq <= current.responseSeq) {
    return state; // stale: a newer request owns this column now
  }
  return {
    ...state,
    columns: {
      ...state.columns,
      [column]: { ...current, response, responseSeq: seq, pending: false, error: null },
    },
  };
}

export function applyScoreError(
  state: ExplorerState,
  column: Column,
  seq: number,
  message: string,
): ExplorerState {
  const current = state.columns[column];
  if (seq < current.requestSeq) {
    return state;
  }
  return {
    ...state,
    columns: {
      ...state.columns,
      [column]: { ...current, pending: false, error: message },
    },
  };
}

export interface RankingRow {
  rank: number;
  node: string;
  /** server-reported score, rendered verbatim */
  score: number;
  isAnchor: boolean;
}

/** The rows a column displays: the chosen ranking, scores untouched. */
export function rankingRows(
  response: ScoreResponse | null,
  view: RankingView,
  anchors: string[],
): RankingRow[] {
  if (!response) {
    return [];
  }
  const list: RankedEntry[] = view === "model" ? response.ranking : response.baseline_ppr;
  const anchorSet = new Set(anchors);
  return list.map((entry, i) => ({
    rank: i + 1,
    node: entry.node,
    score: entry.score,
    isAnchor: anchorSet.has(entry.node),
  }));
}

export function filteredNodes(state: ExplorerState): { id: string; text: string }[] {
  if (!state.selectedGraph) {
    return [];
  }
  const needle = state.nodeFilter.trim().toLowerCase();
  const nodes = state.selectedGraph.nodes;
  if (!needle) {
    return nodes;
  }
  return nodes.filter(
    (n) => n.id.toLowerCase().includes(needle) || n.text.toLowerCase().includes(needle),
  );
}
