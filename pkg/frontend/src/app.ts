/** DOM wiring: renders the explorer state and maps clicks to transitions.
 *
 * The store owns one ExplorerState; every mutation goes through the pure
 * transitions in state.ts followed by a full re-render, so what is on
 * screen is always a function of (server responses, user actions).
 */

import { ApiClient, ApiError } from "./api.js";
import {
  applyScoreError,
  applyScoreResponse,
  beginScore,
  Column,
  ExplorerState,
  filteredNodes,
  initialState,
  rankingRows,
  toggleAnchor,
  withCompareEnabled,
  withGraphError,
  withGraphList,
  withGraphListError,
  withNodeFilter,
  withSelectedGraph,
  withTopK,
  withView,
} from "./state.js";

function esc(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export class ExplorerApp {
  state: ExplorerState = initialState();

  constructor(
    private readonly api: ApiClient,
    private readonly root: HTMLElement,
  ) {}

  private set(next: ExplorerState): void {
    this.state = next;
    this.render();
  }

  async start(): Promise<void> {
    this.render();
    await this.loadGraphs();
  }

  async loadGraphs(): Promise<void> {
    try {
      this.set(withGraphList(this.state, await this.api.listGraphs()));
    } catch (err) {
      this.set(withGraphListError(this.state, String(err instanceof ApiError ? err.detail : err)));
    }
  }

  async selectGraph(id: string): Promise<void> {
    try {
      this.set(withSelectedGraph(this.state, await this.api.getGraph(id)));
    } catch (err) {
      this.set(withGraphError(this.state, String(err instanceof ApiError ? err.detail : err)));
    }
  }

  async score(column: Column): Promise<void> {
    const graph = this.state.selectedGraph;
    if (!graph) {
      return;
    }
    const anchors = this.state.columns[column].anchors;
    const [next, seq] = beginScore(this.state, column);
    this.set(next);
    try {
      const response = await this.api.score({
        graph_id: graph.id,
        ca: anchors,
        top_k: this.state.topK,
      });
      this.set(applyScoreResponse(this.state, column, seq, response));
    } catch (err) {
      const detail = err instanceof ApiError ? err.detail : String(err);
      this.set(applyScoreError(this.state, column, seq, detail));
    }
  }

  /** The steering loop: toggling a node re-queries its column. */
  async toggleAndRescore(column: Column, nodeId: string): Promise<void> {
    this.set(toggleAnchor(this.state, column, nodeId));
    if (this.state.columns[column].anchors.length > 0) {
      await this.score(column);
    }
  }

  // -- rendering ------------------------------------------------------------

  render(): void {
    const s = this.state;
    this.root.innerHTML = `
      <header>
        <h1>anchor explorer</h1>
        <p class="tagline">pick a graph, toggle anchors, watch the ranking follow</p>
      </header>
      <div class="layout">
        <aside id="picker">${this.renderPicker()}</aside>
        <main id="workbench">${this.renderWorkbench()}</main>
      </div>`;
    this.bind();
  }

  private renderPicker(): string {
    const s = this.state;
    if (s.graphsError) {
      return `<div class="banner error">service unreachable: ${esc(s.graphsError)}
        <button data-action="retry-graphs">retry</button></div>`;
    }
    if (s.graphs.length === 0) {
      return `<div class="empty">no graphs in the served dataset</div>`;
    }
    const rows = s.graphs
      .map(
        (g) => `<li><button data-action="select-graph" data-graph="${esc(g.id)}"
          class="${s.selectedGraph?.id === g.id ? "active" : ""}">
          ${esc(g.id)} <span class="count">${g.n_nodes} nodes</span></button></li>`,
      )
      .join("");
    return `<h2>graphs</h2><ul class="graph-list">${rows}</ul>`;
  }

  private renderWorkbench(): string {
    const s = this.state;
    if (s.graphError) {
      return `<div class="banner error">${esc(s.graphError)}
        <button data-action="retry-graphs">retry</button></div>`;
    }
    if (!s.selectedGraph) {
      return `<div class="empty">select a graph to begin</div>`;
    }
    const controls = `
      <div class="controls">
        <label>top k <input id="topk" type="number" min="1" value="${s.topK}"></label>
        <label><input id="view-toggle" type="checkbox" ${s.view === "ppr" ? "checked" : ""}>
          show personalized-pagerank baseline</label>
        <label><input id="compare-toggle" type="checkbox" ${s.compareEnabled ? "checked" : ""}>
          side-by-side second anchor set</label>
      </div>`;
    const columns = s.compareEnabled
      ? `<div class="columns">${this.renderColumn("A")}${this.renderColumn("B")}</div>`
      : `<div class="columns single">${this.renderColumn("A")}</div>`;
    return `
      <h2>${esc(s.selectedGraph.id)}</h2>
      ${controls}
      <div class="panes">
        <section class="nodes">
          <h3>nodes</h3>
          <input id="node-filter" type="search" placeholder="filter nodes"
                 value="${esc(s.nodeFilter)}">
          ${this.renderNodeList()}
        </section>
        ${columns}
      </div>`;
  }

  private renderNodeList(): string {
    const s = this.state;
    const anchorsA = new Set(s.columns.A.anchors);
    const anchorsB = new Set(s.columns.B.anchors);
    const rows = filteredNodes(s)
      .map((n) => {
        const marks =
          `${anchorsA.has(n.id) ? "A" : ""}${s.compareEnabled && anchorsB.has(n.id) ? "B" : ""}`;
        return `<tr>
          <td><code>${esc(n.id)}</code></td>
          <td class="text">${esc(n.text)}</td>
          <td class="marks">${marks}</td>
          <td>
            <button data-action="toggle-anchor" data-column="A" data-node="${esc(n.id)}">
              ${anchorsA.has(n.id) ? "-A" : "+A"}</button>
            ${
              s.compareEnabled
                ? `<button data-action="toggle-anchor" data-column="B" data-node="${esc(n.id)}">
                    ${anchorsB.has(n.id) ? "-B" : "+B"}</button>`
                : ""
            }
          </td></tr>`;
      })
      .join("");
    return `<table class="node-table"><tbody>${rows}</tbody></table>`;
  }

  private renderColumn(column: Column): string {
    const col = this.state.columns[column];
    const anchors = col.anchors.length
      ? col.anchors.map((a) => `<code>${esc(a)}</code>`).join(" ")
      : "<em>none</em>";
    const error = col.error
      ? `<div class="banner error inline">${esc(col.error)}</div>`
      : "";
    const pending = col.pending ? `<div class="pending">scoring…</div>` : "";
    const rows = rankingRows(col.response, this.state.view, col.anchors)
      .map(
        (r) => `<tr class="${r.isAnchor ? "anchor" : ""}"
          data-action="toggle-anchor" data-column="${column}" data-node="${esc(r.node)}">
          <td>${r.rank}</td><td><code>${esc(r.node)}</code></td>
          <td class="score">${r.score}</td></tr>`,
      )
      .join("");
    const table = col.response
      ? `<table class="ranking" data-column="${column}"><thead>
          <tr><th>#</th><th>node</th><th>score</th></tr></thead>
          <tbody>${rows}</tbody></table>`
      : `<div class="empty">no ranking yet</div>`;
    return `
      <section class="column" id="column-${column}">
        <h3>anchor set ${column}</h3>
        <div class="anchors">${anchors}</div>
        <button data-action="score" data-column="${column}"
                ${col.anchors.length === 0 ? "disabled" : ""}>score</button>
        ${error}${pending}${table}
      </section>`;
  }

  private bind(): void {
    this.root.querySelectorAll<HTMLElement>("[data-action]").forEach((el) => {
      const action = el.dataset.action;
      if (action === "retry-graphs") {
        el.addEventListener("click", () => void this.loadGraphs());
      } else if (action === "select-graph") {
        el.addEventListener("click", () => void this.selectGraph(el.dataset.graph ?? ""));
      } else if (action === "toggle-anchor") {
        el.addEventListener("click", () =>
          void this.toggleAndRescore(el.dataset.column as Column, el.dataset.node ?? ""),
        );
      } else if (action === "score") {
        el.addEventListener("click", () => void this.score(el.dataset.column as Column));
      }
    });
    const topk = this.root.querySelector<HTMLInputElement>("#topk");
    topk?.addEventListener("change", () => {
      const value = Number(topk.value);
      if (Number.isInteger(value) && value >= 1) {
        this.set(withTopK(this.state, value));
      }
    });
    const view = this.root.querySelector<HTMLInputElement>("#view-toggle");
    view?.addEventListener("change", () =>
      this.set(withView(this.state, view.checked ? "ppr" : "model")),
    );
    const compare = this.root.querySelector<HTMLInputElement>("#compare-toggle");
    compare?.addEventListener("change", () =>
      this.set(withCompareEnabled(this.state, compare.checked)),
    );
    const filter = this.root.querySelector<HTMLInputElement>("#node-filter");
    filter?.addEventListener("input", () => {
      this.state = withNodeFilter(this.state, filter.value);
      const table = this.root.querySelector(".node-table");
      if (table) {
        table.outerHTML = this.renderNodeList();
        this.bind();
      }
    });
  }
}
