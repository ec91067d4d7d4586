/** Thin typed client for the scoring service.
 *
 * All numbers and orderings come back exactly as the server sent them; the
 * client never transforms scores. Shape checks run on every response so a
 * contract break fails loudly instead of rendering garbage.
 */

import type { GraphDetail, GraphSummary, ScoreRequest, ScoreResponse } from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

function isRankedList(value: unknown): value is { node: string; score: number }[] {
  return (
    Array.isArray(value) &&
    value.every(
      (row) =>
        typeof row === "object" &&
        row !== null &&
        typeof (row as Record<string, unknown>).node === "string" &&
        typeof (row as Record<string, unknown>).score === "number",
    )
  );
}

export class ApiClient {
  private readonly fetchImpl: FetchLike;

  constructor(
    readonly baseUrl: string,
    fetchImpl?: FetchLike,
  ) {
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let resp: Response;
    try {
      resp = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    } catch (err) {
      throw new ApiError(0, `network failure: ${String(err)}`);
    }
    const body = await resp.text();
    let parsed: unknown = null;
    if (body) {
      try {
        parsed = JSON.parse(body);
      } catch {
        throw new ApiError(resp.status, `invalid JSON from server: ${body.slice(0, 120)}`);
      }
    }
    if (!resp.ok) {
      const detail =
        typeof parsed === "object" && parsed !== null && "detail" in parsed
          ? String((parsed as Record<string, unknown>).detail)
          : body || resp.statusText;
      throw new ApiError(resp.status, detail);
    }
    return parsed as T;
  }

  async listGraphs(): Promise<GraphSummary[]> {
    const rows = await this.request<unknown>("/graphs");
    if (
      !Array.isArray(rows) ||
      !rows.every(
        (r) =>
          typeof r === "object" &&
          r !== null &&
          typeof (r as Record<string, unknown>).id === "string" &&
          typeof (r as Record<string, unknown>).n_nodes === "number",
      )
    ) {
      throw new ApiError(200, "malformed /graphs response");
    }
    return rows as GraphSummary[];
  }

  async getGraph(id: string): Promise<GraphDetail> {
    const doc = await this.request<GraphDetail>(`/graphs/${encodeURIComponent(id)}`);
    if (typeof doc !== "object" || doc === null || !Array.isArray(doc.nodes)) {
      throw new ApiError(200, "malformed /graphs/{id} response");
    }
    return doc;
  }

  async score(req: ScoreRequest): Promise<ScoreResponse> {
    const doc = await this.request<ScoreResponse>("/score", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
    });
    if (!isRankedList(doc.ranking) || !isRankedList(doc.baseline_ppr)) {
      throw new ApiError(200, "malformed /score response");
    }
    return doc;
  }
}
