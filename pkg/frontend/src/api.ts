// Typed client over the dashboard API. Concurrent fetches for the same URL
// are deduplicated: callers share one in-flight promise per key.

import { ViewState, filterQuery } from "./state.js";

export interface LeaderboardRow {
  group: Record<string, string>;
  crr: number;
  epr: number;
  file_iou: number;
  function_iou: number;
  mean_cost: number;
  mean_wall_time: number;
  n_bugs: number;
}

export interface CutoffPayload {
  cutoff: {
    before: Record<string, number>;
    after: Record<string, number>;
    changes: Record<string, number>;
    n_before: number;
    n_after: number;
  } | null;
  n_records: number;
}

export type FetchLike = (url: string) => Promise<{ ok: boolean; status: number; json(): Promise<any> }>;

export class ApiError extends Error {
  constructor(public status: number, public payload: any) {
    super(`API error ${status}`);
  }
}

export class ApiClient {
  private inflight = new Map<string, Promise<any>>();

  constructor(private base = "", private fetchImpl: FetchLike = (u) => fetch(u)) {}

  private get(url: string): Promise<any> {
    const existing = this.inflight.get(url);
    if (existing) return existing;
    const p = this.fetchImpl(this.base + url)
      .then(async (resp) => {
        const doc = await resp.json();
        if (!resp.ok) throw new ApiError(resp.status, doc);
        return doc;
      })
      .finally(() => this.inflight.delete(url));
    this.inflight.set(url, p);
    return p;
  }

  health(): Promise<{ status: string }> {
    return this.get("/api/health");
  }

  leaderboard(state: ViewState): Promise<{ group_by: string; rows: LeaderboardRow[] }> {
    const q = filterQuery(state, { group_by: state.groupBy });
    return this.get(`/api/leaderboard?${q}`);
  }

  metricsCutoff(state: ViewState): Promise<CutoffPayload> {
    const q = filterQuery(state, { cutoff_date: state.cutoffDate, ks: "1" });
    return this.get(`/api/metrics?${q}`);
  }

  bugs(state: ViewState, pageSize = 200): Promise<{ total: number; items: any[] }> {
    const q = filterQuery(state, { page: String(state.page), page_size: String(pageSize) });
    return this.get(`/api/bugs?${q}`);
  }

  runs(state: ViewState): Promise<{ items: any[] }> {
    const extra: Record<string, string> = { bug_id: state.bugId };
    if (state.agent) extra.scaffold = state.agent;
    const q = filterQuery(state, extra);
    return this.get(`/api/runs?${q}`);
  }

  toughest(state: ViewState): Promise<{ bug_ids: string[] }> {
    return this.get(`/api/toughest?${filterQuery(state)}`);
  }
}
