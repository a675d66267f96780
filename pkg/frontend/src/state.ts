// View state <-> URL hash. The whole state serializes into the hash so any
// view is shareable and reload-stable; serialization is canonical (sorted
// keys, defaults omitted) so serialize(parse(url)) === url for every URL the
// app itself produces.

export const FILTER_KEYS = [
  "fixed_after",
  "fixed_before",
  "subsystem",
  "bug_type",
  "scaffold",
  "model",
  "crf_enabled",
  "oracle_mode",
  "cost_limit",
  "crash_resolved",
  "equivalence",
  "iou_min",
  "iou_max",
] as const;

export type FilterKey = (typeof FILTER_KEYS)[number];
export type View = "leaderboard" | "cutoff" | "bug";

export interface ViewState {
  view: View;
  filters: Partial<Record<FilterKey, string[]>>;
  groupBy: string;      // leaderboard grouping
  cutoffDate: string;   // cutoff view split date (ISO)
  bugId: string;        // drill-down target
  agent: string;        // drill-down scaffold filter
  page: number;
  sort: string;         // leaderboard column
  sortDir: "asc" | "desc";
}

export const DEFAULTS = {
  groupBy: "scaffold",
  cutoffDate: "",
  bugId: "",
  agent: "",
  page: 1,
  sort: "crr",
  sortDir: "desc" as const,
};

export function defaultState(view: View = "leaderboard"): ViewState {
  return { view, filters: {}, ...DEFAULTS };
}

export function serializeViewState(state: ViewState): string {
  const params: [string, string][] = [];
  for (const key of Object.keys(state.filters).sort()) {
    const values = state.filters[key as FilterKey] ?? [];
    for (const v of [...values].sort()) params.push([key, v]);
  }
  if (state.groupBy !== DEFAULTS.groupBy) params.push(["group_by", state.groupBy]);
  if (state.cutoffDate) params.push(["cutoff", state.cutoffDate]);
  if (state.bugId) params.push(["bug", state.bugId]);
  if (state.agent) params.push(["agent", state.agent]);
  if (state.page !== DEFAULTS.page) params.push(["page", String(state.page)]);
  if (state.sort !== DEFAULTS.sort) params.push(["sort", state.sort]);
  if (state.sortDir !== DEFAULTS.sortDir) params.push(["dir", state.sortDir]);
  const query = params
    .map(([k, v]) => `${encodeURIComponent(k)}=${encodeURIComponent(v)}`)
    .join("&");
  return `#/${state.view}${query ? "?" + query : ""}`;
}

export function parseViewState(hash: string): ViewState {
  const body = hash.replace(/^#\/?/, "");
  const [path, query = ""] = body.split("?", 2);
  const view: View = path === "cutoff" || path === "bug" ? path : "leaderboard";
  const state = defaultState(view);
  if (!query) return state;
  for (const pair of query.split("&")) {
    if (!pair) continue;
    const [rawKey, rawValue = ""] = pair.split("=", 2);
    const key = decodeURIComponent(rawKey);
    const value = decodeURIComponent(rawValue);
    if ((FILTER_KEYS as readonly string[]).includes(key)) {
      const fk = key as FilterKey;
      (state.filters[fk] ??= []).push(value);
    } else if (key === "group_by") state.groupBy = value;
    else if (key === "cutoff") state.cutoffDate = value;
    else if (key === "bug") state.bugId = value;
    else if (key === "agent") state.agent = value;
    else if (key === "page") state.page = Math.max(1, parseInt(value, 10) || 1);
    else if (key === "sort") state.sort = value;
    else if (key === "dir") state.sortDir = value === "asc" ? "asc" : "desc";
    // unknown keys are dropped: the canonical form never emits them
  }
  for (const fk of Object.keys(state.filters) as FilterKey[]) {
    state.filters[fk] = [...new Set(state.filters[fk]!)].sort();
  }
  return state;
}

/** Query string for the API: filter keys only, repeatable, sorted. */
export function filterQuery(state: ViewState, extra: Record<string, string> = {}): string {
  const params: string[] = [];
  for (const key of Object.keys(state.filters).sort()) {
    for (const v of state.filters[key as FilterKey] ?? []) {
      params.push(`${encodeURIComponent(key)}=${encodeURIComponent(v)}`);
    }
  }
  for (const key of Object.keys(extra).sort()) {
    params.push(`${encodeURIComponent(key)}=${encodeURIComponent(extra[key])}`);
  }
  return params.join("&");
}
