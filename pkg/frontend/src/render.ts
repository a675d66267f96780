// Pure HTML-string renderers. Numbers from API payloads are displayed
// verbatim (String(value)); the client never recomputes a metric.

import { LeaderboardRow, CutoffPayload } from "./api.js";
import { ViewState } from "./state.js";

export function esc(text: unknown): string {
  return String(text)
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderErrorBanner(message: string): string {
  return (
    `<div class="banner error" role="alert">` +
    `${esc(message)} <button data-action="retry">retry</button></div>`
  );
}

export function renderEmpty(label: string): string {
  return `<div class="empty">no records: ${esc(label)}</div>`;
}

// --- leaderboard -------------------------------------------------------------

export const LEADERBOARD_COLUMNS: [key: string, label: string][] = [
  ["crr", "CRR %"],
  ["epr", "EPR %"],
  ["file_iou", "File IoU %"],
  ["function_iou", "Func IoU %"],
  ["mean_cost", "Cost $"],
  ["mean_wall_time", "Wall s"],
  ["n_bugs", "Bugs"],
];

export function sortRows(rows: LeaderboardRow[], state: ViewState): LeaderboardRow[] {
  const key = state.sort as keyof LeaderboardRow;
  const dir = state.sortDir === "asc" ? 1 : -1;
  return [...rows].sort((a, b) => {
    const av = a[key] as number;
    const bv = b[key] as number;
    if (av === bv) return JSON.stringify(a.group) < JSON.stringify(b.group) ? -1 : 1;
    return av < bv ? -dir : dir;
  });
}

export function renderLeaderboard(rows: LeaderboardRow[], state: ViewState): string {
  if (rows.length === 0) return renderEmpty("leaderboard scope is empty");
  const headers = LEADERBOARD_COLUMNS.map(
    ([key, label]) =>
      `<th data-action="sort" data-column="${key}"` +
      `${state.sort === key ? ` class="sorted ${state.sortDir}"` : ""}>${esc(label)}</th>`
  ).join("");
  const body = sortRows(rows, state)
    .map((row) => {
      const group = Object.values(row.group).map(esc).join(" / ");
      const cells = LEADERBOARD_COLUMNS.map(
        ([key]) => `<td>${esc(String(row[key as keyof LeaderboardRow]))}</td>`
      ).join("");
      const drill = esc(Object.values(row.group)[0] ?? "");
      return `<tr data-action="drill" data-agent="${drill}"><td>${group}</td>${cells}</tr>`;
    })
    .join("");
  return (
    `<table class="leaderboard"><thead><tr><th>agent</th>${headers}</tr></thead>` +
    `<tbody>${body}</tbody></table>`
  );
}

// --- cutoff view -----------------------------------------------------------------

export function formatUplift(change: number): string {
  return `${change >= 0 ? "+" : ""}${change.toFixed(2)}%`;
}

export function renderCutoff(payload: CutoffPayload, cutoffDate: string): string {
  if (!payload.cutoff) return renderEmpty("no evaluations match the filter");
  const { before, after, changes, n_before, n_after } = payload.cutoff;
  const cards = Object.keys(before)
    .sort()
    .map((key) => {
      const change = changes[key];
      const badge =
        change === undefined
          ? ""
          : `<span class="badge ${change >= 0 ? "green" : "red"}">${formatUplift(change)}</span>`;
      return (
        `<div class="card" data-metric="${esc(key)}">` +
        `<div class="metric">${esc(key)}</div>` +
        `<div class="pair"><span class="before">${esc(String(before[key]))}</span>` +
        ` / <span class="after">${esc(String(after[key]))}</span></div>` +
        badge +
        `</div>`
      );
    })
    .join("");
  return (
    `<div class="cutoff" data-cutoff="${esc(cutoffDate)}">` +
    `<div class="sides">before n=${n_before}, after n=${n_after}</div>` +
    `<div class="cards">${cards}</div></div>`
  );
}

export function renderEmptySideNotice(which: string): string {
  return `<div class="notice">cutoff split has an empty ${esc(which)} side; pick another date</div>`;
}

// --- drill-down -----------------------------------------------------------------------

export function renderDrilldown(bugId: string, runs: any[]): string {
  if (runs.length === 0) return `<div class="notfound">no attempts recorded for ${esc(bugId)}</div>`;
  const attempts = runs
    .map((run) => {
      const chips: string[] = [];
      const resolved = run.crash_resolved === 1 || run.crash_resolved === true;
      chips.push(
        `<span class="chip ${resolved ? "green" : "red"}">` +
          `${resolved ? "resolved" : "unresolved"}</span>`
      );
      if (run.equivalence && run.equivalence !== "not_applicable") {
        chips.push(
          `<span class="chip ${run.equivalence === "equivalent" ? "green" : "red"}">` +
            `${esc(run.equivalence)}</span>`
        );
      }
      if (run.file_iou !== null && run.file_iou !== undefined) {
        chips.push(`<span class="chip iou">IoU ${esc(String(run.file_iou))}</span>`);
      }
      const crfMarkers = (run.trajectory ?? [])
        .filter((e: any) => e.kind === "crf_call")
        .map(
          (e: any) =>
            `<span class="crf-marker" title="latency ${esc(
              String(e.payload?.latency_ms ?? "?")
            )} ms">CRF</span>`
        )
        .join("");
      return (
        `<div class="attempt" data-attempt="${esc(String(run.attempt))}">` +
        `<span class="who">${esc(run.scaffold)} #${esc(String(run.attempt))}</span>` +
        `${chips.join("")}` +
        `<span class="timeline">${crfMarkers}</span>` +
        `<span class="meta">$${esc(String(run.dollar_cost))}, ${esc(String(run.wall_time))}s, ` +
        `${esc(String(run.crf_calls))} feedback calls</span></div>`
      );
    })
    .join("");
  return `<div class="drilldown"><h2>${esc(bugId)}</h2>${attempts}</div>`;
}

// --- charts ------------------------------------------------------------------------------

function bar(label: string, count: number, max: number): string {
  const width = max > 0 ? Math.round((count / max) * 100) : 0;
  return (
    `<div class="bar-row"><span class="bar-label">${esc(label)}</span>` +
    `<span class="bar" style="width:${width}%"></span>` +
    `<span class="bar-count">${count}</span></div>`
  );
}

export function renderCharts(bugs: any[]): string {
  const byMonth = new Map<string, number>();
  const byType = new Map<string, number>();
  for (const b of bugs) {
    if (b.fixed_date) {
      const month = String(b.fixed_date).slice(0, 7);
      byMonth.set(month, (byMonth.get(month) ?? 0) + 1);
    }
    byType.set(b.bug_type ?? "unknown", (byType.get(b.bug_type ?? "unknown") ?? 0) + 1);
  }
  const maxMonth = Math.max(0, ...byMonth.values());
  const maxType = Math.max(0, ...byType.values());
  const months = [...byMonth.keys()].sort().map((m) => bar(m, byMonth.get(m)!, maxMonth));
  const types = [...byType.entries()]
    .sort((a, b) => b[1] - a[1])
    .map(([t, c]) => bar(t, c, maxType));
  return (
    `<div class="charts"><div class="chart"><h3>fixed per month</h3>${months.join("")}</div>` +
    `<div class="chart"><h3>bug types</h3>${types.join("")}</div></div>`
  );
}
