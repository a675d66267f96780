// DOM glue: hash-routed single-page app over the dashboard API. All state
// lives in the URL; every user action rewrites the hash and the hashchange
// handler re-renders.

import { ApiClient, ApiError } from "./api.js";
import {
  renderCharts,
  renderCutoff,
  renderDrilldown,
  renderEmptySideNotice,
  renderErrorBanner,
  renderLeaderboard,
} from "./render.js";
import { FILTER_KEYS, FilterKey, parseViewState, serializeViewState, ViewState } from "./state.js";

const api = new ApiClient("");

function setState(state: ViewState): void {
  const url = serializeViewState(state);
  if (location.hash === url) void render();
  else location.hash = url;
}

function currentState(): ViewState {
  return parseViewState(location.hash);
}

async function render(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) return;
  const state = currentState();
  try {
    if (state.view === "bug" && state.bugId) {
      const runs = await api.runs(state);
      root.innerHTML = renderDrilldown(state.bugId, runs.items);
    } else if (state.view === "cutoff" && state.cutoffDate) {
      const payload = await api.metricsCutoff(state);
      root.innerHTML = renderCutoff(payload, state.cutoffDate);
    } else {
      const [board, bugs] = await Promise.all([api.leaderboard(state), api.bugs(state)]);
      root.innerHTML = renderLeaderboard(board.rows, state) + renderCharts(bugs.items);
    }
  } catch (err) {
    if (err instanceof ApiError && err.payload?.error?.type === "EmptySide") {
      root.innerHTML = renderEmptySideNotice(String(err.payload.error.message ?? "side"));
    } else {
      root.innerHTML = renderErrorBanner(err instanceof Error ? err.message : String(err));
    }
  }
}

function wireControls(): void {
  document.addEventListener("click", (ev) => {
    const target = (ev.target as HTMLElement).closest("[data-action]") as HTMLElement | null;
    if (!target) return;
    const state = currentState();
    const action = target.dataset.action;
    if (action === "sort") {
      const column = target.dataset.column ?? "crr";
      if (state.sort === column) state.sortDir = state.sortDir === "asc" ? "desc" : "asc";
      else {
        state.sort = column;
        state.sortDir = "desc";
      }
      setState(state);
    } else if (action === "retry") {
      void render();
    } else if (action === "drill") {
      state.view = "bug";
      state.agent = target.dataset.agent ?? "";
      state.bugId = target.dataset.bug ?? state.bugId;
      setState(state);
    }
  });

  const form = document.getElementById("filters");
  form?.addEventListener("change", () => {
    const state = currentState();
    state.filters = {};
    for (const key of FILTER_KEYS) {
      const input = document.querySelector<HTMLInputElement>(`[name="${key}"]`);
      if (input && input.value.trim()) {
        state.filters[key as FilterKey] = input.value
          .split(",")
          .map((v) => v.trim())
          .filter(Boolean);
      }
    }
    const cutoff = document.querySelector<HTMLInputElement>('[name="cutoff_date"]');
    if (cutoff?.value) {
      state.view = "cutoff";
      state.cutoffDate = cutoff.value;
    }
    setState(state);
  });
}

window.addEventListener("hashchange", () => void render());
window.addEventListener("DOMContentLoaded", () => {
  wireControls();
  void render();
});
