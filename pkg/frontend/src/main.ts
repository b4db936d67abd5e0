import { ApiClient } from "./api.js";
import { renderDvh, renderDvhLegend } from "./dvh.js";
import { renderHeatmap } from "./heatmap.js";
import { LatestWins, debounce } from "./inflight.js";
import { SessionStore } from "./state.js";
import { SliderPanel } from "./sliders.js";
import type { SessionState } from "./types.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

async function pickCaseId(api: ApiClient): Promise<string> {
  const fromQuery = new URLSearchParams(window.location.search).get("case");
  if (fromQuery) return fromQuery;
  const { cases } = await api.listCases();
  const ready = cases.filter((c) => c.status === "surface_ready");
  if (!ready.length) throw new Error("no case with a built surface; run mco build-surface first");
  return ready[0].case_id;
}

async function boot(): Promise<void> {
  const api = new ApiClient("");
  const store = new SessionStore();
  const statusLine = el<HTMLElement>("status");

  const caseId = await pickCaseId(api);
  const initial = await api.createSession(caseId);
  const sessionId = initial.session_id;

  const queue = new LatestWins<SessionState>(
    (state) => store.apply(state),
    (error) => store.applyError(error),
  );

  const panel = new SliderPanel(el("sliders"), store, {
    onDrag: debounce((index: number, value: number) => {
      store.setPending(true);
      queue.submit(() => api.drag(sessionId, index, value));
    }, 120),
    onLock: (index, bound) => {
      store.setPending(true);
      queue.submit(() => api.lock(sessionId, index, bound));
    },
    onUnlock: (index) => {
      store.setPending(true);
      queue.submit(() => api.unlock(sessionId, index));
    },
  });

  const dvhCanvas = el<HTMLCanvasElement>("dvh");
  const heatCanvas = el<HTMLCanvasElement>("heatmap");
  const barCanvas = el<HTMLCanvasElement>("colorbar");
  const legend = el<HTMLElement>("dvh-legend");

  store.subscribe(() => {
    const state = store.state;
    if (!state) return;
    renderDvh(dvhCanvas, state.dvh);
    renderDvhLegend(legend, state.dvh);
    renderHeatmap(heatCanvas, barCanvas, state.dose);
    el<HTMLElement>("case-label").textContent =
      `${state.case_id} - ${state.n_plans} plans` +
      (state.active_plans ? ` (restricted to ${state.active_plans.length})` : "");
    statusLine.textContent = store.lastError
      ? `blocked: ${store.lastError}`
      : store.pending
        ? "working..."
        : state.feasible
          ? "all hard constraints satisfied"
          : "constraint violation!";
    statusLine.className = store.lastError ? "status error" : "status";
  });

  el<HTMLButtonElement>("restrict-btn").addEventListener("click", () => {
    const m = Number(el<HTMLInputElement>("restrict-m").value);
    store.setPending(true);
    queue.submit(() => api.restrict(sessionId, m));
  });

  el<HTMLButtonElement>("export-btn").addEventListener("click", async () => {
    try {
      const out = await api.exportPlan(sessionId);
      statusLine.textContent = `exported ${out.plan_id}`;
    } catch (error) {
      store.applyError(error);
    }
  });

  el<HTMLButtonElement>("sparsify-btn").addEventListener("click", async () => {
    const beams = Number(el<HTMLInputElement>("sparsify-beams").value);
    const epsilon = Number(el<HTMLInputElement>("sparsify-eps").value);
    statusLine.textContent = `sparsifying to ${beams} beams...`;
    try {
      const out = await api.sparsify(sessionId, beams, epsilon);
      statusLine.textContent = out.achieved
        ? `sparsified to ${out.active_beam_count} beams (${out.plan_id})`
        : `stopped at ${out.active_beam_count} beams: ${out.note}`;
    } catch (error) {
      store.applyError(error);
    }
  });

  store.apply(initial);
  panel.refresh();
}

boot().catch((error) => {
  el<HTMLElement>("status").textContent =
    error instanceof Error ? error.message : String(error);
  el<HTMLElement>("status").className = "status error";
});
