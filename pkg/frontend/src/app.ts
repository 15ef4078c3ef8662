// Console shell: tab navigation and DOM rendering. All state lives in the
// model classes; this file only draws them and forwards user intent.

import { ApiClient, ApiError, SearchResult, TraverseResult } from "./api.js";
import { DeltaQueue } from "./deltaQueue.js";
import { FacetState } from "./facets.js";
import { GraphExplorer } from "./graphExplorer.js";
import { heatColor, LandscapePanel } from "./landscape.js";

const STATUS_CHOICES = [
  "announced",
  "planned",
  "procurement",
  "construction",
  "operational",
  "cancelled",
  "unknown",
];

const api = new ApiClient("..");
const queue = new DeltaQueue(api);
const explorer = new GraphExplorer(api);
const landscape = new LandscapePanel(api);
let facets = FacetState.fromUrl(window.location.search);

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function toast(message: string, kind: "ok" | "warn" = "ok"): void {
  const box = el<HTMLDivElement>("toast");
  box.textContent = message;
  box.className = `toast ${kind} visible`;
  setTimeout(() => box.classList.remove("visible"), 4000);
}

function promptForToken(): void {
  const token = window.prompt("Session token required for mutations:");
  if (token) {
    api.setToken(token);
    toast("token set; retry the action");
  }
}

// -- delta triage -------------------------------------------------------------

async function renderDeltas(): Promise<void> {
  const table = el<HTMLTableSectionElement>("delta-rows");
  try {
    await queue.refresh();
  } catch (error) {
    el("delta-empty").textContent = `cannot load queue: ${error}`;
    return;
  }
  table.replaceChildren();
  el("delta-empty").textContent = queue.rows.length ? "" : "queue is empty";
  for (const row of queue.rows) {
    const tr = document.createElement("tr");
    const canonical = document.createElement("select");
    if (row.attribute === "status") {
      for (const status of STATUS_CHOICES) {
        const option = document.createElement("option");
        option.value = status;
        option.textContent = status;
        canonical.append(option);
      }
    } else {
      const input = document.createElement("input");
      input.placeholder = "canonical value";
      canonical.replaceWith(input);
    }
    const button = document.createElement("button");
    button.textContent = "resolve";
    button.addEventListener("click", async () => {
      button.disabled = true; // pessimistic: block until the server answers
      const value =
        row.attribute === "status"
          ? canonical.value
          : (tr.querySelector("input") as HTMLInputElement).value;
      const outcome = await queue.triage(row.entry_id, value);
      if (outcome.kind === "resolved") {
        toast(`resolved; retro-applied to ${outcome.retroApplied} records`);
      } else if (outcome.kind === "conflict") {
        toast("already resolved elsewhere; row refreshed", "warn");
      } else if (outcome.kind === "unauthorized") {
        button.disabled = false;
        promptForToken();
        return;
      } else if (outcome.kind === "offline") {
        button.disabled = false;
        toast("network unreachable; row kept, retry", "warn");
        return;
      } else {
        button.disabled = false;
        toast(`rejected: ${outcome.detail}`, "warn");
        return;
      }
      await renderDeltas();
    });
    const cells = [
      row.attribute,
      row.raw_value,
      String(row.occurrence_count),
      row.first_seen,
    ];
    for (const text of cells) {
      const td = document.createElement("td");
      td.textContent = text;
      tr.append(td);
    }
    const controls = document.createElement("td");
    controls.append(canonical, button);
    tr.append(controls);
    table.append(tr);
  }
}

// -- faceted search -----------------------------------------------------------

function renderSearchResult(result: SearchResult): void {
  el("search-total").textContent = `${result.total} records`;
  const histogram = result.aggregations["status:count"] ?? {};
  el("search-histogram").textContent = Object.entries(histogram)
    .map(([status, count]) => `${status}: ${count}`)
    .join("  ");
  const rows = el<HTMLTableSectionElement>("search-rows");
  rows.replaceChildren();
  for (const hit of result.hits) {
    const tr = document.createElement("tr");
    for (const key of ["title", "country", "status", "budget_usd", "date_published"]) {
      const td = document.createElement("td");
      const value = hit[key];
      td.textContent = value === null || value === undefined ? "" : String(value);
      tr.append(td);
    }
    rows.append(tr);
  }
}

async function applyFacets(): Promise<void> {
  for (const key of ["sector", "region", "status", "dateFrom", "dateTo", "freeText"] as const) {
    const input = el<HTMLInputElement>(`facet-${key}`);
    facets.setPending(key, input.value || undefined);
  }
  const body = facets.apply(); // exactly one request per apply
  const search = await api.search(body);
  window.history.replaceState(null, "", `?${facets.toUrl()}`);
  renderSearchResult(search);
}

function hydrateFacetInputs(): void {
  for (const key of ["sector", "region", "status", "dateFrom", "dateTo", "freeText"] as const) {
    const input = el<HTMLInputElement>(`facet-${key}`);
    input.value = facets.applied[key] ?? "";
  }
}

// -- graph explorer -------------------------------------------------------------

function renderTraversal(result: TraverseResult): void {
  const list = el<HTMLUListElement>("graph-results");
  list.replaceChildren();
  if (!result.results.length) {
    el("graph-empty").textContent = "no matches";
    return;
  }
  el("graph-empty").textContent = "";
  for (const hit of result.results) {
    const li = document.createElement("li");
    const title = hit.properties["title"] ?? hit.node_id;
    li.textContent = `${String(title)} — score ${hit.score.toFixed(3)}`;
    list.append(li);
  }
}

async function explore(): Promise<void> {
  const sector = el<HTMLInputElement>("graph-sector").value.trim();
  const region = el<HTMLInputElement>("graph-region").value.trim();
  const filters: Record<string, string> = {};
  if (sector) filters["sector"] = sector;
  if (region) filters["region"] = region;
  if (!Object.keys(filters).length) {
    el("graph-empty").textContent = "enter at least one filter";
    return;
  }
  try {
    const result = await explorer.expand({
      subject: filters,
      lexicon: {
        clauses: [{ kind: "more_like_text", pattern: sector || region, weight: 1.0 }],
        limit: 20,
        min_score: 0,
      },
    });
    renderTraversal(result);
  } catch (error) {
    if (error instanceof ApiError && error.status === 404) {
      el("graph-empty").textContent = "not found";
    } else {
      el("graph-empty").textContent = String(error);
    }
  }
}

// -- landscape ------------------------------------------------------------------

async function renderLandscape(): Promise<void> {
  const region = el<HTMLInputElement>("landscape-region").value.trim() || undefined;
  const sector = el<HTMLInputElement>("landscape-sector").value.trim() || undefined;
  const view = await landscape.load(region, sector); // one call per selection
  el("landscape-total").textContent = `${view.total} records`;
  const svg = el<HTMLElement>("treemap");
  svg.replaceChildren();
  for (const cell of landscape.cells(600, 300)) {
    const rect = document.createElementNS("http://www.w3.org/2000/svg", "rect");
    rect.setAttribute("x", cell.x.toFixed(1));
    rect.setAttribute("y", cell.y.toFixed(1));
    rect.setAttribute("width", Math.max(cell.w, 0.5).toFixed(1));
    rect.setAttribute("height", Math.max(cell.h, 0.5).toFixed(1));
    rect.setAttribute("class", "treemap-cell");
    const label = document.createElementNS("http://www.w3.org/2000/svg", "title");
    label.textContent = `${cell.name}: ${cell.count}`;
    rect.append(label);
    svg.append(rect);
  }
  const grid = el<HTMLDivElement>("geo-grid");
  grid.replaceChildren();
  const max = landscape.maxBucketCount();
  for (const bucket of view.geo_buckets) {
    const tile = document.createElement("div");
    tile.className = "geo-tile";
    tile.style.background = heatColor(bucket.count, max);
    tile.textContent = `${bucket.geohash} (${bucket.count})`;
    grid.append(tile);
  }
  el("landscape-histogram").textContent = Object.entries(view.status_histogram)
    .map(([status, count]) => `${status}: ${count}`)
    .join("  ");
}

// -- shell ------------------------------------------------------------------------

function showTab(name: string): void {
  for (const tab of document.querySelectorAll<HTMLElement>(".tab")) {
    tab.classList.toggle("active", tab.dataset["tab"] === name);
  }
  for (const panel of document.querySelectorAll<HTMLElement>(".panel")) {
    panel.classList.toggle("visible", panel.id === `panel-${name}`);
  }
}

export function boot(): void {
  for (const tab of document.querySelectorAll<HTMLElement>(".tab")) {
    tab.addEventListener("click", () => showTab(tab.dataset["tab"] ?? "deltas"));
  }
  el("facet-apply").addEventListener("click", () => void applyFacets());
  el("graph-expand").addEventListener("click", () => void explore());
  el("landscape-load").addEventListener("click", () => void renderLandscape());
  el("token-set").addEventListener("click", promptForToken);
  hydrateFacetInputs();
  showTab("deltas");
  void renderDeltas();
}

if (typeof document !== "undefined" && document.readyState !== "loading") {
  boot();
} else if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", boot);
}
