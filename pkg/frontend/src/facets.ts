// Faceted search state: pending edits vs the applied set. The applied set is
// URL-serializable for deep links, and applying produces exactly one search
// request body.

import { SearchRequestBody } from "./api.js";

export interface Facets {
  sector?: string;
  region?: string;
  status?: string;
  dateFrom?: string;
  dateTo?: string;
  freeText?: string;
}

const FACET_KEYS: (keyof Facets)[] = [
  "sector",
  "region",
  "status",
  "dateFrom",
  "dateTo",
  "freeText",
];

export class FacetState {
  pending: Facets = {};
  applied: Facets = {};

  setPending<K extends keyof Facets>(key: K, value: Facets[K]): void {
    if (value) {
      this.pending[key] = value;
    } else {
      delete this.pending[key];
    }
  }

  /** Promote pending edits; the caller issues exactly one search with the
   * returned body. */
  apply(): SearchRequestBody {
    this.applied = { ...this.pending };
    return this.toSearchRequest();
  }

  isDirty(): boolean {
    return JSON.stringify(this.pending) !== JSON.stringify(this.applied);
  }

  toSearchRequest(): SearchRequestBody {
    const filters: Record<string, Record<string, unknown>> = {};
    const f = this.applied;
    if (f.sector) filters["sectors"] = { eq: f.sector };
    if (f.region) filters["region"] = { eq: f.region };
    if (f.status) filters["status"] = { eq: f.status };
    if (f.dateFrom || f.dateTo) {
      const range: Record<string, string> = {};
      if (f.dateFrom) range["gte"] = f.dateFrom;
      if (f.dateTo) range["lte"] = f.dateTo;
      filters["date_published"] = { range };
    }
    if (f.freeText) filters["title"] = { free_text: f.freeText };
    return {
      filters,
      aggregations: [{ dimension: "status", metric: "count" }],
      page: { offset: 0, limit: 50 },
    };
  }

  toUrl(): string {
    const params = new URLSearchParams();
    for (const key of FACET_KEYS) {
      const value = this.applied[key];
      if (value) params.set(key, value);
    }
    return params.toString();
  }

  static fromUrl(query: string): FacetState {
    const params = new URLSearchParams(query);
    const state = new FacetState();
    for (const key of FACET_KEYS) {
      const value = params.get(key);
      if (value) {
        state.applied[key] = value;
        state.pending[key] = value;
      }
    }
    return state;
  }
}
