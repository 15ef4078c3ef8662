// Typed client over the mesh API. The console never recomputes anything the
// server already computed; these shapes are exactly the wire format.

export interface DeltaEntry {
  entry_id: string;
  attribute: string;
  raw_value: string;
  occurrence_count: number;
  first_seen: string;
  example_record_ids: string[];
  state: string;
  resolution: string | null;
}

export interface ResolveResult {
  attribute: string;
  canonical: string;
  dictionary_version: number;
  retro_applied: number;
}

export interface LexiconClause {
  kind: "must" | "must_not" | "should" | "more_like_text";
  field?: string;
  pattern?: string;
  weight?: number;
}

export interface TraverseRequest {
  subject: string | Record<string, string>;
  lexicon: { clauses: LexiconClause[]; limit?: number; min_score?: number } | string;
  limit?: number;
}

export interface TraverseHit {
  node_id: string;
  score: number;
  properties: Record<string, unknown>;
}

export interface TraverseResult {
  subject: string;
  results: TraverseHit[];
}

export interface LandscapeView {
  region: string | null;
  sector: string | null;
  total: number;
  top_entities: { name: string; count: number }[];
  geo_buckets: { geohash: string; count: number; sum_budget_usd: number }[];
  status_histogram: Record<string, number>;
  sector_co_tags: { tag: string; count: number }[];
}

export interface SearchRequestBody {
  filters: Record<string, Record<string, unknown>>;
  aggregations?: { dimension: string; metric: string }[];
  sort?: string;
  page?: { offset: number; limit: number };
}

export interface SearchResult {
  hits: Record<string, unknown>[];
  total: number;
  aggregations: Record<string, Record<string, number>>;
}

export type HealthSummary = Record<
  string,
  {
    record_count: number;
    last_ingest_at: string | null;
    pending_deltas: number;
    state: string;
  }
>;

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private token: string | null = null,
    private fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  setToken(token: string | null): void {
    this.token = token;
  }

  listDeltas(attribute?: string): Promise<DeltaEntry[]> {
    const suffix = attribute ? `?attribute=${encodeURIComponent(attribute)}` : "";
    return this.request("GET", `/deltas${suffix}`);
  }

  resolveDelta(entryId: string, canonical: string): Promise<ResolveResult> {
    return this.request("POST", `/deltas/${entryId}/resolve`, { canonical }, true);
  }

  traverse(body: TraverseRequest): Promise<TraverseResult> {
    return this.request("POST", "/kg/traverse", body);
  }

  landscape(region?: string, sector?: string): Promise<LandscapeView> {
    const params = new URLSearchParams();
    if (region) params.set("region", region);
    if (sector) params.set("sector", sector);
    const suffix = params.toString() ? `?${params}` : "";
    return this.request("GET", `/landscape${suffix}`);
  }

  search(body: SearchRequestBody): Promise<SearchResult> {
    return this.request("POST", "/search", body);
  }

  health(): Promise<HealthSummary> {
    return this.request("GET", "/health");
  }

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
    auth = false,
  ): Promise<T> {
    const headers: Record<string, string> = {};
    if (body !== undefined) headers["Content-Type"] = "application/json";
    if (auth && this.token) headers["Authorization"] = `Bearer ${this.token}`;
    const reply = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!reply.ok) {
      let detail = reply.statusText;
      try {
        const payload = (await reply.json()) as { detail?: string };
        if (payload.detail) detail = payload.detail;
      } catch {
        // non-JSON error body: keep the status text
      }
      throw new ApiError(reply.status, detail);
    }
    return (await reply.json()) as T;
  }
}
