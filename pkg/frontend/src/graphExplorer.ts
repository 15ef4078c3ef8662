// Interactive graph exploration. Each expansion issues one /kg/traverse
// call; results are cached per (subject, lexicon, limit) so collapsing and
// re-expanding a node never refetches, and nothing beyond the visible
// frontier is prefetched.

import { ApiClient, TraverseRequest, TraverseResult } from "./api.js";

function canonical(value: unknown): string {
  if (Array.isArray(value)) {
    return `[${value.map(canonical).join(",")}]`;
  }
  if (value && typeof value === "object") {
    const entries = Object.entries(value as Record<string, unknown>)
      .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
      .map(([k, v]) => `${JSON.stringify(k)}:${canonical(v)}`);
    return `{${entries.join(",")}}`;
  }
  return JSON.stringify(value);
}

export class GraphExplorer {
  private cache = new Map<string, TraverseResult>();
  expanded = new Set<string>();

  constructor(private api: ApiClient) {}

  async expand(request: TraverseRequest): Promise<TraverseResult> {
    const key = canonical(request as unknown);
    const cached = this.cache.get(key);
    if (cached) {
      this.expanded.add(cached.subject);
      return cached;
    }
    const result = await this.api.traverse(request);
    this.cache.set(key, result);
    this.expanded.add(result.subject);
    return result;
  }

  collapse(subjectId: string): void {
    this.expanded.delete(subjectId); // client-side only; cache survives
  }

  isExpanded(subjectId: string): boolean {
    return this.expanded.has(subjectId);
  }
}
