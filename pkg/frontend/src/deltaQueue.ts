// DELTA triage queue. All mutations are pessimistic: a row only leaves the
// queue after the server confirms, and the view re-fetches after every
// resolve so it always reflects server state.

import { ApiClient, ApiError, DeltaEntry } from "./api.js";

export type TriageOutcome =
  | { kind: "resolved"; retroApplied: number; dictionaryVersion: number }
  | { kind: "conflict" }
  | { kind: "unauthorized" }
  | { kind: "invalid"; detail: string }
  | { kind: "offline" };

export class DeltaQueue {
  rows: DeltaEntry[] = [];
  selected: string | null = null;
  busy = false;

  constructor(private api: ApiClient) {}

  async refresh(): Promise<void> {
    const rows = await this.api.listDeltas();
    // server orders by occurrence; keep the view contract explicit anyway
    this.rows = [...rows].sort((a, b) => b.occurrence_count - a.occurrence_count);
    if (this.selected && !this.rows.some((r) => r.entry_id === this.selected)) {
      this.selected = null;
    }
  }

  select(entryId: string | null): void {
    this.selected = entryId;
  }

  async triage(entryId: string, canonical: string): Promise<TriageOutcome> {
    this.busy = true;
    try {
      const result = await this.api.resolveDelta(entryId, canonical);
      await this.refresh();
      return {
        kind: "resolved",
        retroApplied: result.retro_applied,
        dictionaryVersion: result.dictionary_version,
      };
    } catch (error) {
      if (error instanceof ApiError) {
        if (error.status === 401) return { kind: "unauthorized" };
        if (error.status === 409) {
          await this.refresh(); // resolved elsewhere: drop the stale row
          return { kind: "conflict" };
        }
        return { kind: "invalid", detail: error.message };
      }
      // network failure: keep the row, let the operator retry
      return { kind: "offline" };
    } finally {
      this.busy = false;
    }
  }
}
