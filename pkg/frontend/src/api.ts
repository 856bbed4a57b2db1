/** Typed fetch client for the library service. The server is the source of truth. */

import type {
  BulletInput,
  EntryDetail,
  EntryListResponse,
  HealthResponse,
  PreviewResponse,
  SaveResult,
  SearchResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: unknown,
  ) {
    super(`HTTP ${status}: ${JSON.stringify(detail)}`);
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly adminToken?: string,
  ) {}

  private headers(mutating: boolean): Record<string, string> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (mutating && this.adminToken) headers["X-Admin-Token"] = this.adminToken;
    return headers;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const resp = await fetch(`${this.baseUrl}${path}`, {
      method,
      headers: this.headers(method !== "GET"),
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = await resp.json().catch(() => null);
    if (!resp.ok) {
      throw new ApiError(resp.status, payload === null ? resp.statusText : payload.detail);
    }
    return payload as T;
  }

  health(): Promise<HealthResponse> {
    return this.request("GET", "/healthz");
  }

  listEntries(opts: { status?: string; offset?: number; limit?: number } = {}):
      Promise<EntryListResponse> {
    const params = new URLSearchParams();
    if (opts.status) params.set("status", opts.status);
    if (opts.offset !== undefined) params.set("offset", String(opts.offset));
    if (opts.limit !== undefined) params.set("limit", String(opts.limit));
    const qs = params.toString();
    return this.request("GET", `/v1/library/entries${qs ? `?${qs}` : ""}`);
  }

  searchEntries(query: string, k = 5): Promise<SearchResponse> {
    const params = new URLSearchParams({ query, k: String(k) });
    return this.request("GET", `/v1/library/entries?${params}`);
  }

  getEntry(entryId: number): Promise<EntryDetail> {
    return this.request("GET", `/v1/library/entries/${entryId}`);
  }

  /**
   * Optimistic-concurrency save: sends the revision the edit was based on.
   * A 409 is returned as a conflict result (with the server's current entry),
   * never silently applied.
   */
  async saveEntry(
    entryId: number,
    bullets: BulletInput[],
    editor: string,
    baseRevision: number,
  ): Promise<SaveResult> {
    try {
      const body = await this.request<{ revision: number }>(
        "PUT",
        `/v1/library/entries/${entryId}`,
        { bullets, editor, base_revision: baseRevision },
      );
      return { outcome: "saved", revision: body.revision };
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        const detail = err.detail as { base_revision: number; current_revision: number };
        const serverEntry = await this.getEntry(entryId);
        return {
          outcome: "conflict",
          conflict: {
            base_revision: detail.base_revision,
            current_revision: detail.current_revision,
          },
          serverEntry,
        };
      }
      throw err;
    }
  }

  approveEntry(entryId: number, editor: string): Promise<{ status: string; revision: number }> {
    return this.request("POST", `/v1/library/entries/${entryId}/approve`, { editor });
  }

  previewEntry(entryId: number, scenarioOverride?: string): Promise<PreviewResponse> {
    return this.request("POST", `/v1/library/entries/${entryId}/preview`, {
      scenario_override: scenarioOverride ?? null,
    });
  }

  reindex(): Promise<{ snapshot_version: number }> {
    return this.request("POST", "/v1/admin/reindex", {});
  }
}
