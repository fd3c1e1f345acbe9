/**
 * Typed client for the knowledge-service HTTP API.
 *
 * Every view in the console goes through this class; nothing in the UI
 * computes state from anywhere else, which makes the console double as a
 * conformance client for the documented endpoints.
 */

export interface QueryMetrics {
  pairs: number;
  cache_hits: number;
  teacher_calls: number;
  refreshed_sections: number;
  latency_ms: number;
}

export interface Reference {
  id: string;
  topic: string;
}

export interface QueryResponse {
  answer: string;
  route: string;
  references: Reference[];
  metrics: QueryMetrics;
  degraded: boolean;
  mode: string | null;
}

export interface SectionSummary {
  id: string;
  topic: string;
  summary: string;
  category: string;
  store: string;
  created_at: string;
  refresh_minutes: number;
  expired: boolean;
  minutes_remaining: number;
}

export interface SectionDetail extends SectionSummary {
  content: string;
}

export interface Stats {
  staging_count: number;
  canonical_count: number;
  cache_hit_rate: number;
  teacher_calls_total: number;
  queries: number;
}

export interface CompileEvent {
  staged_id: string;
  overlap_ids: string[];
  output_ids: string[];
}

export interface ConsolidationReport {
  started_at: string;
  finished_at: string | null;
  staging_in: number;
  discarded: number;
  direct_moves: number;
  compile_calls: number;
  compiled_out: number;
  canonical_consumed: number;
  deferred: number;
  canonical_before: number;
  canonical_after: number;
  compile_events: CompileEvent[];
}

export type StoreName = "staging" | "canonical";

/** Structured service failure: the pipeline stage plus a reason. */
export class ApiError extends Error {
  constructor(
    readonly stage: string,
    message: string,
    readonly status: number,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly base: string = "",
    private readonly fetchFn: FetchLike = (input, init) => globalThis.fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(this.base + path, init);
    } catch (err) {
      throw new ApiError("network", `service unreachable: ${String(err)}`, 0);
    }
    const body: unknown = await response.json().catch(() => null);
    if (!response.ok) {
      const record = (body ?? {}) as Record<string, unknown>;
      const stage = typeof record.stage === "string" ? record.stage : "service";
      const message =
        typeof record.message === "string" ? record.message : `HTTP ${response.status}`;
      throw new ApiError(stage, message, response.status);
    }
    return body as T;
  }

  health(): Promise<{ status: string }> {
    return this.request("/health");
  }

  stats(): Promise<Stats> {
    return this.request("/stats");
  }

  query(text: string, sessionId: string, mode?: string): Promise<QueryResponse> {
    const payload: Record<string, string> = { text, session_id: sessionId };
    if (mode) payload.mode = mode;
    return this.request("/query", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  sections(store: StoreName, category?: string): Promise<SectionSummary[]> {
    const params = new URLSearchParams({ store });
    if (category) params.set("category", category);
    return this.request(`/sections?${params.toString()}`);
  }

  section(id: string): Promise<SectionDetail> {
    return this.request(`/sections/${encodeURIComponent(id)}`);
  }

  consolidate(): Promise<ConsolidationReport> {
    return this.request("/consolidate", { method: "POST" });
  }
}
