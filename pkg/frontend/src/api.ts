/**
 * Typed client for the control server's HTTP+SSE API.
 *
 * Works in the browser and under node 20 (both provide fetch + ReadableStream).
 * The event stream is read via fetch rather than EventSource so the admin
 * bearer token can travel in a header.
 */

export interface Decision {
  verdict: "allow" | "deny";
  via: "rule" | "llm" | "review" | "timeout" | "default";
  reason: string;
  review_id: string | null;
}

export interface Diagnostic {
  severity: "error" | "warning" | "note";
  code: string;
  message: string;
  line: number;
  col: number;
}

export interface SessionStartedEvent {
  session_id: string;
  principal: {
    agent_id: string;
    role: string;
    trust_level: number;
    extra: Record<string, string>;
  };
  timestamp: string;
}

export interface CheckDecidedEvent {
  record_id: number;
  session_id: string;
  call_id: string;
  phase: "pre" | "post";
  tool: string | null;
  policy_version: number;
  final: Decision;
  timestamp: string;
}

export interface ReviewResolution {
  verdict: "allow" | "deny";
  reviewer: string;
  reason: string;
  resolved_at: number;
}

export interface ReviewItem {
  review_id: string;
  call_id: string;
  session_id: string;
  created: number;
  timeout_at: number;
  on_timeout: "allow" | "deny";
  state: "pending" | "resolved" | "timed_out";
  context: {
    phase?: string;
    tool?: string;
    event?: Record<string, unknown>;
    rule_ids?: string[];
    llm_rationale?: Record<string, string>;
    [key: string]: unknown;
  };
  resolution?: ReviewResolution;
}

export interface PolicyUpdatedEvent {
  version: number;
  actor: string | null;
  rule_count: number | null;
  timestamp: string;
}

export type StreamEvent =
  | { event: "session_started"; data: SessionStartedEvent }
  | { event: "check_decided"; data: CheckDecidedEvent }
  | { event: "review_pending"; data: ReviewItem }
  | { event: "review_resolved"; data: ReviewItem }
  | { event: "policy_updated"; data: PolicyUpdatedEvent };

export interface AuditRecord {
  record_id: number;
  kind: "check" | "policy_update";
  timestamp: string;
  session_id?: string;
  call_id?: string;
  phase?: "pre" | "post";
  tool?: string | null;
  policy_version: number;
  matched?: Array<{ rule_id: string; effect_kind: string; errored: boolean }>;
  final?: Decision;
  latency_ms?: number;
  reviewer?: { name: string; reason: string } | null;
  [key: string]: unknown;
}

export interface TemplateParam {
  name: string;
  label: string;
  kind: "ident" | "string" | "number" | "duration" | "choice";
  default?: string;
  choices?: string[];
}

export interface RuleTemplate {
  id: string;
  title: string;
  description: string;
  params: TemplateParam[];
  body: string;
}

export interface AuditQuery {
  session_id?: string;
  decision?: "allow" | "deny";
  rule_id?: string;
  phase?: "pre" | "post";
  kind?: "check" | "policy_update";
  after?: number;
  limit?: number;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
    readonly diagnostics: Diagnostic[] = [],
  ) {
    super(message);
  }
}

async function parseError(response: Response): Promise<ApiError> {
  let message = `${response.status} ${response.statusText}`;
  let diagnostics: Diagnostic[] = [];
  try {
    const body = await response.json();
    if (typeof body.error === "string") message = body.error;
    if (Array.isArray(body.diagnostics)) diagnostics = body.diagnostics;
  } catch {
    // non-JSON error body; keep the status line
  }
  return new ApiError(response.status, message, diagnostics);
}

export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private readonly adminToken: string,
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private headers(extra: Record<string, string> = {}): Record<string, string> {
    return { Authorization: `Bearer ${this.adminToken}`, ...extra };
  }

  private async request<T>(path: string, init: RequestInit = {}): Promise<T> {
    const response = await fetch(this.baseUrl + path, {
      ...init,
      headers: this.headers((init.headers as Record<string, string>) ?? {}),
    });
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as T;
  }

  getPolicies(): Promise<{ version: number; text: string }> {
    return this.request("/v1/policies");
  }

  /** Atomically activate new policy text; throws ApiError with diagnostics on rejection. */
  putPolicies(text: string): Promise<{ version: number; diagnostics: Diagnostic[] }> {
    return this.request("/v1/policies", {
      method: "PUT",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ text }),
    });
  }

  async pendingReviews(): Promise<ReviewItem[]> {
    const body = await this.request<{ reviews: ReviewItem[] }>("/v1/reviews/pending");
    return body.reviews;
  }

  resolveReview(
    reviewId: string,
    verdict: "allow" | "deny",
    reviewer: string,
    reason: string,
  ): Promise<{ review_id: string; decision: Decision }> {
    return this.request(`/v1/reviews/${encodeURIComponent(reviewId)}/resolve`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ verdict, reviewer, reason }),
    });
  }

  queryAudit(query: AuditQuery = {}): Promise<{ records: AuditRecord[]; next_after: number | null }> {
    const params = new URLSearchParams();
    for (const [key, value] of Object.entries(query)) {
      if (value !== undefined && value !== null) params.set(key, String(value));
    }
    const suffix = params.toString() ? `?${params}` : "";
    return this.request(`/v1/audit${suffix}`);
  }

  async getTemplates(): Promise<RuleTemplate[]> {
    const body = await this.request<{ templates: RuleTemplate[] }>("/v1/templates");
    return body.templates;
  }

  /**
   * Consume the live event stream, invoking onEvent per frame, until the
   * signal aborts or the server closes the stream.
   */
  async subscribe(onEvent: (event: StreamEvent) => void, signal?: AbortSignal): Promise<void> {
    const response = await fetch(`${this.baseUrl}/v1/stream`, {
      headers: this.headers(),
      signal,
    });
    if (!response.ok || response.body === null) {
      throw await parseError(response);
    }
    const reader = response.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    try {
      for (;;) {
        const { value, done } = await reader.read();
        if (done) break;
        buffer += decoder.decode(value, { stream: true });
        let boundary = buffer.indexOf("\n\n");
        while (boundary >= 0) {
          const frame = buffer.slice(0, boundary);
          buffer = buffer.slice(boundary + 2);
          const parsed = parseSseFrame(frame);
          if (parsed) onEvent(parsed);
          boundary = buffer.indexOf("\n\n");
        }
      }
    } finally {
      reader.releaseLock();
    }
  }
}

export function parseSseFrame(frame: string): StreamEvent | null {
  let eventType = "";
  const dataLines: string[] = [];
  for (const line of frame.split("\n")) {
    if (line.startsWith(":")) continue; // comment / keep-alive
    if (line.startsWith("event:")) eventType = line.slice(6).trim();
    else if (line.startsWith("data:")) dataLines.push(line.slice(5).trim());
  }
  if (!eventType || dataLines.length === 0) return null;
  try {
    return { event: eventType, data: JSON.parse(dataLines.join("\n")) } as StreamEvent;
  } catch {
    return null;
  }
}
