/**
 * Console state, fed exclusively by server events and queries.
 *
 * The console never evaluates policy itself: every decision shown here was
 * read from a server response, so replaying the SSE stream must reproduce
 * exactly what the audit log says.
 */

import type {
  CheckDecidedEvent,
  ReviewItem,
  SessionStartedEvent,
  StreamEvent,
} from "./api.js";

export interface SessionSummary {
  sessionId: string;
  agentId: string;
  role: string;
  trustLevel: number;
  startedAt: string;
  checkCount: number;
  denyCount: number;
  lastTool: string | null;
  lastSeen: string;
}

const MAX_ACTIVITY = 500;

export class ConsoleStore {
  connected = false;
  readonly sessions = new Map<string, SessionSummary>();
  readonly reviews = new Map<string, ReviewItem>();
  activity: CheckDecidedEvent[] = [];
  policyVersion: number | null = null;
  policyUpdates = 0;

  private listeners: Array<() => void> = [];

  onChange(listener: () => void): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  apply(event: StreamEvent): void {
    switch (event.event) {
      case "session_started":
        this.applySessionStarted(event.data);
        break;
      case "check_decided":
        this.applyCheckDecided(event.data);
        break;
      case "review_pending":
      case "review_resolved":
        this.reviews.set(event.data.review_id, event.data);
        break;
      case "policy_updated":
        this.policyVersion = event.data.version;
        this.policyUpdates += 1;
        break;
    }
    this.notify();
  }

  private applySessionStarted(data: SessionStartedEvent): void {
    this.sessions.set(data.session_id, {
      sessionId: data.session_id,
      agentId: data.principal.agent_id,
      role: data.principal.role,
      trustLevel: data.principal.trust_level,
      startedAt: data.timestamp,
      checkCount: 0,
      denyCount: 0,
      lastTool: null,
      lastSeen: data.timestamp,
    });
  }

  private applyCheckDecided(data: CheckDecidedEvent): void {
    this.activity.push(data);
    if (this.activity.length > MAX_ACTIVITY) {
      this.activity = this.activity.slice(-MAX_ACTIVITY);
    }
    if (this.policyVersion === null || data.policy_version > this.policyVersion) {
      this.policyVersion = data.policy_version;
    }
    let session = this.sessions.get(data.session_id);
    if (!session) {
      // stream joined late; synthesize what the events tell us
      session = {
        sessionId: data.session_id,
        agentId: "(unknown)",
        role: "",
        trustLevel: 0,
        startedAt: data.timestamp,
        checkCount: 0,
        denyCount: 0,
        lastTool: null,
        lastSeen: data.timestamp,
      };
      this.sessions.set(data.session_id, session);
    }
    if (data.phase === "pre") session.checkCount += 1;
    if (data.final.verdict === "deny") session.denyCount += 1;
    session.lastTool = data.tool;
    session.lastSeen = data.timestamp;
  }

  pendingReviews(): ReviewItem[] {
    return [...this.reviews.values()]
      .filter((item) => item.state === "pending")
      .sort((a, b) => a.created - b.created);
  }

  decidedRecordIds(): number[] {
    return this.activity.map((item) => item.record_id);
  }

  sessionList(): SessionSummary[] {
    return [...this.sessions.values()].sort((a, b) => (a.lastSeen < b.lastSeen ? 1 : -1));
  }
}
