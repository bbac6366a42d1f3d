import { describe, expect, it } from "vitest";

import type { CheckDecidedEvent, ReviewItem, StreamEvent } from "../src/api.js";
import { ConsoleStore } from "../src/state.js";
import { parseSseFrame } from "../src/api.js";

function checkEvent(overrides: Partial<CheckDecidedEvent> = {}): StreamEvent {
  return {
    event: "check_decided",
    data: {
      record_id: 1,
      session_id: "s1",
      call_id: "c1",
      phase: "pre",
      tool: "read_file",
      policy_version: 1,
      final: { verdict: "allow", via: "default", reason: "", review_id: null },
      timestamp: "2026-08-09T10:00:00.000Z",
      ...overrides,
    },
  };
}

function reviewItem(overrides: Partial<ReviewItem> = {}): ReviewItem {
  return {
    review_id: "rev_1",
    call_id: "c9",
    session_id: "s1",
    created: 1,
    timeout_at: 301,
    on_timeout: "deny",
    state: "pending",
    context: { tool: "pay", phase: "pre" },
    ...overrides,
  };
}

describe("ConsoleStore", () => {
  it("tracks sessions and their per-session counters", () => {
    const store = new ConsoleStore();
    store.apply({
      event: "session_started",
      data: {
        session_id: "s1",
        principal: { agent_id: "a1", role: "analyst", trust_level: 2, extra: {} },
        timestamp: "2026-08-09T10:00:00.000Z",
      },
    });
    store.apply(checkEvent());
    store.apply(checkEvent({
      record_id: 2, call_id: "c2", tool: "send_email",
      final: { verdict: "deny", via: "rule", reason: "exfil", review_id: null },
    }));
    const sessions = store.sessionList();
    expect(sessions).toHaveLength(1);
    expect(sessions[0]).toMatchObject({
      agentId: "a1", checkCount: 2, denyCount: 1, lastTool: "send_email",
    });
  });

  it("review items move pending -> resolved and leave the inbox", () => {
    const store = new ConsoleStore();
    store.apply({ event: "review_pending", data: reviewItem() });
    expect(store.pendingReviews()).toHaveLength(1);
    store.apply({
      event: "review_resolved",
      data: reviewItem({
        state: "resolved",
        resolution: { verdict: "allow", reviewer: "op", reason: "ok", resolved_at: 5 },
      }),
    });
    expect(store.pendingReviews()).toHaveLength(0);
    expect(store.reviews.get("rev_1")?.state).toBe("resolved");
  });

  it("keeps activity bounded and in arrival order", () => {
    const store = new ConsoleStore();
    for (let i = 1; i <= 600; i += 1) {
      store.apply(checkEvent({ record_id: i, call_id: `c${i}` }));
    }
    expect(store.activity).toHaveLength(500);
    expect(store.decidedRecordIds()[0]).toBe(101);
    expect(store.decidedRecordIds().at(-1)).toBe(600);
  });

  it("tracks the policy version from updates and checks", () => {
    const store = new ConsoleStore();
    store.apply({
      event: "policy_updated",
      data: { version: 3, actor: "admin-api", rule_count: 2, timestamp: "t" },
    });
    expect(store.policyVersion).toBe(3);
    store.apply(checkEvent({ policy_version: 4 }));
    expect(store.policyVersion).toBe(4);
  });
});

describe("parseSseFrame", () => {
  it("parses event/data frames", () => {
    const frame = 'event: check_decided\ndata: {"record_id": 7}';
    expect(parseSseFrame(frame)).toEqual({ event: "check_decided", data: { record_id: 7 } });
  });

  it("ignores comments and malformed frames", () => {
    expect(parseSseFrame(": keep-alive")).toBeNull();
    expect(parseSseFrame("event: x")).toBeNull();
    expect(parseSseFrame("event: x\ndata: {nope")).toBeNull();
  });
});
