"""Control server over real HTTP: checks, reviews, policy updates, SSE, fail modes."""

from __future__ import annotations

import json
import threading
import time

import pytest
import requests

from agentguard.audit import AuditFailure
from agentguard.clock import ManualClock
from conftest import ADMIN_HEADERS, SseReader, check, create_session

REVIEW_POLICY = """
rule pay_review {
  phase: pre
  when: tool.name == "pay" and args.amount >= 100
  effect: review(timeout: 1s, on_timeout: deny)
  reason: "large payment"
}
"""

POST_POLICY = """
rule cred_leak {
  phase: post
  when: result.text matches "AKIA[0-9A-Z]{16}"
  effect: deny
  reason: "credential-shaped result"
}
"""


def test_allow_all_policy_default_decision(live_server):
    handle = live_server()
    sid, headers = create_session(handle.base_url)
    response = check(handle.base_url, sid, headers, "anything", {"x": 1}, expect_status=200)
    body = response.json()
    assert body["decision"]["verdict"] == "allow"
    assert body["decision"]["via"] == "default"
    assert body["seq"] == 1


def test_unknown_session_404_and_bad_token_401(live_server):
    handle = live_server()
    response = requests.post(f"{handle.base_url}/v1/sessions/nope/check",
                             json={"tool": {"name": "t"}},
                             headers={"Authorization": "Bearer junk"}, timeout=5)
    assert response.status_code == 404
    sid, _ = create_session(handle.base_url)
    response = requests.post(f"{handle.base_url}/v1/sessions/{sid}/check",
                             json={"tool": {"name": "t"}},
                             headers={"Authorization": "Bearer wrong"}, timeout=5)
    assert response.status_code == 401


def test_malformed_event_422(live_server):
    handle = live_server()
    sid, headers = create_session(handle.base_url)
    response = requests.post(f"{handle.base_url}/v1/sessions/{sid}/check",
                             data=b"{not json", headers=headers, timeout=5)
    assert response.status_code == 422
    response = requests.post(f"{handle.base_url}/v1/sessions/{sid}/check",
                             json={"tool": {"name": ""}}, headers=headers, timeout=5)
    assert response.status_code == 422
    deep = "x"
    for _ in range(40):
        deep = [deep]
    response = requests.post(f"{handle.base_url}/v1/sessions/{sid}/check",
                             json={"tool": {"name": "t"}, "args": deep},
                             headers=headers, timeout=5)
    assert response.status_code == 422
    # a failed check must not wedge the session's seq chain
    ok = check(handle.base_url, sid, headers, "t", {"fine": True}, expect_status=200)
    assert ok.json()["seq"] == 1


def test_review_pending_then_resolved_via_api(live_server):
    handle = live_server(REVIEW_POLICY)
    sid, headers = create_session(handle.base_url)
    sse = SseReader(handle.base_url)

    response = check(handle.base_url, sid, headers, "pay", {"amount": 500},
                     wait=0, expect_status=202)
    decision_id = response.json()["decision_id"]

    pending_events = sse.wait_for("review_pending", timeout=1.0)  # visible within 1 s
    review_id = pending_events[0]["review_id"]
    listed = requests.get(f"{handle.base_url}/v1/reviews/pending",
                          headers=ADMIN_HEADERS, timeout=5).json()["reviews"]
    assert [item["review_id"] for item in listed] == [review_id]
    assert listed[0]["context"]["tool"] == "pay"

    resolve = requests.post(f"{handle.base_url}/v1/reviews/{review_id}/resolve",
                            json={"verdict": "allow", "reviewer": "alice", "reason": "approved"},
                            headers=ADMIN_HEADERS, timeout=5)
    assert resolve.status_code == 200
    poll = requests.get(f"{handle.base_url}/v1/decisions/{decision_id}?wait=5",
                        headers=headers, timeout=10)
    assert poll.status_code == 200
    decision = poll.json()["decision"]
    assert decision == {"verdict": "allow", "via": "review", "reason": "approved",
                        "review_id": review_id}

    # double resolution rejected, first decision stands
    again = requests.post(f"{handle.base_url}/v1/reviews/{review_id}/resolve",
                          json={"verdict": "deny", "reviewer": "bob", "reason": "no"},
                          headers=ADMIN_HEADERS, timeout=5)
    assert again.status_code == 409
    repoll = requests.get(f"{handle.base_url}/v1/decisions/{decision_id}",
                          headers=headers, timeout=5)
    assert repoll.json()["decision"]["verdict"] == "allow"

    sse.wait_for("review_resolved", timeout=2.0)
    # audit carries the reviewer identity
    records = requests.get(f"{handle.base_url}/v1/audit?kind=check",
                           headers=ADMIN_HEADERS, timeout=5).json()["records"]
    assert records[-1]["reviewer"] == {"name": "alice", "reason": "approved"}
    sse.close()


def test_review_timeout_with_injected_clock(live_server):
    clock = ManualClock()
    handle = live_server(REVIEW_POLICY, clock=clock)
    sid, headers = create_session(handle.base_url)
    response = check(handle.base_url, sid, headers, "pay", {"amount": 500},
                     wait=0, expect_status=202)
    decision_id = response.json()["decision_id"]
    clock.advance(2.0)  # past the 1 s review timeout
    poll = requests.get(f"{handle.base_url}/v1/decisions/{decision_id}?wait=5",
                        headers=headers, timeout=10)
    assert poll.status_code == 200
    decision = poll.json()["decision"]
    assert decision["verdict"] == "deny"
    assert decision["via"] == "timeout"


def test_check_wait_blocks_until_timeout_resolution(live_server):
    clock = ManualClock()
    handle = live_server(REVIEW_POLICY, clock=clock)
    sid, headers = create_session(handle.base_url)

    def advance_soon():
        time.sleep(0.3)
        clock.advance(5.0)

    threading.Thread(target=advance_soon).start()
    response = check(handle.base_url, sid, headers, "pay", {"amount": 500},
                     wait=10, expect_status=200)
    assert response.json()["decision"]["via"] == "timeout"


def test_report_flow_post_rules(live_server):
    handle = live_server(POST_POLICY)
    sid, headers = create_session(handle.base_url)
    call_id = check(handle.base_url, sid, headers, "fetch",
                    {"url": "https://api.example/k"}, expect_status=200).json()["call_id"]

    leak = requests.post(f"{handle.base_url}/v1/sessions/{sid}/report",
                         json={"call_id": call_id, "status": "ok",
                               "result": {"text": "token AKIA1234567890ABCDEF"}},
                         headers=headers, timeout=5)
    assert leak.status_code == 200
    assert leak.json()["decision"]["verdict"] == "deny"

    duplicate = requests.post(f"{handle.base_url}/v1/sessions/{sid}/report",
                              json={"call_id": call_id, "status": "ok",
                                    "result": {"text": "again"}},
                              headers=headers, timeout=5)
    assert duplicate.status_code == 409
    assert duplicate.json()["decision"]["verdict"] == "deny"  # first decision stands

    unknown = requests.post(f"{handle.base_url}/v1/sessions/{sid}/report",
                            json={"call_id": "no-such-call", "status": "ok", "result": {}},
                            headers=headers, timeout=5)
    assert unknown.status_code == 404

    # clean result on a fresh call is allowed through
    call2 = check(handle.base_url, sid, headers, "fetch", {"url": "https://x"},
                  expect_status=200).json()["call_id"]
    clean = requests.post(f"{handle.base_url}/v1/sessions/{sid}/report",
                          json={"call_id": call2, "status": "ok",
                                "result": {"text": "nothing"}},
                          headers=headers, timeout=5)
    assert clean.status_code == 200
    assert clean.json()["decision"]["verdict"] == "allow"

    # both phases audited for the leaking call
    records = requests.get(f"{handle.base_url}/v1/audit?kind=check",
                           headers=ADMIN_HEADERS, timeout=5).json()["records"]
    phases = [(r["phase"], r["final"]["verdict"]) for r in records if r["call_id"] == call_id]
    assert phases == [("pre", "allow"), ("post", "deny")]


def test_report_on_denied_call_rejected(live_server):
    handle = live_server('rule no_shell { when: tool.name == "shell" effect: deny }')
    sid, headers = create_session(handle.base_url)
    denied_call = check(handle.base_url, sid, headers, "shell", {},
                        expect_status=200).json()["call_id"]
    response = requests.post(f"{handle.base_url}/v1/sessions/{sid}/report",
                             json={"call_id": denied_call, "status": "ok", "result": {}},
                             headers=headers, timeout=5)
    assert response.status_code == 409


def test_policy_get_put_and_dynamic_flip(live_server):
    handle = live_server()
    sid, headers = create_session(handle.base_url)
    assert check(handle.base_url, sid, headers, "wrench",
                 expect_status=200).json()["decision"]["verdict"] == "allow"

    current = requests.get(f"{handle.base_url}/v1/policies", headers=ADMIN_HEADERS, timeout=5)
    assert current.status_code == 200
    version_before = current.json()["version"]

    bad = requests.put(f"{handle.base_url}/v1/policies",
                       json={"text": "rule broken { when: ??? }"},
                       headers=ADMIN_HEADERS, timeout=5)
    assert bad.status_code == 400
    diags = bad.json()["diagnostics"]
    assert diags and all("line" in d and "col" in d for d in diags)
    unchanged = requests.get(f"{handle.base_url}/v1/policies", headers=ADMIN_HEADERS, timeout=5)
    assert unchanged.json()["version"] == version_before

    new_text = 'rule block_wrench { when: tool.name == "wrench" effect: deny reason: "nope" }'
    updated = requests.put(f"{handle.base_url}/v1/policies", json={"text": new_text},
                           headers=ADMIN_HEADERS, timeout=5)
    assert updated.status_code == 200
    version_after = updated.json()["version"]
    assert version_after == version_before + 1

    flipped = check(handle.base_url, sid, headers, "wrench", expect_status=200).json()
    assert flipped["decision"]["verdict"] == "deny"

    records = requests.get(f"{handle.base_url}/v1/audit", headers=ADMIN_HEADERS,
                           timeout=5).json()["records"]
    updates = [r for r in records if r["kind"] == "policy_update"]
    assert [u["policy_version"] for u in updates] == [version_before, version_after]
    checks = [r for r in records if r["kind"] == "check"]
    assert [c["policy_version"] for c in checks] == [version_before, version_after]


def test_concurrent_policy_updates_monotone_and_last_committed_wins(live_server):
    handle = live_server()
    results: list[tuple[int, str]] = []
    lock = threading.Lock()

    def updater(n: int):
        text = f'rule r_{n} {{ when: tool.name == "t{n}" effect: deny }}'
        response = requests.put(f"{handle.base_url}/v1/policies", json={"text": text},
                                headers=ADMIN_HEADERS, timeout=10)
        assert response.status_code == 200
        with lock:
            results.append((response.json()["version"], text))

    threads = [threading.Thread(target=updater, args=(n,)) for n in range(10)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    versions = sorted(v for v, _ in results)
    assert versions == list(range(2, 12))  # strictly increasing, no duplicates

    final = requests.get(f"{handle.base_url}/v1/policies", headers=ADMIN_HEADERS, timeout=5).json()
    last_version, last_text = max(results)
    assert final["version"] == last_version
    assert final["text"] == last_text


def test_sse_order_matches_audit_record_ids(live_server):
    handle = live_server()
    sse = SseReader(handle.base_url)
    sid, headers = create_session(handle.base_url)
    for i in range(100):
        check(handle.base_url, sid, headers, f"tool_{i}", expect_status=200)
    decided = sse.wait_for("check_decided", timeout=10.0, minimum=100)
    ids = [d["record_id"] for d in decided]
    assert ids == sorted(ids)
    audit_records = requests.get(f"{handle.base_url}/v1/audit?kind=check&limit=1000",
                                 headers=ADMIN_HEADERS, timeout=5).json()["records"]
    assert ids == [r["record_id"] for r in audit_records]
    session_events = sse.wait_for("session_started", timeout=2.0)
    assert session_events[0]["session_id"] == sid
    sse.close()


def test_admin_endpoints_require_token(live_server):
    handle = live_server()
    for path in ("/v1/policies", "/v1/reviews/pending", "/v1/audit", "/v1/stream", "/v1/templates"):
        response = requests.get(handle.base_url + path, timeout=5)
        assert response.status_code == 401, path
        response = requests.get(handle.base_url + path,
                                headers={"Authorization": "Bearer wrong"},
                                timeout=5, stream=True)
        assert response.status_code == 403, path
        response.close()


def test_fail_closed_returns_503_and_no_decision(live_server):
    handle = live_server()
    sid, headers = create_session(handle.base_url)

    def boom(_record):
        raise AuditFailure("injected storage failure")

    handle.service.audit.post_append_hook = boom
    response = check(handle.base_url, sid, headers, "t", expect_status=503)
    assert "audit" in response.json()["error"]
    handle.service.audit.post_append_hook = None
    check(handle.base_url, sid, headers, "t", expect_status=200)


def test_fail_open_releases_decision_unaudited(live_server):
    handle = live_server(config_overrides={"fail_mode": "open"})
    sid, headers = create_session(handle.base_url)

    def boom(_record):
        raise AuditFailure("injected storage failure")

    handle.service.audit.post_append_hook = boom
    response = check(handle.base_url, sid, headers, "t", expect_status=200)
    assert response.json()["decision"]["verdict"] == "allow"
    handle.service.audit.post_append_hook = None


def test_pending_review_on_one_session_never_delays_another(live_server):
    handle = live_server(REVIEW_POLICY)
    sid_a, headers_a = create_session(handle.base_url, agent_id="agent-a")
    sid_b, headers_b = create_session(handle.base_url, agent_id="agent-b")

    blocked_done = threading.Event()

    def blocked_check():
        check(handle.base_url, sid_a, headers_a, "pay", {"amount": 900}, wait=8)
        blocked_done.set()

    threading.Thread(target=blocked_check, daemon=True).start()
    time.sleep(0.2)  # session A is now parked on its review
    started = time.monotonic()
    response = check(handle.base_url, sid_b, headers_b, "noop", expect_status=200)
    elapsed = time.monotonic() - started
    assert response.json()["decision"]["verdict"] == "allow"
    assert elapsed < 1.0
    assert not blocked_done.is_set()
    # unblock A so teardown is quick
    review = requests.get(f"{handle.base_url}/v1/reviews/pending",
                          headers=ADMIN_HEADERS, timeout=5).json()["reviews"][0]
    requests.post(f"{handle.base_url}/v1/reviews/{review['review_id']}/resolve",
                  json={"verdict": "deny", "reviewer": "t", "reason": "cleanup"},
                  headers=ADMIN_HEADERS, timeout=5)
    assert blocked_done.wait(5)


def test_templates_endpoint_lists_catalog(live_server):
    handle = live_server()
    body = requests.get(f"{handle.base_url}/v1/templates",
                        headers=ADMIN_HEADERS, timeout=5).json()
    ids = [t["id"] for t in body["templates"]]
    assert "block_destructive_shell" in ids
    assert "read_then_send_exfiltration" in ids


def test_console_404_when_unconfigured(live_server):
    handle = live_server()
    response = requests.get(f"{handle.base_url}/console/", timeout=5)
    assert response.status_code == 404


def test_health_endpoint_is_open(live_server):
    handle = live_server()
    assert requests.get(f"{handle.base_url}/healthz", timeout=5).json() == {"status": "ok"}


def test_restart_restores_sessions_and_versions(live_server, tmp_path):
    """Shut a server down, reopen the same audit log: history and versions carry over."""
    audit_path = tmp_path / "carryover.ndjson"
    handle = live_server(config_overrides={"audit_path": str(audit_path)})
    sid, headers = create_session(handle.base_url)
    check(handle.base_url, sid, headers, "read_file", {"path": "/x"}, expect_status=200)
    requests.put(f"{handle.base_url}/v1/policies",
                 json={"text": "rule z { when: tool.name == \"z\" effect: deny }"},
                 headers=ADMIN_HEADERS, timeout=5)
    old_version = requests.get(f"{handle.base_url}/v1/policies",
                               headers=ADMIN_HEADERS, timeout=5).json()["version"]
    handle.stop()

    relaunch = live_server(config_overrides={"audit_path": str(audit_path)})
    restored = relaunch.service.sessions.get(sid)
    assert [e.event.tool.name for e in restored.entries] == ["read_file"]
    new_version = requests.get(f"{relaunch.base_url}/v1/policies",
                               headers=ADMIN_HEADERS, timeout=5).json()["version"]
    assert new_version == old_version + 1  # restart republishes under a fresh version
    # the restored session has no token anymore: old credentials are rejected
    response = requests.post(f"{relaunch.base_url}/v1/sessions/{sid}/check",
                             json={"tool": {"name": "t"}}, headers=headers, timeout=5)
    assert response.status_code == 401


def test_version_pinning_under_concurrent_updates(live_server):
    """No check may mix rules from two policy versions."""
    handle = live_server('rule v1_marker { when: tool.name == "marked" effect: deny }')
    sid, headers = create_session(handle.base_url)
    stop = threading.Event()
    version_texts: dict[int, str] = {}
    lock = threading.Lock()

    def updater():
        n = 0
        while not stop.is_set():
            n += 1
            text = f'rule v_{n}_marker {{ when: tool.name == "marked" effect: deny }}'
            response = requests.put(f"{handle.base_url}/v1/policies", json={"text": text},
                                    headers=ADMIN_HEADERS, timeout=10)
            with lock:
                version_texts[response.json()["version"]] = text
            time.sleep(0.005)

    thread = threading.Thread(target=updater)
    thread.start()
    try:
        for _ in range(60):
            check(handle.base_url, sid, headers, "marked", expect_status=200)
    finally:
        stop.set()
        thread.join()

    records = requests.get(f"{handle.base_url}/v1/audit?kind=check&limit=1000",
                           headers=ADMIN_HEADERS, timeout=5).json()["records"]
    for record in records:
        version = record["policy_version"]
        for match in record["matched"]:
            if version == 1:
                assert match["rule_id"] == "v1_marker", record
            else:
                with lock:
                    text = version_texts[version]
                assert match["rule_id"] in text, record
