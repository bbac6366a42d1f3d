"""The wrapped-callable contract, end to end against a live server subprocess."""

from __future__ import annotations

import threading
import time

import pytest
import requests

from agentguard_client import GuardClient, GuardConfig, GuardDenied, GuardUnavailable, guard_tool
from agentguard_client.guard import jsonable


def test_allowed_tools_are_observationally_transparent(make_client):
    client = make_client()
    corpus = [
        (lambda: "constant", (), {}),
        (lambda x, y: x + y, (2, 40), {}),
        (lambda **kw: dict(sorted(kw.items())), (), {"b": 2, "a": [1, {"c": None}]}),
        (lambda items: [i * 2 for i in items], ([1, 2, 3],), {}),
    ]
    for func, args, kwargs in corpus:
        func.__name__ = "transparent_tool"
        wrapped = guard_tool(func, "transparent_tool", client=client)
        assert wrapped(*args, **kwargs) == func(*args, **kwargs)


def test_pre_deny_never_invokes_the_callable(make_client):
    client = make_client()
    calls = []

    def shell(command):
        calls.append(command)
        return "ran"

    wrapped = guard_tool(shell, "shell", client=client)
    with pytest.raises(GuardDenied) as excinfo:
        wrapped(command="rm -rf /")
    assert excinfo.value.phase == "pre"
    assert "shell banned" in excinfo.value.reason
    assert calls == []


def test_cross_tool_history_denies_second_step(make_client):
    client = make_client()
    read = guard_tool(lambda path: "secret contents", "read_file", client=client)
    send = guard_tool(lambda to: "sent", "send_email", client=client)
    assert read(path="/etc/passwd") == "secret contents"
    with pytest.raises(GuardDenied) as excinfo:
        send(to="attacker@example.com")
    assert "exfiltration" in excinfo.value.reason

    # a fresh session without the read is allowed to send
    fresh = make_client()
    send_fresh = guard_tool(lambda to: "sent", "send_email", client=fresh)
    assert send_fresh(to="boss@example.com") == "sent"


def test_post_deny_suppresses_result_after_execution(make_client):
    client = make_client()
    executions = []

    def fetch_keys():
        executions.append(1)
        return {"text": "token AKIA1234567890ABCDEF end"}

    wrapped = guard_tool(fetch_keys, "fetch_keys", client=client)
    with pytest.raises(GuardDenied) as excinfo:
        wrapped()
    assert excinfo.value.phase == "post"
    assert executions == [1]  # the tool ran; only its result was suppressed


def test_exactly_one_check_and_at_most_one_report_per_invocation(server, make_client):
    client = make_client(principal={"agent_id": "counting", "role": "r", "trust_level": 1})

    ok_tool = guard_tool(lambda: {"text": "fine"}, "counted_ok", client=client)
    ok_tool()

    def exploding():
        raise RuntimeError("tool blew up")

    bad_tool = guard_tool(exploding, "counted_boom", client=client)
    with pytest.raises(RuntimeError):
        bad_tool()

    records = server.audit_records(kind="check")
    ok_records = [(r["phase"], r["event"].get("status")) for r in records
                  if r["tool"] == "counted_ok"]
    boom_records = [(r["phase"], r["event"].get("status")) for r in records
                    if r["tool"] == "counted_boom"]
    assert ok_records == [("pre", None), ("post", "ok")]
    assert boom_records == [("pre", None), ("post", "error")]  # failure still reported once


def test_pending_review_blocks_then_enforces_resolution(server, make_client):
    client = make_client()
    pay = guard_tool(lambda amount: f"paid {amount}", "pay", client=client)

    def approve_soon():
        deadline = time.monotonic() + 5
        while time.monotonic() < deadline:
            pending = requests.get(f"{server.base_url}/v1/reviews/pending",
                                   headers=server.admin(), timeout=5).json()["reviews"]
            if pending:
                requests.post(
                    f"{server.base_url}/v1/reviews/{pending[0]['review_id']}/resolve",
                    json={"verdict": "allow", "reviewer": "tester", "reason": "go ahead"},
                    headers=server.admin(), timeout=5)
                return
            time.sleep(0.05)

    thread = threading.Thread(target=approve_soon)
    thread.start()
    try:
        assert pay(amount=5) == "paid 5"
    finally:
        thread.join()


def test_review_deadline_exceeded_raises_denied(make_client):
    client = make_client(check_wait=0.2, poll_interval=0.1, decision_deadline=0.6)
    pay = guard_tool(lambda amount: "paid", "pay", client=client)
    with pytest.raises(GuardDenied) as excinfo:
        pay(amount=1)
    assert "review deadline exceeded" in excinfo.value.reason


def test_fail_closed_blocks_when_server_unreachable():
    client = GuardClient(GuardConfig(
        server_url="http://127.0.0.1:9",  # nothing listens on the discard port
        principal={"agent_id": "x"},
        http_timeout=0.3,
    ))
    ran = []
    wrapped = guard_tool(lambda: ran.append(1), "t", client=client)
    with pytest.raises(GuardUnavailable):
        wrapped()
    assert ran == []


def test_fail_open_lets_tools_run_unchecked():
    client = GuardClient(GuardConfig(
        server_url="http://127.0.0.1:9",
        principal={"agent_id": "x"},
        fail_mode="open",
        http_timeout=0.3,
    ))
    wrapped = guard_tool(lambda: "went through", "t", client=client)
    assert wrapped() == "went through"


def test_wrapped_tools_are_thread_safe(make_client):
    client = make_client(principal={"agent_id": "threads", "role": "r", "trust_level": 1})
    wrapped = guard_tool(lambda n: n * n, "square", client=client)
    results: dict[int, int] = {}
    errors: list[Exception] = []
    lock = threading.Lock()

    def worker(n: int):
        try:
            value = wrapped(n=n)
            with lock:
                results[n] = value
        except Exception as exc:  # pragma: no cover
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(n,)) for n in range(12)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    assert results == {n: n * n for n in range(12)}


def test_jsonable_projects_non_json_values():
    class Thing:
        def __repr__(self):
            return "<thing>"

    assert jsonable({"a": (1, 2), "b": {3, }, "c": Thing()}) == {
        "a": [1, 2], "b": [3], "c": "<thing>"}
    assert jsonable([b"bytes"]) == ["b'bytes'"]
