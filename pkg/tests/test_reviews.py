"""Review queue: terminal transitions, timeouts, resolve/expire races."""

from __future__ import annotations

import threading

import pytest

from agentguard.clock import ManualClock
from agentguard.reviews import AlreadyTerminal, ReviewQueue, UnknownReview


def make_queue() -> tuple[ReviewQueue, ManualClock]:
    clock = ManualClock()
    return ReviewQueue(clock), clock


def enqueue(queue: ReviewQueue, timeout: float = 300.0, on_timeout: str = "deny"):
    return queue.enqueue(call_id="c1", session_id="s1", timeout=timeout,
                         on_timeout=on_timeout, context={"phase": "pre"})


def test_enqueue_is_pending_with_distinct_ids():
    queue, _ = make_queue()
    a = enqueue(queue)
    b = enqueue(queue)
    assert a.state == "pending" and b.state == "pending"
    assert a.review_id != b.review_id
    assert {item.review_id for item in queue.list_pending()} == {a.review_id, b.review_id}


def test_resolve_returns_decision_and_is_exactly_once():
    queue, _ = make_queue()
    item = enqueue(queue)
    resolved, decision = queue.resolve(item.review_id, "deny", "alice", "not today")
    assert resolved.state == "resolved"
    assert decision.verdict == "deny" and decision.via == "review"
    assert decision.review_id == item.review_id
    with pytest.raises(AlreadyTerminal):
        queue.resolve(item.review_id, "allow", "bob", "changed my mind")
    assert resolved.resolution.reviewer == "alice"


def test_unknown_review():
    queue, _ = make_queue()
    with pytest.raises(UnknownReview):
        queue.resolve("rev_missing", "allow", "x", "")


def test_expire_nothing_pending():
    queue, _ = make_queue()
    assert queue.expire() == []


def test_expire_overdue_delivers_on_timeout_verdict():
    queue, clock = make_queue()
    item = enqueue(queue, timeout=10.0, on_timeout="deny")
    clock.advance(11)
    transitions = queue.expire()
    assert [t[0].review_id for t in transitions] == [item.review_id]
    decision = transitions[0][1]
    assert decision.verdict == "deny" and decision.via == "timeout"
    assert queue.get(item.review_id).state == "timed_out"
    with pytest.raises(AlreadyTerminal):
        queue.resolve(item.review_id, "allow", "late", "")


def test_clock_jump_expires_multiple_in_one_sweep():
    queue, clock = make_queue()
    first = enqueue(queue, timeout=5.0)
    second = enqueue(queue, timeout=8.0)
    clock.advance(100)
    expired_ids = {item.review_id for item, _ in queue.expire()}
    assert expired_ids == {first.review_id, second.review_id}


def test_resolution_exactly_at_deadline_single_winner():
    queue, clock = make_queue()
    item = enqueue(queue, timeout=5.0)
    clock.advance(5)  # exactly at the deadline
    outcomes: list[str] = []
    lock = threading.Lock()
    barrier = threading.Barrier(2)

    def resolver():
        barrier.wait()
        try:
            queue.resolve(item.review_id, "allow", "human", "ok")
            with lock:
                outcomes.append("resolved")
        except AlreadyTerminal:
            pass

    def expirer():
        barrier.wait()
        for transitioned, _ in queue.expire():
            if transitioned.review_id == item.review_id:
                with lock:
                    outcomes.append("timed_out")

    threads = [threading.Thread(target=resolver), threading.Thread(target=expirer)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(outcomes) == 1
    assert queue.get(item.review_id).state in ("resolved", "timed_out")


def test_race_exactly_once_terminality_many_iterations():
    """1000 injected-clock races between resolve and expire: one winner each time."""
    for i in range(1000):
        queue, clock = make_queue()
        item = enqueue(queue, timeout=1.0)
        clock.advance(1.0)
        wins: list[str] = []
        lock = threading.Lock()
        barrier = threading.Barrier(2)

        def resolver():
            barrier.wait()
            try:
                queue.resolve(item.review_id, "allow", "h", "")
                with lock:
                    wins.append("resolve")
            except AlreadyTerminal:
                pass

        def expirer():
            barrier.wait()
            got = queue.expire()
            if got:
                with lock:
                    wins.append("expire")

        threads = [threading.Thread(target=resolver), threading.Thread(target=expirer)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(wins) == 1, f"iteration {i}: winners {wins}"
        assert item.state in ("resolved", "timed_out")


def test_sweeper_bounds_pending_overstay(make_service):
    """A pending item never outlives its timeout by more than ~one sweep interval."""
    import time

    from agentguard.clock import SystemClock
    from agentguard.model import Principal, ToolDescriptor
    from agentguard.service import ServiceSettings

    service = make_service(
        'rule gate { when: tool.name == "pay" effect: review(timeout: 0.3s, on_timeout: deny) }',
        clock=SystemClock(),
        settings=ServiceSettings(review_sweep_interval=0.05),
    )
    service.start_maintenance()
    sid, _tok = service.create_session(Principal(agent_id="a", role="r", trust_level=1))
    result = service.check(sid, ToolDescriptor(name="pay"), {"amount": 1})
    assert result.decision is None
    deadline = time.monotonic() + 0.3 + 5 * 0.05 + 0.5  # timeout + sweeps + margin
    while time.monotonic() < deadline:
        item = service.reviews.get(service.pending_reviews()[0].review_id) \
            if service.pending_reviews() else None
        if item is None:
            break
        time.sleep(0.02)
    decision, _ = service.await_decision(result.decision_id, wait=1.0)
    assert decision is not None and decision.via == "timeout"
