"""Manual verification queue: hold a check pending, let a human decide, enforce timeouts.

``resolve`` and ``expire`` may race; a single lock-guarded state transition
per item guarantees exactly one terminal state and exactly one Decision. The
clock is injectable so deadline races are testable deterministically.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field
from typing import Any, Optional

from .model import Decision

PENDING = "pending"
RESOLVED = "resolved"
TIMED_OUT = "timed_out"


class ReviewError(Exception):
    pass


class UnknownReview(ReviewError):
    pass


class AlreadyTerminal(ReviewError):
    """The item was already resolved or timed out; the first decision stands."""


@dataclass
class Resolution:
    verdict: str
    reviewer: str
    reason: str
    resolved_at: float


@dataclass
class ReviewItem:
    review_id: str
    call_id: str
    session_id: str
    created: float
    timeout_at: float
    on_timeout: str
    state: str = PENDING
    resolution: Optional[Resolution] = None
    context: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "review_id": self.review_id,
            "call_id": self.call_id,
            "session_id": self.session_id,
            "created": self.created,
            "timeout_at": self.timeout_at,
            "on_timeout": self.on_timeout,
            "state": self.state,
            "context": self.context,
        }
        if self.resolution:
            out["resolution"] = {
                "verdict": self.resolution.verdict,
                "reviewer": self.resolution.reviewer,
                "reason": self.resolution.reason,
                "resolved_at": self.resolution.resolved_at,
            }
        return out


class ReviewQueue:
    def __init__(self, clock) -> None:
        self._clock = clock
        self._lock = threading.Lock()
        self._items: dict[str, ReviewItem] = {}

    def enqueue(self, *, call_id: str, session_id: str, timeout: float, on_timeout: str,
                context: Optional[dict[str, Any]] = None) -> ReviewItem:
        now = self._clock.now()
        item = ReviewItem(
            review_id=f"rev_{uuid.uuid4().hex[:16]}",
            call_id=call_id,
            session_id=session_id,
            created=now,
            timeout_at=now + timeout,
            on_timeout=on_timeout,
            context=context or {},
        )
        with self._lock:
            self._items[item.review_id] = item
        return item

    def get(self, review_id: str) -> ReviewItem:
        with self._lock:
            item = self._items.get(review_id)
        if item is None:
            raise UnknownReview(review_id)
        return item

    def list_pending(self) -> list[ReviewItem]:
        with self._lock:
            return [item for item in self._items.values() if item.state == PENDING]

    def resolve(self, review_id: str, verdict: str, reviewer: str, reason: str) -> tuple[ReviewItem, Decision]:
        """First resolution wins; later attempts raise AlreadyTerminal."""
        if verdict not in ("allow", "deny"):
            raise ReviewError(f"verdict must be 'allow' or 'deny', got {verdict!r}")
        with self._lock:
            item = self._items.get(review_id)
            if item is None:
                raise UnknownReview(review_id)
            if item.state != PENDING:
                raise AlreadyTerminal(review_id)
            item.state = RESOLVED
            item.resolution = Resolution(
                verdict=verdict, reviewer=reviewer, reason=reason,
                resolved_at=self._clock.now(),
            )
        decision = Decision(
            verdict=verdict,
            via="review",
            reason=reason or f"resolved by {reviewer}",
            review_id=review_id,
        )
        return item, decision

    def expire(self, now: Optional[float] = None) -> list[tuple[ReviewItem, Decision]]:
        """Time out every pending item past its deadline; returns the transitions won here."""
        instant = self._clock.now() if now is None else now
        expired: list[tuple[ReviewItem, Decision]] = []
        with self._lock:
            for item in self._items.values():
                if item.state == PENDING and instant >= item.timeout_at:
                    item.state = TIMED_OUT
                    decision = Decision(
                        verdict=item.on_timeout,
                        via="timeout",
                        reason=f"review {item.review_id} timed out after no resolution",
                        review_id=item.review_id,
                    )
                    expired.append((item, decision))
        return expired
