"""In-process fan-out of ordered events to bounded subscriber queues.

Used by the audit log (record subscriptions) and the server (SSE stream).
Publishing never blocks: a subscriber that stops draining its queue is
dropped rather than stalling the publisher.
"""

from __future__ import annotations

import queue
import threading
from typing import Any, Optional

_CLOSED = object()


class Subscription:
    """One subscriber's bounded, ordered delivery queue."""

    def __init__(self, broadcaster: "Broadcaster", maxsize: int) -> None:
        self._broadcaster = broadcaster
        self._queue: queue.Queue[Any] = queue.Queue(maxsize=maxsize)
        self._closed = False

    def get(self, timeout: Optional[float] = None) -> Any:
        """Next item, or None on timeout; raises SubscriptionClosed once closed and drained."""
        if self._closed and self._queue.empty():
            raise SubscriptionClosed
        try:
            item = self._queue.get(timeout=timeout)
        except queue.Empty:
            if self._closed:
                raise SubscriptionClosed from None
            return None
        if item is _CLOSED:
            raise SubscriptionClosed
        return item

    def close(self) -> None:
        self._broadcaster.unsubscribe(self)

    # internal -----------------------------------------------------------
    def _offer(self, item: Any) -> bool:
        try:
            self._queue.put_nowait(item)
            return True
        except queue.Full:
            return False

    def _mark_closed(self) -> None:
        self._closed = True
        try:
            self._queue.put_nowait(_CLOSED)
        except queue.Full:
            pass


class SubscriptionClosed(Exception):
    """The subscription was closed (by the consumer, overflow, or shutdown)."""


class Broadcaster:
    def __init__(self, default_maxsize: int = 1024) -> None:
        self._default_maxsize = default_maxsize
        self._lock = threading.Lock()
        self._subs: list[Subscription] = []
        self._closed = False

    def subscribe(self, maxsize: Optional[int] = None) -> Subscription:
        sub = Subscription(self, maxsize or self._default_maxsize)
        with self._lock:
            if self._closed:
                sub._mark_closed()
            else:
                self._subs.append(sub)
        return sub

    def unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            if sub in self._subs:
                self._subs.remove(sub)
        sub._mark_closed()

    def publish(self, item: Any) -> None:
        """Deliver to all live subscribers in publish order; drop any that overflowed."""
        dropped: list[Subscription] = []
        with self._lock:
            for sub in self._subs:
                if not sub._offer(item):
                    dropped.append(sub)
            for sub in dropped:
                self._subs.remove(sub)
        for sub in dropped:
            sub._mark_closed()

    def close(self) -> None:
        with self._lock:
            self._closed = True
            subs, self._subs = self._subs, []
        for sub in subs:
            sub._mark_closed()
