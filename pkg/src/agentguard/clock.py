"""Injectable clocks so timeout behavior is testable without real waiting."""

from __future__ import annotations

import threading
import time


class SystemClock:
    """Wall-clock time."""

    def now(self) -> float:
        return time.time()


class ManualClock:
    """A clock tests advance by hand; thread-safe."""

    def __init__(self, start: float = 1_700_000_000.0) -> None:
        self._now = start
        self._lock = threading.Lock()

    def now(self) -> float:
        with self._lock:
            return self._now

    def advance(self, seconds: float) -> float:
        with self._lock:
            self._now += seconds
            return self._now

    def set(self, instant: float) -> None:
        with self._lock:
            self._now = instant


class SteppingClock(ManualClock):
    """Advances a fixed step on every read; gives replay runs deterministic stamps."""

    def __init__(self, start: float = 0.0, step: float = 1.0) -> None:
        super().__init__(start)
        self._step = step

    def now(self) -> float:
        with self._lock:
            current = self._now
            self._now += self._step
            return current
