"""Concurrent session tracking: per-session ordered histories with server-assigned seq.

Operations on different sessions proceed concurrently; operations on the same
session are serialized by a per-session lock, so callers need no external
coordination. History views are immutable snapshots.
"""

from __future__ import annotations

import threading
import uuid
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterator, Optional

from .engine import Evaluation, HistoryItem
from .model import Principal, ToolCallEvent, ToolResultEvent

ACTIVE = "active"
ENDED = "ended"
EXPIRED = "expired"

DEFAULT_IDLE_TIMEOUT = 24 * 3600.0


class SessionError(Exception):
    pass


class UnknownSession(SessionError):
    pass


class SessionEnded(SessionError):
    """The session is no longer active (ended or expired)."""


class UnknownCall(SessionError):
    pass


class DuplicateResult(SessionError):
    """A result was already attached to this call."""


@dataclass
class HistoryEntry(HistoryItem):
    """A call plus everything learned about it afterwards."""

    evaluation: Optional[Evaluation] = None
    post_evaluation: Optional[Evaluation] = None


@dataclass
class SessionRecord:
    session_id: str
    principal: Principal
    created: float
    last_active: float
    status: str = ACTIVE
    entries: list[HistoryEntry] = field(default_factory=list)
    lock: threading.RLock = field(default_factory=threading.RLock, repr=False)
    _next_seq: int = 1

    def next_seq(self) -> int:
        seq = self._next_seq
        self._next_seq += 1
        return seq

    def history_view(self, before_seq: int) -> tuple[HistoryEntry, ...]:
        with self.lock:
            return tuple(entry for entry in self.entries if entry.event.seq < before_seq)

    def append(self, event: ToolCallEvent, evaluation: Optional[Evaluation]) -> int:
        with self.lock:
            expected = self.entries[-1].event.seq + 1 if self.entries else 1
            if event.seq != expected:
                raise SessionError(
                    f"event seq {event.seq} out of order (expected {expected})")
            self.entries.append(HistoryEntry(event=event, evaluation=evaluation))
            return event.seq


class SessionStore:
    def __init__(self, clock) -> None:
        self._clock = clock
        self._lock = threading.Lock()
        self._sessions: dict[str, SessionRecord] = {}

    # lifecycle ------------------------------------------------------------
    def create_session(self, principal: Principal, session_id: Optional[str] = None) -> str:
        now = self._clock.now()
        sid = session_id or f"sess_{uuid.uuid4().hex[:16]}"
        record = SessionRecord(session_id=sid, principal=principal, created=now, last_active=now)
        with self._lock:
            if sid in self._sessions:
                raise SessionError(f"session id {sid!r} already exists")
            self._sessions[sid] = record
        return sid

    def get(self, session_id: str) -> SessionRecord:
        with self._lock:
            record = self._sessions.get(session_id)
        if record is None:
            raise UnknownSession(session_id)
        return record

    @contextmanager
    def session(self, session_id: str) -> Iterator[SessionRecord]:
        """Hold the per-session lock; raises if the session is not active."""
        record = self.get(session_id)
        with record.lock:
            if record.status != ACTIVE:
                raise SessionEnded(session_id)
            record.last_active = self._clock.now()
            yield record

    def end_session(self, session_id: str) -> None:
        record = self.get(session_id)
        with record.lock:
            if record.status == ACTIVE:
                record.status = ENDED

    def expire_idle(self, now: Optional[float] = None,
                    idle_timeout: float = DEFAULT_IDLE_TIMEOUT) -> list[str]:
        """Flip long-idle sessions to expired; their histories stay queryable."""
        instant = self._clock.now() if now is None else now
        expired: list[str] = []
        with self._lock:
            records = list(self._sessions.values())
        for record in records:
            with record.lock:
                if record.status == ACTIVE and instant - record.last_active > idle_timeout:
                    record.status = EXPIRED
                    expired.append(record.session_id)
        return expired

    def list_sessions(self) -> list[SessionRecord]:
        with self._lock:
            return list(self._sessions.values())

    # spec-level operations -------------------------------------------------
    def append_event(self, session_id: str, event: ToolCallEvent,
                     evaluation: Optional[Evaluation]) -> int:
        with self.session(session_id) as record:
            return record.append(event, evaluation)

    def history_view(self, session_id: str, before_seq: int) -> tuple[HistoryEntry, ...]:
        return self.get(session_id).history_view(before_seq)

    # results ----------------------------------------------------------------
    def attach_result(self, session_id: str, call_id: str, result_event: ToolResultEvent,
                      post_evaluation: Optional[Evaluation]) -> HistoryEntry:
        record = self.get(session_id)
        with record.lock:
            for entry in record.entries:
                if entry.event.call_id == call_id:
                    if entry.result_event is not None:
                        raise DuplicateResult(call_id)
                    entry.result_event = result_event
                    entry.post_evaluation = post_evaluation
                    record.last_active = self._clock.now()
                    return entry
        raise UnknownCall(call_id)

    # restart support ---------------------------------------------------------
    def restore_session(self, session_id: str, principal: Principal,
                        created: float, last_active: float) -> SessionRecord:
        with self._lock:
            record = self._sessions.get(session_id)
            if record is None:
                record = SessionRecord(session_id=session_id, principal=principal,
                                       created=created, last_active=last_active)
                self._sessions[session_id] = record
            return record

    def restore_entry(self, session_id: str, event: ToolCallEvent) -> None:
        record = self.get(session_id)
        with record.lock:
            record.entries.append(HistoryEntry(event=event))
            record._next_seq = max(record._next_seq, event.seq + 1)
            record.last_active = max(record.last_active, event.timestamp)
