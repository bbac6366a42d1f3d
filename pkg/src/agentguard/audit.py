"""Append-only audit log: newline-delimited JSON records plus a sidecar offset index.

Records are immutable once written, record ids are dense and strictly
increasing, and a record is durable before the check's decision is released
(write-ahead contract shared with session state, which is rebuilt from this
log on startup). A torn final line left by a crash is truncated on open.
The record schema is documented in docs/audit-schema.md.
"""

from __future__ import annotations

import json
import logging
import os
import struct
import threading
from pathlib import Path
from typing import Any, Callable, Iterator, Optional

from .bus import Broadcaster, Subscription

logger = logging.getLogger(__name__)

_OFFSET = struct.Struct("<Q")

KIND_CHECK = "check"
KIND_POLICY_UPDATE = "policy_update"


class AuditFailure(Exception):
    """The record could not be durably written; the caller must fail the check."""


class AuditStore:
    def __init__(
        self,
        path: str | os.PathLike[str],
        *,
        fsync: bool = False,
        size_warn_bytes: int = 512 * 1024 * 1024,
    ) -> None:
        self.path = Path(path)
        self._fsync = fsync
        self._size_warn_bytes = size_warn_bytes
        self._size_warned = False
        self._lock = threading.Lock()
        self._broadcaster = Broadcaster()
        self._listeners: list[Callable[[dict[str, Any]], None]] = []
        # Test hook: runs after the durable write, before the caller observes
        # the new record id; lets crash-recovery tests cut in at that instant.
        self.post_append_hook: Optional[Callable[[dict[str, Any]], None]] = None

        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.touch(exist_ok=True)
        self._offsets: list[int] = []
        self._recover()
        self._append_fh = open(self.path, "ab", buffering=0)
        self._read_fd = os.open(self.path, os.O_RDONLY)

    # recovery ----------------------------------------------------------------
    def _index_path(self) -> Path:
        return self.path.with_name(self.path.name + ".idx")

    def _recover(self) -> None:
        size = self.path.stat().st_size
        offsets = self._load_index(size)
        scan_from = offsets[-1] if offsets else 0
        if offsets:
            # The last indexed offset may point at a torn record; rescan it.
            offsets.pop()
        with open(self.path, "rb") as fh:
            fh.seek(scan_from)
            pos = scan_from
            while True:
                line = fh.readline()
                if not line:
                    break
                if not line.endswith(b"\n"):
                    logger.warning("audit log %s: truncating torn final record at byte %d",
                                   self.path, pos)
                    self._truncate_to(pos)
                    break
                try:
                    json.loads(line)
                except json.JSONDecodeError:
                    logger.warning("audit log %s: truncating unreadable final record at byte %d",
                                   self.path, pos)
                    self._truncate_to(pos)
                    break
                offsets.append(pos)
                pos += len(line)
        self._offsets = offsets
        self._write_index()

    def _load_index(self, file_size: int) -> list[int]:
        index_path = self._index_path()
        if not index_path.exists():
            return []
        raw = index_path.read_bytes()
        if len(raw) % _OFFSET.size != 0:
            logger.warning("audit index %s is malformed; rebuilding", index_path)
            return []
        offsets = [_OFFSET.unpack_from(raw, i)[0] for i in range(0, len(raw), _OFFSET.size)]
        if offsets and (offsets[0] != 0 or any(a >= b for a, b in zip(offsets, offsets[1:]))
                        or offsets[-1] >= file_size):
            logger.warning("audit index %s is inconsistent; rebuilding", index_path)
            return []
        return offsets

    def _write_index(self) -> None:
        data = b"".join(_OFFSET.pack(offset) for offset in self._offsets)
        self._index_path().write_bytes(data)

    def _truncate_to(self, size: int) -> None:
        with open(self.path, "rb+") as fh:
            fh.truncate(size)

    # append --------------------------------------------------------------------
    def append(self, record: dict[str, Any]) -> int:
        """Durably write one record and return its id. Serialized internally."""
        if "record_id" in record:
            raise ValueError("record_id is assigned by the store")
        with self._lock:
            record_id = len(self._offsets) + 1
            full = {"record_id": record_id, **record}
            try:
                line = json.dumps(full, ensure_ascii=False, separators=(",", ":")) + "\n"
            except (TypeError, ValueError) as exc:
                raise AuditFailure(f"record not serializable: {exc}") from exc
            encoded = line.encode("utf-8")
            try:
                end = os.fstat(self._append_fh.fileno()).st_size
                self._append_fh.write(encoded)
                if self._fsync:
                    os.fsync(self._append_fh.fileno())
            except OSError as exc:
                raise AuditFailure(f"audit write failed: {exc}") from exc
            self._offsets.append(end)
            try:
                with open(self._index_path(), "ab") as idx:
                    idx.write(_OFFSET.pack(end))
            except OSError:
                logger.warning("audit index append failed; index will rebuild on restart")
            self._warn_if_large(end + len(encoded))
            if self.post_append_hook is not None:
                self.post_append_hook(full)
            for listener in self._listeners:
                listener(full)
            self._broadcaster.publish(full)
            return record_id

    def _warn_if_large(self, size: int) -> None:
        if not self._size_warned and size > self._size_warn_bytes:
            self._size_warned = True
            logger.warning("audit log %s exceeds %d bytes; rotation is not automatic",
                           self.path, self._size_warn_bytes)

    # reads ----------------------------------------------------------------------
    def __len__(self) -> int:
        with self._lock:
            return len(self._offsets)

    def get(self, record_id: int) -> dict[str, Any]:
        raw = self.get_raw(record_id)
        return json.loads(raw)

    def get_raw(self, record_id: int) -> bytes:
        """Exact stored bytes of one record (without the trailing newline)."""
        with self._lock:
            if not 1 <= record_id <= len(self._offsets):
                raise KeyError(record_id)
            start = self._offsets[record_id - 1]
            end = self._offsets[record_id] if record_id < len(self._offsets) else None
        if end is None:
            end = os.fstat(self._read_fd).st_size
        data = os.pread(self._read_fd, end - start, start)
        return data.rstrip(b"\n")

    def iter_records(self, start_id: int = 1) -> Iterator[dict[str, Any]]:
        record_id = start_id
        while True:
            try:
                yield self.get(record_id)
            except KeyError:
                return
            record_id += 1

    def query(
        self,
        *,
        session_id: Optional[str] = None,
        decision: Optional[str] = None,
        rule_id: Optional[str] = None,
        phase: Optional[str] = None,
        kind: Optional[str] = None,
        since: Optional[str] = None,
        until: Optional[str] = None,
        after: int = 0,
        limit: int = 100,
    ) -> tuple[list[dict[str, Any]], Optional[int]]:
        """Conjunctive filters, results ordered by record_id; paginate with ``after``."""
        out: list[dict[str, Any]] = []
        last_seen = after
        for record in self.iter_records(after + 1):
            last_seen = record["record_id"]
            if kind and record.get("kind") != kind:
                continue
            if session_id and record.get("session_id") != session_id:
                continue
            if phase and record.get("phase") != phase:
                continue
            if decision and (record.get("final") or {}).get("verdict") != decision:
                continue
            if rule_id and rule_id not in [m.get("rule_id") for m in record.get("matched") or []]:
                continue
            if since and record.get("timestamp", "") < since:
                continue
            if until and record.get("timestamp", "") > until:
                continue
            out.append(record)
            if len(out) >= limit:
                break
        next_after = last_seen if len(out) >= limit and last_seen < len(self) else None
        return out, next_after

    # live tail ---------------------------------------------------------------
    def subscribe(self, maxsize: int = 1024) -> Subscription:
        """Ordered stream of records appended after this call; slow consumers are dropped."""
        return self._broadcaster.subscribe(maxsize)

    def add_listener(self, listener: Callable[[dict[str, Any]], None]) -> None:
        """Synchronous hook inside the append path; must be fast and never block."""
        self._listeners.append(listener)

    def close(self) -> None:
        with self._lock:
            if getattr(self, "_closed", False):
                return
            self._closed = True
        self._broadcaster.close()
        try:
            self._append_fh.close()
        finally:
            os.close(self._read_fd)
