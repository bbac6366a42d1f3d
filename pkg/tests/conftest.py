"""Shared fixtures: in-process services and a live HTTP server on an ephemeral port."""

from __future__ import annotations

import threading
from pathlib import Path

import pytest
import requests

from agentguard.audit import AuditStore
from agentguard.clock import ManualClock
from agentguard.inspector import MockLlmBackend
from agentguard.server.config import ServerConfig
from agentguard.server.http import ServerHandle, build_service, start_server
from agentguard.service import GuardService, ServiceSettings

DATA_DIR = Path(__file__).parent / "data"

ALLOW_ALL_POLICY = "# empty: everything falls through to the default\n"


@pytest.fixture
def make_service(tmp_path):
    """Factory for in-process services; closes them on teardown."""
    created: list[GuardService] = []
    counter = [0]

    def factory(policy_text: str = ALLOW_ALL_POLICY, *, clock=None, settings=None,
                llm_backend=None, audit_path=None) -> GuardService:
        counter[0] += 1
        path = audit_path or tmp_path / f"audit_{counter[0]}.ndjson"
        service = GuardService(
            policy_text=policy_text,
            audit=AuditStore(path),
            clock=clock or ManualClock(),
            llm_backend=llm_backend if llm_backend is not None else MockLlmBackend(),
            settings=settings or ServiceSettings(review_sweep_interval=0.05),
        )
        created.append(service)
        return service

    yield factory
    for service in created:
        service.close()


@pytest.fixture
def live_server(tmp_path):
    """Factory for a real HTTP server bound to an ephemeral port."""
    handles: list[ServerHandle] = []
    counter = [0]

    def factory(policy_text: str = ALLOW_ALL_POLICY, *, clock=None, config_overrides=None):
        counter[0] += 1
        policy_path = tmp_path / f"policy_{counter[0]}.agp"
        policy_path.write_text(policy_text, encoding="utf-8")
        kwargs = dict(
            host="127.0.0.1",
            port=0,
            policy_path=str(policy_path),
            audit_path=str(tmp_path / f"server_audit_{counter[0]}.ndjson"),
            admin_token="test-admin-token",
            llm_backend="mock",
            review_sweep_interval=0.05,
            sse_heartbeat=0.25,
        )
        kwargs.update(config_overrides or {})
        config = ServerConfig(**kwargs)
        service = build_service(config, clock=clock)
        service.settings.review_sweep_interval = config.review_sweep_interval
        handle = start_server(service, config)
        handles.append(handle)
        return handle

    yield factory
    for handle in handles:
        handle.stop()


ADMIN_HEADERS = {"Authorization": "Bearer test-admin-token"}


def create_session(base_url: str, agent_id: str = "agent-1", role: str = "analyst",
                   trust_level: int = 1, extra: dict | None = None) -> tuple[str, dict]:
    response = requests.post(f"{base_url}/v1/sessions", json={
        "principal": {"agent_id": agent_id, "role": role,
                      "trust_level": trust_level, "extra": extra or {}},
    }, timeout=10)
    response.raise_for_status()
    body = response.json()
    return body["session_id"], {"Authorization": f"Bearer {body['session_token']}"}


def check(base_url: str, session_id: str, headers: dict, tool: str | dict, args=None,
          wait: float = 0.0, targets=None, expect_status=None) -> requests.Response:
    tool_obj = {"name": tool} if isinstance(tool, str) else tool
    payload = {"tool": tool_obj, "args": args, "wait": wait}
    if targets is not None:
        payload["targets"] = targets
    response = requests.post(f"{base_url}/v1/sessions/{session_id}/check",
                             json=payload, headers=headers, timeout=30)
    if expect_status is not None:
        assert response.status_code == expect_status, response.text
    return response


class SseReader:
    """Background reader for the event stream; collects (event, data) pairs."""

    def __init__(self, base_url: str, token: str = "test-admin-token"):
        self.events: list[tuple[str, dict]] = []
        self._lock = threading.Lock()
        self._response = requests.get(
            f"{base_url}/v1/stream",
            headers={"Authorization": f"Bearer {token}"},
            stream=True, timeout=(5, 30),
        )
        assert self._response.status_code == 200
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self) -> None:
        import json as json_mod

        event_type = None
        try:
            # chunk_size=1: SSE frames must surface as they arrive, not when a
            # buffer happens to fill.
            for raw in self._response.iter_lines(decode_unicode=True, chunk_size=1):
                if raw is None:
                    continue
                if raw.startswith("event:"):
                    event_type = raw.split(":", 1)[1].strip()
                elif raw.startswith("data:") and event_type:
                    data = json_mod.loads(raw.split(":", 1)[1].strip())
                    with self._lock:
                        self.events.append((event_type, data))
                    event_type = None
        except Exception:
            pass

    def snapshot(self) -> list[tuple[str, dict]]:
        with self._lock:
            return list(self.events)

    def wait_for(self, event_type: str, timeout: float = 5.0, minimum: int = 1) -> list[dict]:
        import time

        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            found = [data for kind, data in self.snapshot() if kind == event_type]
            if len(found) >= minimum:
                return found
            time.sleep(0.02)
        raise AssertionError(
            f"no {event_type} event within {timeout}s; saw {[k for k, _ in self.snapshot()]}")

    def close(self) -> None:
        try:
            self._response.close()
        except Exception:
            pass
