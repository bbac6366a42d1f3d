"""Enforcement point for agent processes.

The client is deliberately dumb: it evaluates nothing itself. Every tool
invocation is checked with the control server first, executed only on allow,
and its result reported back for post-execution screening. All decisions are
the server's; the client only enforces them. The only protocol spoken is the
documented HTTP+JSON API, so servers and clients upgrade independently.
"""

from __future__ import annotations

import functools
import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional

import requests

logger = logging.getLogger(__name__)


class GuardDenied(Exception):
    """The server denied the call (phase=pre) or its result (phase=post)."""

    def __init__(self, phase: str, reason: str, decision: Optional[dict] = None):
        super().__init__(f"{phase}: {reason}")
        self.phase = phase
        self.reason = reason
        self.decision = decision or {}


class GuardUnavailable(Exception):
    """The server could not be reached and fail mode is closed."""


@dataclass
class GuardConfig:
    server_url: str
    principal: Mapping[str, Any] = field(default_factory=dict)
    fail_mode: str = "closed"  # closed: unreachable server blocks tools; open: lets them run
    check_wait: float = 10.0  # seconds the server may hold a check before answering pending
    poll_interval: float = 1.0  # long-poll slice while a review is pending
    decision_deadline: float = 300.0  # total time to wait for a pending decision
    http_timeout: float = 10.0

    def __post_init__(self) -> None:
        if self.fail_mode not in ("closed", "open"):
            raise ValueError("fail_mode must be 'closed' or 'open'")
        if self.check_wait < 0:
            raise ValueError("check_wait must be >= 0")
        self.server_url = self.server_url.rstrip("/")


def jsonable(value: Any, _depth: int = 0) -> Any:
    """Best-effort JSON projection of tool arguments and results."""
    if _depth > 24:
        return repr(value)
    if value is None or isinstance(value, (bool, int, float, str)):
        return value
    if isinstance(value, Mapping):
        return {str(k): jsonable(v, _depth + 1) for k, v in value.items()}
    if isinstance(value, (list, tuple, set, frozenset)):
        return [jsonable(v, _depth + 1) for v in value]
    return repr(value)


class GuardClient:
    """One agent's connection to the control server; thread-safe."""

    def __init__(self, config: GuardConfig):
        self.config = config
        self._http = requests.Session()
        self._lock = threading.Lock()
        self._session_id: Optional[str] = None
        self._token: Optional[str] = None

    # -- session ------------------------------------------------------------
    def _ensure_session(self) -> tuple[str, str]:
        with self._lock:
            if self._session_id is None:
                response = self._post("/v1/sessions", {"principal": dict(self.config.principal)})
                body = response.json()
                self._session_id = body["session_id"]
                self._token = body["session_token"]
            return self._session_id, self._token

    def _headers(self) -> dict[str, str]:
        return {"Authorization": f"Bearer {self._token}"} if self._token else {}

    def _post(self, path: str, payload: dict, headers: Optional[dict] = None) -> requests.Response:
        try:
            return self._http.post(self.config.server_url + path, json=payload,
                                   headers=headers or {}, timeout=self.config.http_timeout)
        except requests.RequestException as exc:
            raise GuardUnavailable(f"control server unreachable: {exc}") from exc

    def _get(self, path: str, headers: Optional[dict] = None,
             timeout: Optional[float] = None) -> requests.Response:
        try:
            return self._http.get(self.config.server_url + path, headers=headers or {},
                                  timeout=timeout or self.config.http_timeout)
        except requests.RequestException as exc:
            raise GuardUnavailable(f"control server unreachable: {exc}") from exc

    # -- protocol ------------------------------------------------------------
    def check(self, tool: Mapping[str, Any], args: Any) -> dict:
        """Pre-execution check; blocks through pending reviews up to the deadline."""
        session_id, _ = self._ensure_session()
        response = self._post(
            f"/v1/sessions/{session_id}/check",
            {"tool": dict(tool), "args": args, "wait": self.config.check_wait},
            headers=self._headers(),
        )
        return self._settle(response, started=time.monotonic())

    def report(self, call_id: str, status: str, result: Any) -> dict:
        """Post-execution report; returns the propagation decision."""
        session_id, _ = self._ensure_session()
        response = self._post(
            f"/v1/sessions/{session_id}/report",
            {"call_id": call_id, "status": status, "result": result,
             "wait": self.config.check_wait},
            headers=self._headers(),
        )
        return self._settle(response, started=time.monotonic())

    def _settle(self, response: requests.Response, started: float) -> dict:
        """Follow a check/report response through pending until a decision lands."""
        if response.status_code == 503:
            raise GuardUnavailable("server reported an internal failure (fail-closed)")
        if response.status_code not in (200, 202):
            raise GuardUnavailable(
                f"unexpected server response {response.status_code}: {response.text}")
        body = response.json()
        while "decision" not in body:
            remaining = self.config.decision_deadline - (time.monotonic() - started)
            if remaining <= 0:
                raise GuardDenied("pre", "review deadline exceeded", body)
            slice_wait = min(self.config.poll_interval, remaining)
            poll = self._get(
                f"/v1/decisions/{body['decision_id']}?wait={slice_wait}",
                headers=self._headers(),
                timeout=slice_wait + self.config.http_timeout,
            )
            if poll.status_code not in (200, 202):
                raise GuardUnavailable(
                    f"decision poll failed with {poll.status_code}: {poll.text}")
            polled = poll.json()
            if polled.get("decision"):
                polled.setdefault("call_id", body.get("call_id"))
                polled.setdefault("decision_id", body.get("decision_id"))
                body = polled
                break
            # still pending; keep the ids from the original response
        return body

    def close(self) -> None:
        self._http.close()


def guard_tool(
    func: Callable[..., Any],
    tool: Any = None,
    *,
    client: GuardClient,
) -> Callable[..., Any]:
    """Wrap one callable: check -> execute -> report -> enforce.

    ``tool`` may be a name, a descriptor dict ({"name", "category",
    "attributes"}), or None to use the function's own name. On pre-deny the
    callable never runs; on post-deny its result is suppressed and
    GuardDenied(phase="post") raised instead. With the server unreachable,
    fail mode closed blocks the call, fail mode open lets it run unchecked.
    """
    if tool is None:
        descriptor = {"name": getattr(func, "__name__", "tool")}
    elif isinstance(tool, str):
        descriptor = {"name": tool}
    else:
        descriptor = dict(tool)

    @functools.wraps(func)
    def guarded(*args: Any, **kwargs: Any) -> Any:
        payload: dict[str, Any] = {str(k): jsonable(v) for k, v in kwargs.items()}
        if args:
            payload["positional"] = [jsonable(v) for v in args]
        try:
            checked = client.check(descriptor, payload)
        except GuardUnavailable:
            if client.config.fail_mode == "open":
                logger.warning("control server unreachable; fail-open lets %s run unchecked",
                               descriptor["name"])
                return func(*args, **kwargs)
            raise
        decision = checked["decision"]
        if decision["verdict"] != "allow":
            raise GuardDenied("pre", decision.get("reason", ""), decision)

        call_id = checked["call_id"]
        try:
            result = func(*args, **kwargs)
        except Exception:
            _report_best_effort(client, call_id, "error", None, descriptor["name"])
            raise

        try:
            reported = client.report(call_id, "ok", jsonable(result))
        except GuardUnavailable:
            if client.config.fail_mode == "open":
                logger.warning("result report failed; fail-open returns %s result unchecked",
                               descriptor["name"])
                return result
            raise
        post_decision = reported["decision"]
        if post_decision["verdict"] != "allow":
            raise GuardDenied("post", post_decision.get("reason", ""), post_decision)
        return result

    return guarded


def _report_best_effort(client: GuardClient, call_id: str, status: str, result: Any,
                        tool_name: str) -> None:
    """The tool already raised; the report must not mask that exception."""
    try:
        client.report(call_id, status, result)
    except (GuardUnavailable, GuardDenied):
        logger.warning("could not report failed %s call %s", tool_name, call_id)
