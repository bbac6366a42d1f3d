"""HTTP face of the decision service: JSON endpoints plus a server-sent event stream.

Endpoints (see docs/openapi.yaml for the normative description):

* agent-facing, session-token auth: ``POST /v1/sessions`` (open),
  ``POST /v1/sessions/{id}/check``, ``POST /v1/sessions/{id}/report``,
  ``GET /v1/decisions/{id}``;
* operator-facing, admin bearer token: ``GET|PUT /v1/policies``,
  ``GET /v1/reviews/pending``, ``POST /v1/reviews/{id}/resolve``,
  ``GET /v1/audit``, ``GET /v1/stream``, ``GET /v1/templates``;
* static console assets under ``/console`` when a console directory is set.
"""

from __future__ import annotations

import hmac
import json
import logging
import mimetypes
import re
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any, Optional
from urllib.parse import parse_qs, urlsplit

from ..audit import AuditStore
from ..bus import SubscriptionClosed
from ..dsl.parser import PolicyParseError
from ..dsl.templates import load_catalog
from ..inspector import HttpLlmBackend, MockLlmBackend
from ..model import ModelError, NetworkTarget, Principal, ToolDescriptor
from ..reviews import AlreadyTerminal, ReviewError, UnknownReview
from ..service import (
    AuthError,
    CheckResult,
    GuardService,
    InternalFailure,
    ReportRejected,
    ServiceSettings,
    UnknownDecision,
)
from ..sessions import SessionEnded, UnknownSession
from .config import ServerConfig

logger = logging.getLogger(__name__)

MAX_BODY_BYTES = 16 * 1024 * 1024


class ApiError(Exception):
    def __init__(self, status: int, message: str, payload: Optional[dict[str, Any]] = None):
        super().__init__(message)
        self.status = status
        self.payload = {"error": message, **(payload or {})}


class GuardHTTPServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True
    request_queue_size = 128  # many agents may connect at once

    def __init__(self, address: tuple[str, int], service: GuardService, config: ServerConfig):
        super().__init__(address, GuardRequestHandler)
        self.service = service
        self.config = config
        self.stopping = False


_ROUTES: list[tuple[str, re.Pattern[str], str]] = [
    ("POST", re.compile(r"^/v1/sessions$"), "create_session"),
    ("POST", re.compile(r"^/v1/sessions/(?P<sid>[^/]+)/check$"), "check"),
    ("POST", re.compile(r"^/v1/sessions/(?P<sid>[^/]+)/report$"), "report"),
    ("GET", re.compile(r"^/v1/decisions/(?P<did>[^/]+)$"), "get_decision"),
    ("GET", re.compile(r"^/v1/policies$"), "get_policies"),
    ("PUT", re.compile(r"^/v1/policies$"), "put_policies"),
    ("GET", re.compile(r"^/v1/reviews/pending$"), "pending_reviews"),
    ("POST", re.compile(r"^/v1/reviews/(?P<rid>[^/]+)/resolve$"), "resolve_review"),
    ("GET", re.compile(r"^/v1/audit$"), "get_audit"),
    ("GET", re.compile(r"^/v1/stream$"), "stream"),
    ("GET", re.compile(r"^/v1/templates$"), "get_templates"),
    ("GET", re.compile(r"^/healthz$"), "health"),
    ("GET", re.compile(r"^/console(?P<rest>/.*)?$"), "console"),
]


class GuardRequestHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "agentguard"
    server: GuardHTTPServer

    # -- plumbing ---------------------------------------------------------------
    def log_message(self, fmt: str, *args: Any) -> None:
        logger.debug("%s %s", self.address_string(), fmt % args)

    @property
    def service(self) -> GuardService:
        return self.server.service

    @property
    def config(self) -> ServerConfig:
        return self.server.config

    def _dispatch(self, method: str) -> None:
        split = urlsplit(self.path)
        self._query = {k: v[-1] for k, v in parse_qs(split.query).items()}
        body = b""
        length = int(self.headers.get("Content-Length") or 0)
        if length:
            if length > MAX_BODY_BYTES:
                self._send_json(413, {"error": "request body too large"})
                return
            body = self.rfile.read(length)
        self._raw_body = body
        for route_method, pattern, name in _ROUTES:
            match = pattern.match(split.path)
            if match:
                if route_method != method:
                    continue
                try:
                    getattr(self, "h_" + name)(**match.groupdict())
                except ApiError as exc:
                    self._send_json(exc.status, exc.payload)
                except AuthError as exc:
                    self._send_json(401, {"error": str(exc)})
                except UnknownSession as exc:
                    self._send_json(404, {"error": f"unknown session {exc}"})
                except SessionEnded as exc:
                    self._send_json(409, {"error": f"session {exc} is not active"})
                except (UnknownDecision, UnknownReview) as exc:
                    self._send_json(404, {"error": f"unknown resource {exc}"})
                except AlreadyTerminal as exc:
                    self._send_json(409, {"error": f"review {exc} already resolved or timed out"})
                except ReportRejected as exc:
                    payload: dict[str, Any] = {"error": str(exc)}
                    if exc.decision is not None:
                        payload["decision"] = exc.decision.to_json()
                    self._send_json(409, payload)
                except ReviewError as exc:
                    self._send_json(422, {"error": str(exc)})
                except PolicyParseError as exc:
                    self._send_json(400, {
                        "error": "policy rejected",
                        "diagnostics": [d.to_json() for d in exc.diagnostics],
                    })
                except ModelError as exc:
                    self._send_json(422, {"error": str(exc)})
                except InternalFailure as exc:
                    self._send_json(503, {"error": str(exc)})
                except (BrokenPipeError, ConnectionResetError):
                    pass
                except Exception:
                    logger.exception("unhandled error serving %s %s", method, self.path)
                    self._send_json(500, {"error": "internal error"})
                return
        self._send_json(404, {"error": f"no such endpoint: {split.path}"})

    def do_GET(self) -> None:
        self._dispatch("GET")

    def do_POST(self) -> None:
        self._dispatch("POST")

    def do_PUT(self) -> None:
        self._dispatch("PUT")

    def _send_json(self, status: int, payload: dict[str, Any]) -> None:
        data = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        try:
            self.send_response(status)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)
        except (BrokenPipeError, ConnectionResetError):
            pass

    def _json_body(self) -> dict[str, Any]:
        if not self._raw_body:
            return {}
        try:
            parsed = json.loads(self._raw_body)
        except json.JSONDecodeError as exc:
            raise ApiError(422, f"request body is not valid JSON: {exc}") from exc
        if not isinstance(parsed, dict):
            raise ApiError(422, "request body must be a JSON object")
        return parsed

    def _bearer_token(self) -> Optional[str]:
        header = self.headers.get("Authorization", "")
        if header.startswith("Bearer "):
            return header[len("Bearer "):].strip()
        return None

    def _require_admin(self) -> None:
        token = self._bearer_token() or self._query.get("token")
        if not token:
            raise ApiError(401, "admin token required")
        if not hmac.compare_digest(token, self.config.admin_token):
            raise ApiError(403, "admin token rejected")

    def _require_session(self, session_id: str) -> None:
        self.service.authenticate(session_id, self._bearer_token())

    def _wait_param(self, body: Optional[dict[str, Any]] = None) -> float:
        raw: Any = self._query.get("wait")
        if raw is None and body is not None:
            raw = body.get("wait")
        if raw is None:
            return 0.0
        try:
            wait = float(raw)
        except (TypeError, ValueError):
            raise ApiError(422, "wait must be a number of seconds") from None
        return max(0.0, min(wait, self.config.wait_cap))

    def _check_response(self, result: CheckResult) -> None:
        self._send_json(200 if result.decision is not None else 202, result.to_json())

    # -- agent endpoints -----------------------------------------------------------
    def h_create_session(self) -> None:
        body = self._json_body()
        principal = Principal.from_json(body.get("principal"))
        session_id, token = self.service.create_session(principal)
        self._send_json(201, {"session_id": session_id, "session_token": token})

    def h_check(self, sid: str) -> None:
        self._require_session(sid)
        body = self._json_body()
        if "tool" not in body:
            raise ApiError(422, "check needs a tool descriptor")
        tool = ToolDescriptor.from_json(body["tool"])
        targets = None
        if body.get("targets") is not None:
            if not isinstance(body["targets"], list):
                raise ApiError(422, "targets must be a list")
            targets = [NetworkTarget.from_json(t) for t in body["targets"]]
        result = self.service.check(
            sid, tool, body.get("args"),
            targets=targets, wait=self._wait_param(body),
        )
        self._check_response(result)

    def h_report(self, sid: str) -> None:
        self._require_session(sid)
        body = self._json_body()
        call_id = body.get("call_id")
        if not call_id:
            raise ApiError(422, "report needs a call_id")
        result = self.service.report(
            sid, call_id, body.get("status", "ok"), body.get("result"),
            wait=self._wait_param(body),
        )
        self._check_response(result)

    def h_get_decision(self, did: str) -> None:
        session_id = self.service.decision_session(did)
        self.service.authenticate(session_id, self._bearer_token())
        decision, _ = self.service.await_decision(did, wait=self._wait_param())
        if decision is None:
            self._send_json(202, {"pending": True, "decision_id": did})
        else:
            self._send_json(200, {"decision_id": did, "decision": decision.to_json()})

    # -- operator endpoints -----------------------------------------------------------
    def h_get_policies(self) -> None:
        self._require_admin()
        version, text = self.service.policy_text()
        self._send_json(200, {"version": version, "text": text})

    def h_put_policies(self) -> None:
        self._require_admin()
        content_type = (self.headers.get("Content-Type") or "").split(";")[0].strip()
        if content_type.startswith("text/"):
            text = self._raw_body.decode("utf-8", errors="replace")
        else:
            body = self._json_body()
            text = body.get("text")
            if not isinstance(text, str):
                raise ApiError(422, "policy update needs a 'text' string")
        version, warnings = self.service.update_policy(text, actor="admin-api")
        self._send_json(200, {"version": version,
                              "diagnostics": [d.to_json() for d in warnings]})

    def h_pending_reviews(self) -> None:
        self._require_admin()
        self._send_json(200, {"reviews": [item.to_json() for item in self.service.pending_reviews()]})

    def h_resolve_review(self, rid: str) -> None:
        self._require_admin()
        body = self._json_body()
        verdict = body.get("verdict")
        reviewer = body.get("reviewer") or "operator"
        reason = body.get("reason") or ""
        if verdict not in ("allow", "deny"):
            raise ApiError(422, "verdict must be 'allow' or 'deny'")
        decision = self.service.resolve_review(rid, verdict, reviewer, reason)
        self._send_json(200, {"review_id": rid, "decision": decision.to_json()})

    def h_get_audit(self) -> None:
        self._require_admin()
        query = self._query
        try:
            after = int(query.get("after", 0))
            limit = max(1, min(int(query.get("limit", 100)), 1000))
        except ValueError:
            raise ApiError(422, "after and limit must be integers") from None
        records, next_after = self.service.audit.query(
            session_id=query.get("session_id"),
            decision=query.get("decision"),
            rule_id=query.get("rule_id"),
            phase=query.get("phase"),
            kind=query.get("kind"),
            since=query.get("since"),
            until=query.get("until"),
            after=after,
            limit=limit,
        )
        self._send_json(200, {"records": records, "next_after": next_after})

    def h_get_templates(self) -> None:
        self._require_admin()
        self._send_json(200, {"templates": load_catalog()})

    def h_health(self) -> None:
        self._send_json(200, {"status": "ok"})

    # -- server-sent events --------------------------------------------------------------
    def h_stream(self) -> None:
        self._require_admin()
        subscription = self.service.bus.subscribe()
        try:
            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-cache")
            self.send_header("Connection", "close")
            self.end_headers()
            self.wfile.write(b": connected\n\n")
            self.wfile.flush()
            while not self.server.stopping:
                try:
                    item = subscription.get(timeout=self.config.sse_heartbeat)
                except SubscriptionClosed:
                    break
                if item is None:
                    self.wfile.write(b": keep-alive\n\n")
                else:
                    data = json.dumps(item["data"], ensure_ascii=False)
                    frame = f"event: {item['event']}\ndata: {data}\n\n"
                    self.wfile.write(frame.encode("utf-8"))
                self.wfile.flush()
        except (BrokenPipeError, ConnectionResetError, OSError):
            pass
        finally:
            subscription.close()
            self.close_connection = True

    # -- console assets ---------------------------------------------------------------------
    def h_console(self, rest: Optional[str] = None) -> None:
        root = self.config.console_dir
        if not root:
            raise ApiError(404, "console assets are not configured (set console_dir)")
        base = Path(root).resolve()
        relative = (rest or "/").lstrip("/") or "index.html"
        target = (base / relative).resolve()
        if not str(target).startswith(str(base)) or not target.is_file():
            if (base / "index.html").is_file() and not relative.count("."):
                target = base / "index.html"  # client-side routes fall back to the app shell
            else:
                raise ApiError(404, f"no console asset {relative!r}")
        content_type = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
        data = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def build_service(config: ServerConfig, *, clock=None) -> GuardService:
    """Wire audit store, inspection backend, and settings into a service."""
    policy_path = Path(config.policy_path)
    if not policy_path.exists():
        raise FileNotFoundError(f"policy file {policy_path} does not exist")
    policy_text = policy_path.read_text("utf-8")

    audit = AuditStore(
        config.audit_path,
        fsync=config.audit_fsync,
        size_warn_bytes=config.audit_size_warn_mb * 1024 * 1024,
    )
    backend = None
    if config.llm_backend == "mock":
        backend = MockLlmBackend(flag_keywords=config.llm_mock_keywords or MockLlmBackend().flag_keywords)
    elif config.llm_backend == "http":
        import os

        backend = HttpLlmBackend(url=config.llm_url, model=config.llm_model,
                                 api_key=os.environ.get("AGENTGUARD_LLM_KEY"))
    settings = ServiceSettings(
        fail_mode=config.fail_mode,
        wait_cap=config.wait_cap,
        review_timeout=config.review_timeout,
        review_on_timeout=config.review_on_timeout,
        review_sweep_interval=config.review_sweep_interval,
        llm_timeout=config.llm_timeout,
        llm_error_decision=config.llm_error_decision,
        prompt_length_cap=config.prompt_length_cap,
        idle_timeout=config.idle_timeout,
    )
    return GuardService(policy_text=policy_text, audit=audit, clock=clock,
                        llm_backend=backend, settings=settings)


@dataclass
class ServerHandle:
    server: GuardHTTPServer
    thread: threading.Thread
    service: GuardService
    config: ServerConfig

    @property
    def base_url(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}"

    def stop(self, close_service: bool = True) -> None:
        if getattr(self, "_stopped", False):
            return
        self._stopped = True
        self.server.stopping = True
        if close_service:
            self.service.close()
        else:
            self.service.bus.close()
        self.server.shutdown()
        self.server.server_close()


def start_server(service: GuardService, config: ServerConfig) -> ServerHandle:
    """Run the HTTP server on a background thread; returns a handle for tests and tooling."""
    server = GuardHTTPServer((config.host, config.port), service, config)
    service.start_maintenance()
    thread = threading.Thread(target=server.serve_forever, name="agentguard-http", daemon=True)
    thread.start()
    return ServerHandle(server=server, thread=thread, service=service, config=config)


def serve(config: ServerConfig) -> None:
    """Blocking entry point used by the CLI."""
    service = build_service(config)
    handle = start_server(service, config)
    if config.generated_token:
        logger.warning("no admin_token configured; generated ephemeral token: %s",
                       config.admin_token)
    host, port = handle.server.server_address[:2]
    logger.info("agentguard control server listening on http://%s:%s", host, port)
    try:
        handle.thread.join()
    except KeyboardInterrupt:
        logger.info("shutting down")
        handle.stop()
