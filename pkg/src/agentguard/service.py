"""The decision service: evaluates checks, drives reviews and inspections, audits everything.

This module is transport-free; the HTTP layer in ``agentguard.server`` is a
thin adapter over it, and the trace-replay CLI embeds it the same way.

Ordering contracts enforced here:

* the audit record is durably written before a decision is released;
* a check captures one immutable policy snapshot and finishes under it;
* per-session evaluation is serialized in seq order, sessions never block
  each other, and a pending review blocks only its own caller.
"""

from __future__ import annotations

import hmac
import logging
import secrets
import threading
import uuid
from dataclasses import dataclass
from typing import Any, Optional, Sequence

from . import engine as engine_mod
from . import inspector as inspector_mod
from .audit import AuditFailure, AuditStore, KIND_CHECK, KIND_POLICY_UPDATE
from .bus import Broadcaster
from .clock import SystemClock
from .dsl import PolicySet, parse_policy_set, validate
from .dsl.parser import Diagnostic
from .engine import (
    Evaluation,
    Final,
    LlmResolution,
    PendingLLM,
    PendingReview,
    ReviewRequired,
)
from .inspector import LlmBackend, PromptTemplate, UnknownPlaceholder
from .model import (
    Decision,
    ModelError,
    NetworkTarget,
    POST,
    PRE,
    Principal,
    ToolCallEvent,
    ToolDescriptor,
    ToolResultEvent,
    extract_targets,
    iso_timestamp,
    validate_tree,
)
from .reviews import ReviewItem, ReviewQueue
from .sessions import DuplicateResult, SessionStore

logger = logging.getLogger(__name__)


class AuthError(Exception):
    """Missing or wrong session credential."""


class InternalFailure(Exception):
    """Storage failed and fail mode is closed; no decision was released."""


class ReportRejected(Exception):
    """The call cannot accept a result report (denied, still pending, or duplicated)."""

    def __init__(self, message: str, decision: Optional[Decision] = None):
        super().__init__(message)
        self.decision = decision


class UnknownDecision(KeyError):
    pass


@dataclass
class ServiceSettings:
    fail_mode: str = "closed"  # closed: storage failure => error; open: release decision unaudited
    wait_cap: float = 30.0
    review_timeout: float = 300.0
    review_on_timeout: str = "deny"
    review_sweep_interval: float = 1.0
    llm_timeout: float = 10.0
    llm_error_decision: str = "review"
    prompt_length_cap: int = 16000
    idle_timeout: float = 24 * 3600.0


class _Slot:
    """Holds one decision for long-polling; set exactly once."""

    def __init__(self, session_id: str) -> None:
        self.session_id = session_id
        self._event = threading.Event()
        self.decision: Optional[Decision] = None

    def set(self, decision: Decision) -> None:
        self.decision = decision
        self._event.set()

    def wait(self, timeout: float) -> Optional[Decision]:
        if timeout > 0:
            self._event.wait(timeout)
        return self.decision


@dataclass
class _CallState:
    call_id: str
    session_id: str
    seq: int
    event: Optional[ToolCallEvent]
    evaluation: Optional[Evaluation] = None
    pre_decision: Optional[Decision] = None
    reported: bool = False
    post_evaluation: Optional[Evaluation] = None
    post_decision: Optional[Decision] = None


@dataclass
class CheckResult:
    call_id: str
    seq: int
    decision_id: str
    decision: Optional[Decision]  # None => pending, poll the decision endpoint

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"call_id": self.call_id, "seq": self.seq,
                               "decision_id": self.decision_id}
        if self.decision is None:
            out["pending"] = True
        else:
            out["decision"] = self.decision.to_json()
        return out


class GuardService:
    def __init__(
        self,
        *,
        policy_text: str,
        audit: AuditStore,
        clock=None,
        llm_backend: Optional[LlmBackend] = None,
        settings: Optional[ServiceSettings] = None,
        startup_actor: str = "startup",
    ) -> None:
        self.clock = clock or SystemClock()
        self.settings = settings or ServiceSettings()
        self.audit = audit
        self.llm_backend = llm_backend
        self.sessions = SessionStore(self.clock)
        self.reviews = ReviewQueue(self.clock)
        self.bus = Broadcaster()

        self._policy_lock = threading.Lock()
        self._state_lock = threading.Lock()
        self._calls: dict[str, _CallState] = {}
        self._slots: dict[str, _Slot] = {}
        self._tokens: dict[str, str] = {}
        self._policy_texts: dict[int, str] = {}

        self._maintenance_stop = threading.Event()
        self._maintenance_thread: Optional[threading.Thread] = None

        self.audit.add_listener(self._on_audit_record)

        parsed = parse_policy_set(policy_text)
        last_version = self._restore_from_audit()
        version = last_version + 1
        self._active_text = policy_text
        self._active_policy = self._pin_version(parsed, version)
        self._policy_texts[version] = policy_text
        self._append_policy_record(version, startup_actor, len(parsed.rules))

    # -- policy -----------------------------------------------------------------
    @staticmethod
    def _pin_version(ps: PolicySet, version: int) -> PolicySet:
        return PolicySet(version=version, rules=ps.rules,
                         default_decision=ps.default_decision,
                         on_eval_error=ps.on_eval_error)

    def active_policy(self) -> PolicySet:
        with self._policy_lock:
            return self._active_policy

    def policy_text(self) -> tuple[int, str]:
        with self._policy_lock:
            return self._active_policy.version, self._active_text

    def update_policy(self, text: str, actor: str = "admin") -> tuple[int, list[Diagnostic]]:
        """Validate then atomically swap the active policy set; version increments.

        Raises PolicyParseError (active set unchanged) on any error diagnostic.
        """
        parsed = parse_policy_set(text)
        warnings = validate(parsed)
        with self._policy_lock:
            version = self._active_policy.version + 1
            self._active_policy = self._pin_version(parsed, version)
            self._active_text = text
            self._policy_texts[version] = text
            self._append_policy_record(version, actor, len(parsed.rules))
        return version, warnings

    def _append_policy_record(self, version: int, actor: str, rule_count: int) -> None:
        record = {
            "kind": KIND_POLICY_UPDATE,
            "timestamp": iso_timestamp(self.clock.now()),
            "policy_version": version,
            "actor": actor,
            "rule_count": rule_count,
        }
        try:
            self.audit.append(record)
        except AuditFailure as exc:
            logger.error("failed to audit policy update: %s", exc)

    # -- sessions -----------------------------------------------------------------
    def create_session(self, principal: Principal) -> tuple[str, str]:
        session_id = self.sessions.create_session(principal)
        token = secrets.token_urlsafe(24)
        with self._state_lock:
            self._tokens[session_id] = token
        self.bus.publish({
            "event": "session_started",
            "data": {
                "session_id": session_id,
                "principal": principal.to_json(),
                "timestamp": iso_timestamp(self.clock.now()),
            },
        })
        return session_id, token

    def authenticate(self, session_id: str, token: Optional[str]) -> None:
        self.sessions.get(session_id)  # unknown session surfaces as such, not as auth failure
        with self._state_lock:
            expected = self._tokens.get(session_id)
        if expected is None:
            # Session restored from the audit log after a restart has no token.
            raise AuthError("session has no active credential; create a new session")
        if not token or not hmac.compare_digest(expected, token):
            raise AuthError("bad session token")

    # -- checks ---------------------------------------------------------------------
    def check(
        self,
        session_id: str,
        tool: ToolDescriptor,
        args: Any,
        *,
        targets: Optional[Sequence[NetworkTarget]] = None,
        wait: float = 0.0,
    ) -> CheckResult:
        """Pre-execution check: evaluate, resolve inspections, maybe park on review."""
        validate_tree(args, what="args")  # reject before a seq is allocated
        ps = self.active_policy()
        started = self.clock.now()
        with self.sessions.session(session_id) as record:
            seq = record.next_seq()
            event = ToolCallEvent(
                call_id=uuid.uuid4().hex,
                session_id=session_id,
                seq=seq,
                principal=record.principal,
                tool=tool,
                args=args,
                targets=tuple(targets) if targets is not None else tuple(extract_targets(args)),
                timestamp=started,
            )
            history = record.history_view(seq)
            evaluation = engine_mod.evaluate(
                event, ps, history,
                phase=PRE,
                now=started,
                default_review_timeout=self.settings.review_timeout,
                default_review_on_timeout=self.settings.review_on_timeout,
            )
            record.append(event, evaluation)

        call = _CallState(call_id=event.call_id, session_id=session_id, seq=seq,
                          event=event, evaluation=evaluation)
        slot = _Slot(session_id)
        with self._state_lock:
            self._calls[event.call_id] = call
            self._slots[event.call_id] = slot

        return self._drive_to_decision(
            call, evaluation, ps, event, history, slot,
            phase=PRE, decision_id=event.call_id, wait=wait,
        )

    def report(
        self,
        session_id: str,
        call_id: str,
        status: str,
        result: Any,
        *,
        wait: float = 0.0,
    ) -> CheckResult:
        """Post-execution check over the reported result; deny means suppress it."""
        with self._state_lock:
            call = self._calls.get(call_id)
        if call is None or call.session_id != session_id:
            raise UnknownDecision(call_id)
        if call.pre_decision is None:
            raise ReportRejected("check is still pending; no result can be reported")
        if call.pre_decision.verdict != "allow":
            raise ReportRejected("call was denied; nothing to report", call.pre_decision)
        if call.reported:
            raise ReportRejected("result already reported", call.post_decision)

        ps = self.active_policy()
        started = self.clock.now()
        result_event = ToolResultEvent(call_id=call_id, status=status, result=result,
                                       timestamp=started)
        record = self.sessions.get(session_id)
        try:
            entry = self.sessions.attach_result(session_id, call_id, result_event, None)
        except DuplicateResult:
            raise ReportRejected("result already reported", call.post_decision) from None
        call.reported = True
        history = record.history_view(call.seq)
        evaluation = engine_mod.evaluate(
            call.event, ps, history,
            phase=POST,
            result=result_event,
            now=started,
            default_review_timeout=self.settings.review_timeout,
            default_review_on_timeout=self.settings.review_on_timeout,
        )
        entry.post_evaluation = evaluation
        call.post_evaluation = evaluation

        decision_id = f"{call_id}.post"
        slot = _Slot(session_id)
        with self._state_lock:
            self._slots[decision_id] = slot

        return self._drive_to_decision(
            call, evaluation, ps, call.event, history, slot,
            phase=POST, decision_id=decision_id, wait=wait, result_event=result_event,
        )

    # -- decision pipeline -------------------------------------------------------------
    def _drive_to_decision(
        self,
        call: _CallState,
        evaluation: Evaluation,
        ps: PolicySet,
        event: ToolCallEvent,
        history: Sequence[Any],
        slot: _Slot,
        *,
        phase: str,
        decision_id: str,
        wait: float,
        result_event: Optional[ToolResultEvent] = None,
    ) -> CheckResult:
        outcome = evaluation.outcome
        if isinstance(outcome, PendingLLM):
            resolutions = self._run_inspections(event, history, ps, outcome.rule_ids, evaluation)
            outcome = engine_mod.conclude(
                evaluation, ps, resolutions,
                default_review_timeout=self.settings.review_timeout,
                default_review_on_timeout=self.settings.review_on_timeout,
            )
            evaluation.outcome = outcome

        if isinstance(outcome, Final):
            self._finalize(call, evaluation, outcome.decision, phase=phase,
                           event=event, result_event=result_event, reviewer=None, slot=slot)
            return CheckResult(call.call_id, call.seq, decision_id, outcome.decision)

        assert isinstance(outcome, ReviewRequired)
        item = self.reviews.enqueue(
            call_id=call.call_id,
            session_id=call.session_id,
            timeout=outcome.timeout,
            on_timeout=outcome.on_timeout,
            context={
                "phase": phase,
                "decision_id": decision_id,
                "tool": event.tool.name,
                "event": event.to_json(),
                "rule_ids": list(outcome.rule_ids),
                "llm_rationale": {k: v for k, v in evaluation.llm_notes.items()},
            },
        )
        evaluation.outcome = PendingReview(item.review_id)
        self.bus.publish({"event": "review_pending", "data": item.to_json()})
        decision = slot.wait(min(wait, self.settings.wait_cap)) if wait > 0 else None
        return CheckResult(call.call_id, call.seq, decision_id, decision)

    def _run_inspections(
        self,
        event: ToolCallEvent,
        history: Sequence[Any],
        ps: PolicySet,
        rule_ids: Sequence[str],
        evaluation: Evaluation,
    ) -> dict[str, LlmResolution]:
        resolutions: dict[str, LlmResolution] = {}
        for rule_id in rule_ids:
            rule = ps.rule_by_id(rule_id)
            if rule is None:  # pragma: no cover - matched ids come from ps
                continue
            try:
                template = PromptTemplate(
                    text=rule.effect.prompt_template or "",
                    max_history_events=rule.effect.max_history_events or 0,
                )
                verdict = inspector_mod.inspect(
                    event, history, template, self.llm_backend,
                    reason_hint=rule.effect.reason,
                    timeout=self.settings.llm_timeout,
                    length_cap=self.settings.prompt_length_cap,
                )
                state, note = verdict.state, verdict.rationale
            except UnknownPlaceholder as exc:
                state, note = "error", str(exc)
            resolution = engine_mod.resolve_llm_effect(
                rule, state, error_decision=self.settings.llm_error_decision)
            resolutions[rule_id] = resolution
            evaluation.llm_notes[rule_id] = note if state == "error" else resolution.note
        return resolutions

    def _finalize(
        self,
        call: _CallState,
        evaluation: Evaluation,
        decision: Decision,
        *,
        phase: str,
        event: ToolCallEvent,
        result_event: Optional[ToolResultEvent],
        reviewer: Optional[tuple[str, str]],
        slot: _Slot,
    ) -> None:
        """Audit first, then release the decision; storage failure obeys fail mode."""
        evaluation.finished = self.clock.now()
        evaluation.outcome = Final(decision)
        record = {
            "kind": KIND_CHECK,
            "timestamp": iso_timestamp(evaluation.finished),
            "session_id": call.session_id,
            "call_id": call.call_id,
            "phase": phase,
            "tool": event.tool.name,
            "event": result_event.to_json() if phase == POST else event.to_json(),
            "policy_version": evaluation.policy_version,
            "matched": evaluation.matched_refs(),
            "final": decision.to_json(),
            "latency_ms": round((evaluation.finished - evaluation.started) * 1000, 3),
            "reviewer": {"name": reviewer[0], "reason": reviewer[1]} if reviewer else None,
        }
        try:
            self.audit.append(record)
        except AuditFailure as exc:
            if self.settings.fail_mode == "closed":
                raise InternalFailure(f"audit write failed: {exc}") from exc
            logger.error("fail-open: releasing decision without audit record: %s", exc)
        if phase == PRE:
            call.pre_decision = decision
        else:
            call.post_decision = decision
        slot.set(decision)

    def _on_audit_record(self, record: dict[str, Any]) -> None:
        if record.get("kind") == KIND_CHECK:
            self.bus.publish({
                "event": "check_decided",
                "data": {
                    "record_id": record["record_id"],
                    "session_id": record["session_id"],
                    "call_id": record["call_id"],
                    "phase": record["phase"],
                    "tool": record.get("tool"),
                    "policy_version": record["policy_version"],
                    "final": record["final"],
                    "timestamp": record["timestamp"],
                },
            })
        elif record.get("kind") == KIND_POLICY_UPDATE:
            self.bus.publish({
                "event": "policy_updated",
                "data": {
                    "version": record["policy_version"],
                    "actor": record.get("actor"),
                    "rule_count": record.get("rule_count"),
                    "timestamp": record["timestamp"],
                },
            })

    # -- decisions & reviews ---------------------------------------------------------
    def decision_session(self, decision_id: str) -> str:
        """Which session owns this decision; raises UnknownDecision."""
        with self._state_lock:
            slot = self._slots.get(decision_id)
        if slot is None:
            raise UnknownDecision(decision_id)
        return slot.session_id

    def await_decision(self, decision_id: str, wait: float = 0.0) -> tuple[Optional[Decision], str]:
        """Long-poll a pending decision; returns (decision or None, session_id)."""
        with self._state_lock:
            slot = self._slots.get(decision_id)
        if slot is None:
            raise UnknownDecision(decision_id)
        decision = slot.wait(min(wait, self.settings.wait_cap))
        return decision, slot.session_id

    def pending_reviews(self) -> list[ReviewItem]:
        return self.reviews.list_pending()

    def resolve_review(self, review_id: str, verdict: str, reviewer: str, reason: str) -> Decision:
        """Apply a human resolution; exactly one of resolve/expire wins per item."""
        item, decision = self.reviews.resolve(review_id, verdict, reviewer, reason)
        self._finalize_review(item, decision, reviewer=(reviewer, reason))
        return decision

    def sweep_reviews(self, now: Optional[float] = None) -> list[str]:
        """Time out overdue reviews; waiting checks get their on_timeout verdict."""
        expired = self.reviews.expire(now)
        for item, decision in expired:
            self._finalize_review(item, decision, reviewer=None)
        return [item.review_id for item, _ in expired]

    def _finalize_review(self, item: ReviewItem, decision: Decision,
                         reviewer: Optional[tuple[str, str]]) -> None:
        with self._state_lock:
            call = self._calls.get(item.call_id)
        if call is None:  # pragma: no cover - reviews always reference live calls
            logger.error("review %s references unknown call %s", item.review_id, item.call_id)
            return
        phase = item.context.get("phase", PRE)
        decision_id = item.context.get("decision_id", item.call_id)
        with self._state_lock:
            slot = self._slots[decision_id]
        evaluation = call.post_evaluation if phase == POST else call.evaluation
        event = call.event
        result_event = None
        if phase == POST:
            entry_result = self.sessions.get(call.session_id)
            for entry in entry_result.entries:
                if entry.event.call_id == call.call_id:
                    result_event = entry.result_event
                    break
        self._finalize(call, evaluation, decision, phase=phase, event=event,
                       result_event=result_event, reviewer=reviewer, slot=slot)
        self.bus.publish({"event": "review_resolved", "data": item.to_json()})

    # -- maintenance --------------------------------------------------------------------
    def expire_sessions(self, now: Optional[float] = None) -> list[str]:
        return self.sessions.expire_idle(now, self.settings.idle_timeout)

    def start_maintenance(self) -> None:
        if self._maintenance_thread is not None:
            return
        self._maintenance_stop.clear()

        def loop() -> None:
            while not self._maintenance_stop.wait(self.settings.review_sweep_interval):
                try:
                    self.sweep_reviews()
                    self.expire_sessions()
                except Exception:  # pragma: no cover - keep the sweeper alive
                    logger.exception("maintenance sweep failed")

        self._maintenance_thread = threading.Thread(target=loop, name="agentguard-sweeper",
                                                    daemon=True)
        self._maintenance_thread.start()

    def stop_maintenance(self) -> None:
        self._maintenance_stop.set()
        if self._maintenance_thread is not None:
            self._maintenance_thread.join(timeout=5)
            self._maintenance_thread = None

    def close(self) -> None:
        self.stop_maintenance()
        self.bus.close()
        self.audit.close()

    # -- restart recovery ------------------------------------------------------------------
    def _restore_from_audit(self) -> int:
        """Rebuild sessions and call registry from the log; returns the last policy version."""
        last_version = 0
        for record in self.audit.iter_records():
            kind = record.get("kind")
            if kind == KIND_POLICY_UPDATE:
                last_version = max(last_version, int(record.get("policy_version", 0)))
                continue
            if kind != KIND_CHECK:
                continue
            last_version = max(last_version, int(record.get("policy_version", 0)))
            try:
                if record.get("phase") == PRE:
                    event = ToolCallEvent.from_json(record["event"])
                    self.sessions.restore_session(
                        event.session_id, event.principal,
                        created=event.timestamp, last_active=event.timestamp)
                    self.sessions.restore_entry(event.session_id, event)
                    self._calls[event.call_id] = _CallState(
                        call_id=event.call_id,
                        session_id=event.session_id,
                        seq=event.seq,
                        event=event,
                        pre_decision=Decision.from_json(record["final"]),
                    )
                else:
                    call = self._calls.get(record.get("call_id", ""))
                    if call is not None:
                        call.reported = True
                        call.post_decision = Decision.from_json(record["final"])
                        result_event = ToolResultEvent.from_json(record["event"])
                        try:
                            self.sessions.attach_result(call.session_id, call.call_id,
                                                        result_event, None)
                        except Exception:
                            logger.warning("could not reattach result for call %s", call.call_id)
            except (ModelError, KeyError) as exc:
                logger.warning("skipping unreadable audit record %s: %s",
                               record.get("record_id"), exc)
        return last_version
