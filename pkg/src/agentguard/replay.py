"""Offline trace replay: run recorded tool-call traces through the embedded engine.

A trace is newline-delimited JSON, one record per line, sharing the audit
log's event vocabulary::

    {"kind": "call", "session": "s1", "tool": "read_file", "args": {"path": "/tmp/x"}, "expect": "allow"}
    {"kind": "result", "call_ref": 1, "status": "ok", "result": {"text": "..."}}

``call_ref`` counts call records within the file, starting at 1. ``expect``
values come from the decision vocabulary (allow, deny, review); replay exits
non-zero when any expectation mismatches, which makes policy regression
tests one shell line. Replay is deterministic: identical inputs produce
byte-identical reports.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, TextIO

from . import engine as engine_mod
from .clock import SteppingClock
from .dsl import validate
from .dsl.nodes import PolicySet
from .dsl.parser import try_parse_policy_set
from .engine import Final, PendingLLM, ReviewRequired
from .inspector import MockLlmBackend, PromptTemplate, inspect
from .model import (
    ModelError,
    NetworkTarget,
    POST,
    PRE,
    Principal,
    ToolCallEvent,
    ToolDescriptor,
    ToolResultEvent,
    extract_targets,
)
from .sessions import SessionStore

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_ERROR = 2

REVIEW_MODES = ("deny", "allow", "pending")


class TraceError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"trace line {line}: {message}")
        self.line = line


@dataclass
class TraceRecord:
    line: int
    kind: str  # call | result
    session: str = ""
    tool: Optional[ToolDescriptor] = None
    args: Any = None
    targets: Optional[list[NetworkTarget]] = None
    principal: Optional[Principal] = None
    call_ref: int = 0
    status: str = "ok"
    result: Any = None
    expect: Optional[str] = None


def load_trace(path: str | Path) -> list[TraceRecord]:
    records: list[TraceRecord] = []
    call_count = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            try:
                obj = json.loads(stripped)
            except json.JSONDecodeError as exc:
                raise TraceError(line_no, f"not valid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise TraceError(line_no, "record must be a JSON object")
            kind = obj.get("kind")
            expect = obj.get("expect")
            if expect is not None and expect not in ("allow", "deny", "review"):
                raise TraceError(line_no, f"expect must be allow, deny or review, got {expect!r}")
            try:
                if kind == "call":
                    call_count += 1
                    tool_raw = obj.get("tool")
                    if isinstance(tool_raw, str):
                        tool = ToolDescriptor(name=tool_raw)
                    else:
                        tool = ToolDescriptor.from_json(tool_raw)
                    targets = None
                    if obj.get("targets") is not None:
                        targets = [NetworkTarget.from_json(t) for t in obj["targets"]]
                    principal = None
                    if obj.get("principal") is not None:
                        principal = Principal.from_json(obj["principal"])
                    records.append(TraceRecord(
                        line=line_no, kind="call",
                        session=str(obj.get("session") or "default"),
                        tool=tool, args=obj.get("args"), targets=targets,
                        principal=principal, expect=expect,
                    ))
                elif kind == "result":
                    call_ref = obj.get("call_ref")
                    if not isinstance(call_ref, int) or not (1 <= call_ref <= call_count):
                        raise TraceError(
                            line_no, f"call_ref must reference an earlier call record, got {call_ref!r}")
                    records.append(TraceRecord(
                        line=line_no, kind="result", call_ref=call_ref,
                        status=obj.get("status", "ok"), result=obj.get("result"),
                        expect=expect,
                    ))
                else:
                    raise TraceError(line_no, f"kind must be 'call' or 'result', got {kind!r}")
            except ModelError as exc:
                raise TraceError(line_no, str(exc)) from exc
    return records


@dataclass
class ReplayOutcome:
    index: int
    kind: str
    label: str  # tool name or call reference
    outcome: str  # allow | deny | review
    verdict: str  # allow | deny | review (after --review-as resolution)
    via: str
    reason: str
    expect: Optional[str]
    ok: bool

    def to_json(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "kind": self.kind,
            "label": self.label,
            "outcome": self.outcome,
            "verdict": self.verdict,
            "via": self.via,
            "reason": self.reason,
            "expect": self.expect,
            "ok": self.ok,
        }


@dataclass
class ReplayReport:
    outcomes: list[ReplayOutcome] = field(default_factory=list)

    @property
    def mismatches(self) -> list[ReplayOutcome]:
        return [o for o in self.outcomes if not o.ok]

    @property
    def ok(self) -> bool:
        return not self.mismatches

    def to_json(self) -> dict[str, Any]:
        return {
            "records": [o.to_json() for o in self.outcomes],
            "mismatches": len(self.mismatches),
            "ok": self.ok,
        }

    def render(self) -> str:
        lines = []
        for o in self.outcomes:
            line = f"#{o.index:03d} {o.kind:<6} {o.label:<24} -> {o.verdict} (via {o.via})"
            if o.expect is not None:
                line += f"  expect={o.expect} {'ok' if o.ok else 'MISMATCH'}"
            lines.append(line)
        checked = sum(1 for o in self.outcomes if o.expect is not None)
        lines.append(
            f"replayed {len(self.outcomes)} records: "
            f"{checked} expectations, {len(self.mismatches)} mismatches")
        return "\n".join(lines)


class TraceReplayer:
    """Drives the engine over a trace with in-memory sessions and the mock inspector."""

    def __init__(self, ps: PolicySet, *, review_as: str = "deny",
                 mock_keywords: Optional[list[str]] = None):
        if review_as not in REVIEW_MODES:
            raise ValueError(f"review_as must be one of {REVIEW_MODES}")
        self.ps = ps
        self.review_as = review_as
        self.clock = SteppingClock(start=0.0, step=1.0)
        self.sessions = SessionStore(self.clock)
        self.backend = MockLlmBackend(flag_keywords=tuple(mock_keywords)
                                      if mock_keywords else MockLlmBackend().flag_keywords)
        self._session_ids: dict[str, str] = {}
        self._calls: list[tuple[str, ToolCallEvent]] = []  # (session_id, event) per call record

    def _session(self, key: str, principal: Optional[Principal]):
        if key not in self._session_ids:
            sid = self.sessions.create_session(
                principal or Principal(agent_id=f"replay:{key}", role="replay"),
                session_id=f"replay_{key}",
            )
            self._session_ids[key] = sid
        return self._session_ids[key]

    def _resolve(self, evaluation, event, history):
        outcome = evaluation.outcome
        if isinstance(outcome, PendingLLM):
            resolutions = {}
            for rule_id in outcome.rule_ids:
                rule = self.ps.rule_by_id(rule_id)
                template = PromptTemplate(text=rule.effect.prompt_template or "",
                                          max_history_events=rule.effect.max_history_events or 0)
                verdict = inspect(event, history, template, self.backend,
                                  reason_hint=rule.effect.reason)
                resolutions[rule_id] = engine_mod.resolve_llm_effect(rule, verdict.state)
                evaluation.llm_notes[rule_id] = resolutions[rule_id].note
            outcome = engine_mod.conclude(evaluation, self.ps, resolutions)
            evaluation.outcome = outcome
        return outcome

    def _outcome_fields(self, outcome) -> tuple[str, str, str, str]:
        """(outcome label, resolved verdict, via, reason)."""
        if isinstance(outcome, Final):
            d = outcome.decision
            return d.verdict, d.verdict, d.via, d.reason
        assert isinstance(outcome, ReviewRequired)
        if self.review_as == "pending":
            return "review", "review", "review", f"review required by {', '.join(outcome.rule_ids)}"
        return ("review", self.review_as, "review",
                f"review required by {', '.join(outcome.rule_ids)}; "
                f"resolved as {self.review_as} by --review-as")

    def replay_record(self, index: int, record: TraceRecord) -> ReplayOutcome:
        if record.kind == "call":
            sid = self._session(record.session, record.principal)
            with self.sessions.session(sid) as sess:
                seq = sess.next_seq()
                event = ToolCallEvent(
                    call_id=f"trace_{index}",
                    session_id=sid,
                    seq=seq,
                    principal=sess.principal,
                    tool=record.tool,
                    args=record.args,
                    targets=tuple(record.targets) if record.targets is not None
                    else tuple(extract_targets(record.args)),
                    timestamp=self.clock.now(),
                )
                history = sess.history_view(seq)
                evaluation = engine_mod.evaluate(event, self.ps, history, phase=PRE,
                                                 now=event.timestamp)
                sess.append(event, evaluation)
            self._calls.append((sid, event))
            outcome = self._resolve(evaluation, event, history)
            label = record.tool.name
        else:
            sid, event = self._calls[record.call_ref - 1]
            result_event = ToolResultEvent(call_id=event.call_id, status=record.status,
                                           result=record.result, timestamp=self.clock.now())
            sess = self.sessions.get(sid)
            history = sess.history_view(event.seq)
            evaluation = engine_mod.evaluate(event, self.ps, history, phase=POST,
                                             result=result_event, now=result_event.timestamp)
            self.sessions.attach_result(sid, event.call_id, result_event, evaluation)
            outcome = self._resolve(evaluation, event, history)
            label = f"{event.tool.name}#result"

        outcome_label, verdict, via, reason = self._outcome_fields(outcome)
        expect_ok = True
        if record.expect is not None:
            if record.expect == "review":
                expect_ok = outcome_label == "review"
            else:
                expect_ok = verdict == record.expect
        return ReplayOutcome(index=index, kind=record.kind, label=label,
                             outcome=outcome_label, verdict=verdict, via=via,
                             reason=reason, expect=record.expect, ok=expect_ok)


def replay(policy_path: str | Path, trace_path: str | Path, *,
           review_as: str = "deny", json_output: bool = False,
           out: Optional[TextIO] = None) -> int:
    """Replay a trace against a policy file; prints a report and returns the exit code."""
    import sys

    stream = out or sys.stdout
    try:
        text = Path(policy_path).read_text("utf-8")
    except OSError as exc:
        print(f"error: cannot read policy file: {exc}", file=stream)
        return EXIT_ERROR
    ps, diagnostics = try_parse_policy_set(text)
    if ps is None:
        for diag in diagnostics:
            print(f"{policy_path}:{diag.render()}", file=stream)
        return EXIT_ERROR
    try:
        records = load_trace(trace_path)
    except (OSError, TraceError) as exc:
        print(f"error: {exc}", file=stream)
        return EXIT_ERROR

    replayer = TraceReplayer(ps, review_as=review_as)
    report = ReplayReport()
    for index, record in enumerate(records, start=1):
        report.outcomes.append(replayer.replay_record(index, record))

    if json_output:
        print(json.dumps(report.to_json(), ensure_ascii=False, indent=2), file=stream)
    else:
        print(report.render(), file=stream)
    return EXIT_OK if report.ok else EXIT_MISMATCH


def check_policies(policy_path: str | Path, *, json_output: bool = False,
                   out: Optional[TextIO] = None) -> int:
    """Parse and lint a policy file; exit 0 iff there are no errors."""
    import sys

    stream = out or sys.stdout
    try:
        text = Path(policy_path).read_text("utf-8")
    except OSError as exc:
        print(f"error: cannot read policy file: {exc}", file=stream)
        return EXIT_ERROR
    ps, diagnostics = try_parse_policy_set(text)
    if ps is not None:
        diagnostics = diagnostics + validate(ps)
    if json_output:
        print(json.dumps({
            "ok": ps is not None,
            "rules": len(ps.rules) if ps else 0,
            "diagnostics": [d.to_json() for d in diagnostics],
        }, ensure_ascii=False, indent=2), file=stream)
    else:
        for diag in diagnostics:
            print(f"{policy_path}:{diag.render()}", file=stream)
        if ps is not None:
            print(f"{policy_path}: {len(ps.rules)} rules, "
                  f"{sum(1 for d in diagnostics if d.severity == 'warning')} warnings", file=stream)
    return EXIT_OK if ps is not None else EXIT_ERROR
