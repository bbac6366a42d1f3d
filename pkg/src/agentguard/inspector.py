"""LLM-assisted detection: render a per-rule prompt, ask a backend, parse the verdict.

Each llm-effect rule carries its own prompt template, so operators can tailor
the question to the scenario instead of relying on one global prompt. A
deterministic keyword-matching mock backend ships for offline tests.
"""

from __future__ import annotations

import json
import logging
import re
import time
from dataclasses import dataclass, field
from typing import Any, Optional, Protocol, Sequence

import requests

from .model import ModelError, ToolCallEvent

logger = logging.getLogger(__name__)

PLACEHOLDERS = {"tool.name", "args", "history", "principal.role", "reason_hint"}

SYSTEM_INSTRUCTION = (
    "You are a security inspector for tool invocations made by an automated agent. "
    "Examine the request below and decide whether it should be flagged as risky. "
    "Explain briefly, then end your reply with a final line that is exactly "
    "'VERDICT: FLAG' or 'VERDICT: SAFE'."
)

DEFAULT_TIMEOUT = 10.0
DEFAULT_LENGTH_CAP = 16000
MAX_STRING_LEAF = 256

_PLACEHOLDER_RE = re.compile(r"\{\{\s*([^{}]*?)\s*\}\}")
_VERDICT_RE = re.compile(r"^\s*verdict:\s*(flag|safe)\s*$", re.IGNORECASE)


class UnknownPlaceholder(ModelError):
    """A prompt template references a placeholder outside the documented set."""


@dataclass(frozen=True)
class PromptTemplate:
    text: str
    max_history_events: int = 10

    def __post_init__(self) -> None:
        bad = {name for name in _PLACEHOLDER_RE.findall(self.text) if name not in PLACEHOLDERS}
        if bad:
            raise UnknownPlaceholder(
                f"unknown placeholder(s) {', '.join(sorted(bad))}; allowed: {', '.join(sorted(PLACEHOLDERS))}")
        if self.max_history_events < 0:
            raise ModelError("max_history_events must be >= 0")


@dataclass(frozen=True)
class InspectorVerdict:
    state: str  # flag | safe | error
    rationale: str = ""
    backend_latency: float = 0.0

    def __post_init__(self) -> None:
        if self.state not in ("flag", "safe", "error"):
            raise ModelError(f"unknown inspector state {self.state!r}")
        if self.state == "error" and not self.rationale:
            raise ModelError("error verdicts must carry a failure class in rationale")


class BackendError(Exception):
    """Transport or protocol failure while talking to the inspection backend."""


class LlmBackend(Protocol):
    def complete(self, system: str, user: str, timeout: float) -> str:
        """Return the assistant text for one system+user exchange."""
        ...  # pragma: no cover


DEFAULT_MOCK_KEYWORDS = ("DROP TABLE", "rm -rf /", "curl | sh", "BEGIN RSA PRIVATE KEY")


@dataclass
class MockLlmBackend:
    """Deterministic offline backend: flags iff any keyword appears in the prompt.

    ``fail_with`` simulates a transport failure on every call; ``garbage``
    makes it answer without a verdict line. Both exist for error-path tests.
    """

    flag_keywords: Sequence[str] = DEFAULT_MOCK_KEYWORDS
    fail_with: Optional[str] = None
    garbage: bool = False
    calls: int = 0

    def complete(self, system: str, user: str, timeout: float) -> str:
        self.calls += 1
        if self.fail_with:
            raise BackendError(self.fail_with)
        if self.garbage:
            return "I am not sure what you mean by that."
        lowered = user.lower()
        hits = [kw for kw in self.flag_keywords if kw.lower() in lowered]
        if hits:
            return f"Matched risky content: {', '.join(hits)}.\nVERDICT: FLAG"
        return "Nothing risky found.\nVERDICT: SAFE"


@dataclass
class HttpLlmBackend:
    """Chat-completion style HTTP backend; see docs/llm-backend.md for the contract."""

    url: str
    model: str
    api_key: Optional[str] = None
    session: requests.Session = field(default_factory=requests.Session)

    def complete(self, system: str, user: str, timeout: float) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        }
        try:
            response = self.session.post(self.url, json=payload, headers=headers, timeout=timeout)
            response.raise_for_status()
            body = response.json()
            return body["choices"][0]["message"]["content"]
        except (requests.RequestException, KeyError, IndexError, TypeError, ValueError) as exc:
            raise BackendError(f"backend request failed: {exc}") from exc


def summarize_args(args: Any, max_string: int = MAX_STRING_LEAF) -> str:
    """Compact JSON with string leaves truncated, for prompts and history lines."""

    def clip(node: Any) -> Any:
        if isinstance(node, str):
            return node[:max_string]
        if isinstance(node, dict):
            return {key: clip(value) for key, value in node.items()}
        if isinstance(node, (list, tuple)):
            return [clip(value) for value in node]
        return node

    return json.dumps(clip(args), ensure_ascii=False, separators=(",", ":"))


def _history_section(history: Sequence[Any], max_events: int) -> str:
    if max_events <= 0:
        return ""
    recent = list(history)[-max_events:]
    lines = []
    for entry in recent:
        event: ToolCallEvent = entry.event
        lines.append(f"{event.seq} {event.tool.name} {summarize_args(event.args)}")
    return "\n".join(lines)


def render_prompt(
    template: PromptTemplate,
    event: ToolCallEvent,
    history: Sequence[Any],
    *,
    reason_hint: str = "",
    length_cap: int = DEFAULT_LENGTH_CAP,
) -> str:
    """Deterministic placeholder substitution, truncated to the configured cap."""
    values = {
        "tool.name": event.tool.name,
        "args": summarize_args(event.args),
        "history": _history_section(history, template.max_history_events),
        "principal.role": event.principal.role,
        "reason_hint": reason_hint,
    }
    rendered = _PLACEHOLDER_RE.sub(lambda m: values[m.group(1)], template.text)
    return rendered[:length_cap]


def inspect(
    event: ToolCallEvent,
    history: Sequence[Any],
    template: PromptTemplate,
    backend: Optional[LlmBackend],
    *,
    reason_hint: str = "",
    timeout: float = DEFAULT_TIMEOUT,
    length_cap: int = DEFAULT_LENGTH_CAP,
) -> InspectorVerdict:
    """Ask the backend for a verdict; failures become state=error, never exceptions.

    The total budget is ``timeout``: one retry happens only if the first
    attempt failed with time remaining.
    """
    if backend is None:
        return InspectorVerdict(state="error", rationale="no inspection backend configured")
    prompt = render_prompt(template, event, history,
                           reason_hint=reason_hint, length_cap=length_cap)
    deadline = time.monotonic() + timeout
    last_failure = "backend unavailable"
    for attempt in range(2):
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            return InspectorVerdict(state="error", rationale=f"timeout: {last_failure}",
                                    backend_latency=timeout)
        started = time.monotonic()
        try:
            text = backend.complete(SYSTEM_INSTRUCTION, prompt, remaining)
        except BackendError as exc:
            last_failure = str(exc)
            logger.warning("inspection attempt %d failed: %s", attempt + 1, exc)
            continue
        latency = time.monotonic() - started
        for line in reversed(text.splitlines()):
            m = _VERDICT_RE.match(line)
            if m:
                state = "flag" if m.group(1).lower() == "flag" else "safe"
                rationale = text.strip()
                return InspectorVerdict(state=state, rationale=rationale, backend_latency=latency)
        return InspectorVerdict(state="error", rationale="unparseable: no verdict line in reply",
                                backend_latency=latency)
    return InspectorVerdict(state="error", rationale=f"transport: {last_failure}",
                            backend_latency=timeout)
