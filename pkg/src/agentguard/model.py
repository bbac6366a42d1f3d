"""Shared domain types: principals, tool-call events, effects, decisions, attribute paths.

All types here are immutable value objects once constructed and safe to share
across threads. Their ``to_json``/``from_json`` methods define the canonical
wire and audit representation (JSON objects, snake_case keys).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Iterator, Mapping, Optional, Sequence
from urllib.parse import urlsplit

PRE = "pre"
POST = "post"
PHASES = (PRE, POST)

EFFECT_KINDS = ("allow", "deny", "review", "llm")
VERDICTS = ("allow", "deny")
VIAS = ("rule", "llm", "review", "timeout", "default")
PATH_ROOTS = ("principal", "tool", "args", "target", "result", "session")

MAX_ARGS_DEPTH = 32
MIN_TRUST = 0
MAX_TRUST = 3


class ModelError(ValueError):
    """Raised when a domain value violates its invariants."""


class IllegalRoot(ModelError):
    """Raised when a ``result.*`` path is resolved in a pre-execution context."""


class _Absent:
    """Singleton marker for attributes that do not exist in the evaluation context."""

    _instance: Optional["_Absent"] = None

    def __new__(cls) -> "_Absent":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "ABSENT"

    def __bool__(self) -> bool:
        return False


ABSENT = _Absent()


# ---------------------------------------------------------------------------
# Value trees (tool arguments and results)
# ---------------------------------------------------------------------------

def tree_depth(value: Any) -> int:
    """Depth of a JSON-like value tree; scalars have depth 1."""
    if isinstance(value, dict):
        return 1 + max((tree_depth(v) for v in value.values()), default=0)
    if isinstance(value, (list, tuple)):
        return 1 + max((tree_depth(v) for v in value), default=0)
    return 1


def validate_tree(value: Any, *, max_depth: int = MAX_ARGS_DEPTH, what: str = "args") -> None:
    """Reject non-JSON values and trees deeper than the ingestion limit."""

    def walk(node: Any, depth: int) -> None:
        if depth > max_depth:
            raise ModelError(f"{what} tree exceeds maximum depth {max_depth}")
        if node is None or isinstance(node, (bool, int, float, str)):
            return
        if isinstance(node, (list, tuple)):
            for item in node:
                walk(item, depth + 1)
            return
        if isinstance(node, dict):
            for key, item in node.items():
                if not isinstance(key, str):
                    raise ModelError(f"{what} tree keys must be strings, got {type(key).__name__}")
                walk(item, depth + 1)
            return
        raise ModelError(f"{what} tree contains unsupported type {type(node).__name__}")

    walk(value, 1)


def iter_string_leaves(value: Any) -> Iterator[str]:
    """Yield string leaves of a value tree in depth-first order."""
    if isinstance(value, str):
        yield value
    elif isinstance(value, dict):
        for item in value.values():
            yield from iter_string_leaves(item)
    elif isinstance(value, (list, tuple)):
        for item in value:
            yield from iter_string_leaves(item)


# ---------------------------------------------------------------------------
# Timestamps
# ---------------------------------------------------------------------------

def iso_timestamp(epoch: float) -> str:
    """Render an epoch instant as UTC ISO-8601 with millisecond precision."""
    dt = datetime.fromtimestamp(epoch, tz=timezone.utc)
    return dt.isoformat(timespec="milliseconds").replace("+00:00", "Z")


def parse_timestamp(text: str) -> float:
    try:
        return datetime.fromisoformat(text.replace("Z", "+00:00")).timestamp()
    except ValueError as exc:
        raise ModelError(f"bad timestamp {text!r}") from exc


# ---------------------------------------------------------------------------
# Principals and tools
# ---------------------------------------------------------------------------

def _string_map(value: Any, what: str) -> dict[str, str]:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ModelError(f"{what} must be a string map")
    out: dict[str, str] = {}
    for key, item in value.items():
        if not isinstance(key, str) or not key:
            raise ModelError(f"{what} keys must be non-empty strings")
        if not isinstance(item, str):
            raise ModelError(f"{what} values must be strings")
        out[key] = item
    return out


@dataclass(frozen=True)
class Principal:
    """Identity on whose behalf a tool call is made."""

    agent_id: str
    role: str = ""
    trust_level: int = 0
    session_hint: Optional[str] = None
    extra: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.agent_id or not isinstance(self.agent_id, str):
            raise ModelError("principal agent_id must be a non-empty string")
        if not isinstance(self.trust_level, int) or isinstance(self.trust_level, bool):
            raise ModelError("trust_level must be an integer")
        if not (MIN_TRUST <= self.trust_level <= MAX_TRUST):
            raise ModelError(f"trust_level must be within [{MIN_TRUST}, {MAX_TRUST}]")
        object.__setattr__(self, "extra", dict(_string_map(self.extra, "principal extra")))

    def to_json(self) -> dict[str, Any]:
        return {
            "agent_id": self.agent_id,
            "role": self.role,
            "trust_level": self.trust_level,
            "session_hint": self.session_hint,
            "extra": dict(self.extra),
        }

    @classmethod
    def from_json(cls, obj: Any) -> "Principal":
        if not isinstance(obj, dict):
            raise ModelError("principal must be an object")
        return cls(
            agent_id=obj.get("agent_id", ""),
            role=obj.get("role", "") or "",
            trust_level=obj.get("trust_level", 0),
            session_hint=obj.get("session_hint"),
            extra=_string_map(obj.get("extra"), "principal extra"),
        )


@dataclass(frozen=True)
class ToolDescriptor:
    """Vendor-declared description of a tool the agent may invoke."""

    name: str
    category: Optional[str] = None
    attributes: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.name or not isinstance(self.name, str):
            raise ModelError("tool name must be a non-empty string")
        object.__setattr__(self, "attributes", dict(_string_map(self.attributes, "tool attributes")))

    def to_json(self) -> dict[str, Any]:
        return {"name": self.name, "category": self.category, "attributes": dict(self.attributes)}

    @classmethod
    def from_json(cls, obj: Any) -> "ToolDescriptor":
        if not isinstance(obj, dict):
            raise ModelError("tool must be an object")
        return cls(
            name=obj.get("name", ""),
            category=obj.get("category"),
            attributes=_string_map(obj.get("attributes"), "tool attributes"),
        )


@dataclass(frozen=True)
class NetworkTarget:
    """A network destination referenced by a tool call."""

    host: str
    scheme: Optional[str] = None
    port: Optional[int] = None
    path: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.host or not isinstance(self.host, str):
            raise ModelError("target host must be a non-empty string")
        if self.port is not None:
            if not isinstance(self.port, int) or isinstance(self.port, bool):
                raise ModelError("target port must be an integer")
            if not (1 <= self.port <= 65535):
                raise ModelError("target port must be within [1, 65535]")

    def to_json(self) -> dict[str, Any]:
        return {"scheme": self.scheme, "host": self.host, "port": self.port, "path": self.path}

    @classmethod
    def from_json(cls, obj: Any) -> "NetworkTarget":
        if not isinstance(obj, dict):
            raise ModelError("target must be an object")
        return cls(
            host=obj.get("host", ""),
            scheme=obj.get("scheme"),
            port=obj.get("port"),
            path=obj.get("path"),
        )


@dataclass(frozen=True)
class ToolCallEvent:
    """One tool invocation attempt, as seen by the decision service."""

    call_id: str
    session_id: str
    seq: int
    principal: Principal
    tool: ToolDescriptor
    args: Any = None
    targets: tuple[NetworkTarget, ...] = ()
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        if not self.call_id:
            raise ModelError("call_id must be non-empty")
        if not self.session_id:
            raise ModelError("session_id must be non-empty")
        if self.seq < 1:
            raise ModelError("seq must be >= 1")
        validate_tree(self.args, what="args")
        object.__setattr__(self, "targets", tuple(self.targets))

    def to_json(self) -> dict[str, Any]:
        return {
            "call_id": self.call_id,
            "session_id": self.session_id,
            "seq": self.seq,
            "principal": self.principal.to_json(),
            "tool": self.tool.to_json(),
            "args": self.args,
            "targets": [t.to_json() for t in self.targets],
            "timestamp": iso_timestamp(self.timestamp),
        }

    @classmethod
    def from_json(cls, obj: Any) -> "ToolCallEvent":
        if not isinstance(obj, dict):
            raise ModelError("event must be an object")
        return cls(
            call_id=obj.get("call_id", ""),
            session_id=obj.get("session_id", ""),
            seq=obj.get("seq", 0),
            principal=Principal.from_json(obj.get("principal")),
            tool=ToolDescriptor.from_json(obj.get("tool")),
            args=obj.get("args"),
            targets=tuple(NetworkTarget.from_json(t) for t in obj.get("targets") or ()),
            timestamp=parse_timestamp(obj["timestamp"]) if obj.get("timestamp") else 0.0,
        )


@dataclass(frozen=True)
class ToolResultEvent:
    """The outcome of an executed tool call, reported for post-execution checks."""

    call_id: str
    status: str
    result: Any = None
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        if not self.call_id:
            raise ModelError("result call_id must be non-empty")
        if self.status not in ("ok", "error"):
            raise ModelError("result status must be 'ok' or 'error'")
        validate_tree(self.result, what="result")

    def to_json(self) -> dict[str, Any]:
        return {
            "call_id": self.call_id,
            "status": self.status,
            "result": self.result,
            "timestamp": iso_timestamp(self.timestamp),
        }

    @classmethod
    def from_json(cls, obj: Any) -> "ToolResultEvent":
        if not isinstance(obj, dict):
            raise ModelError("result event must be an object")
        return cls(
            call_id=obj.get("call_id", ""),
            status=obj.get("status", ""),
            result=obj.get("result"),
            timestamp=parse_timestamp(obj["timestamp"]) if obj.get("timestamp") else 0.0,
        )


# ---------------------------------------------------------------------------
# Effects and decisions
# ---------------------------------------------------------------------------

DEFAULT_REVIEW_TIMEOUT = 300.0
DEFAULT_MAX_HISTORY_EVENTS = 10


@dataclass(frozen=True)
class Effect:
    """What a matched rule asks for: allow, deny, escalate to review, or ask an LLM."""

    kind: str
    reason: str = ""
    review_timeout: Optional[float] = None
    on_timeout: Optional[str] = None
    prompt_template: Optional[str] = None
    on_flag: Optional[str] = None
    max_history_events: Optional[int] = None

    def __post_init__(self) -> None:
        if self.kind not in EFFECT_KINDS:
            raise ModelError(f"unknown effect kind {self.kind!r}")
        if self.kind == "review":
            if self.review_timeout is None:
                object.__setattr__(self, "review_timeout", DEFAULT_REVIEW_TIMEOUT)
            if self.review_timeout <= 0:
                raise ModelError("review_timeout must be > 0")
            if self.on_timeout is None:
                object.__setattr__(self, "on_timeout", "deny")
            if self.on_timeout not in VERDICTS:
                raise ModelError("on_timeout must be 'allow' or 'deny'")
        elif self.kind == "llm":
            if not self.prompt_template:
                raise ModelError("llm effect requires a prompt template")
            if self.on_flag is None:
                object.__setattr__(self, "on_flag", "deny")
            if self.on_flag not in ("deny", "review"):
                raise ModelError("on_flag must be 'deny' or 'review'")
            if self.max_history_events is None:
                object.__setattr__(self, "max_history_events", DEFAULT_MAX_HISTORY_EVENTS)
            if self.max_history_events < 0:
                raise ModelError("max_history_events must be >= 0")
        else:
            for name in ("review_timeout", "on_timeout", "prompt_template", "on_flag", "max_history_events"):
                if getattr(self, name) is not None:
                    raise ModelError(f"effect kind {self.kind!r} does not take {name}")

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind, "reason": self.reason}
        if self.kind == "review":
            out["review_timeout"] = self.review_timeout
            out["on_timeout"] = self.on_timeout
        elif self.kind == "llm":
            out["prompt_template"] = self.prompt_template
            out["on_flag"] = self.on_flag
            out["max_history_events"] = self.max_history_events
        return out

    @classmethod
    def from_json(cls, obj: Any) -> "Effect":
        if not isinstance(obj, dict):
            raise ModelError("effect must be an object")
        return cls(
            kind=obj.get("kind", ""),
            reason=obj.get("reason", "") or "",
            review_timeout=obj.get("review_timeout"),
            on_timeout=obj.get("on_timeout"),
            prompt_template=obj.get("prompt_template"),
            on_flag=obj.get("on_flag"),
            max_history_events=obj.get("max_history_events"),
        )


@dataclass(frozen=True)
class Decision:
    """Final verdict for one checked event."""

    verdict: str
    via: str
    reason: str = ""
    review_id: Optional[str] = None

    def __post_init__(self) -> None:
        if self.verdict not in VERDICTS:
            raise ModelError(f"decision verdict must be one of {VERDICTS}")
        if self.via not in VIAS:
            raise ModelError(f"decision via must be one of {VIAS}")
        if self.via == "review" and not self.review_id:
            raise ModelError("via=review requires a review_id")

    def to_json(self) -> dict[str, Any]:
        return {
            "verdict": self.verdict,
            "via": self.via,
            "reason": self.reason,
            "review_id": self.review_id,
        }

    @classmethod
    def from_json(cls, obj: Any) -> "Decision":
        if not isinstance(obj, dict):
            raise ModelError("decision must be an object")
        return cls(
            verdict=obj.get("verdict", ""),
            via=obj.get("via", ""),
            reason=obj.get("reason", "") or "",
            review_id=obj.get("review_id"),
        )


# ---------------------------------------------------------------------------
# Attribute paths and resolution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AttributePath:
    """Dotted reference into the evaluation context, e.g. ``args.files.0.path``."""

    root: str
    segments: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.root not in PATH_ROOTS:
            raise ModelError(f"unknown attribute root {self.root!r}")
        object.__setattr__(self, "segments", tuple(self.segments))
        if self.root in ("args", "result") and not self.segments:
            raise ModelError(f"path root {self.root!r} requires at least one segment")
        for seg in self.segments:
            if not isinstance(seg, str) or not seg:
                raise ModelError("path segments must be non-empty strings")

    def dotted(self) -> str:
        return ".".join((self.root, *self.segments))

    @classmethod
    def parse(cls, text: str) -> "AttributePath":
        parts = text.split(".")
        if not parts or not parts[0]:
            raise ModelError(f"bad attribute path {text!r}")
        return cls(root=parts[0], segments=tuple(parts[1:]))

    def __str__(self) -> str:  # pragma: no cover - convenience
        return self.dotted()


@dataclass(frozen=True)
class AttributeContext:
    """Materialized view of one event for attribute resolution.

    ``roots`` maps each path root to a plain value tree, so resolution is a
    naive recursive lookup with no per-root special cases.
    """

    phase: str
    roots: Mapping[str, Any]

    @classmethod
    def for_event(
        cls,
        event: ToolCallEvent,
        *,
        phase: str = PRE,
        result: Any = ABSENT,
        history_length: int = 0,
    ) -> "AttributeContext":
        roots: dict[str, Any] = {
            "principal": event.principal.to_json(),
            "tool": event.tool.to_json(),
            "args": event.args,
            "target": _target_view(event.targets),
            "session": {
                "id": event.session_id,
                "seq": event.seq,
                "length": history_length,
            },
        }
        if result is not ABSENT:
            roots["result"] = result
        return cls(phase=phase, roots=roots)


def _target_view(targets: Sequence[NetworkTarget]) -> dict[str, Any]:
    """Expose targets both by index and as per-field projections.

    ``target.0.host`` is the first target's host; ``target.host`` is the list
    of every target's host, convenient with ``contains``/``in`` predicates.
    """
    view: dict[str, Any] = {str(i): t.to_json() for i, t in enumerate(targets)}
    view["count"] = len(targets)
    for name in ("scheme", "host", "port", "path"):
        view[name] = [getattr(t, name) for t in targets]
    return view


def resolve_attribute(path: AttributePath, ctx: AttributeContext) -> Any:
    """Resolve ``path`` against ``ctx``; missing segments yield ABSENT, never an error.

    Raises IllegalRoot only for ``result.*`` paths in a pre-execution context.
    """
    if path.root == "result" and ctx.phase == PRE:
        raise IllegalRoot("result.* paths are only legal in post-execution checks")
    node = ctx.roots.get(path.root, ABSENT)
    for seg in path.segments:
        if node is ABSENT:
            return ABSENT
        if isinstance(node, dict):
            node = node.get(seg, ABSENT)
        elif isinstance(node, (list, tuple)):
            if seg.isdigit():
                idx = int(seg)
                node = node[idx] if idx < len(node) else ABSENT
            else:
                node = ABSENT
        else:
            node = ABSENT
    return node


# ---------------------------------------------------------------------------
# Target extraction from argument trees
# ---------------------------------------------------------------------------

_URL_RE = re.compile(r"[A-Za-z][A-Za-z0-9+.-]*://[^\s\"'<>\\)\]]+")
_HOSTPORT_RE = re.compile(
    r"(?<![\w.:@/-])"
    r"((?:[A-Za-z0-9](?:[A-Za-z0-9-]*[A-Za-z0-9])?\.)+[A-Za-z]{2,}"
    r"|localhost"
    r"|\d{1,3}(?:\.\d{1,3}){3})"
    r":(\d{1,5})(?![\w.])"
)
_TRAILING_PUNCT = ".,;:!?'\""


def _target_from_url(candidate: str) -> Optional[NetworkTarget]:
    candidate = candidate.rstrip(_TRAILING_PUNCT)
    try:
        split = urlsplit(candidate)
        host = split.hostname
        port = split.port
    except ValueError:
        return None
    if not host:
        return None
    try:
        return NetworkTarget(host=host, scheme=split.scheme.lower() or None, port=port, path=split.path or None)
    except ModelError:
        return None


def _target_from_hostport(host: str, port_text: str) -> Optional[NetworkTarget]:
    try:
        port = int(port_text)
        return NetworkTarget(host=host.lower(), port=port)
    except (ValueError, ModelError):
        return None


def extract_targets(args: Any) -> list[NetworkTarget]:
    """Scan string leaves for URL and host:port literals, in depth-first leaf order.

    Unparseable candidates are skipped; order within a leaf follows the
    candidate's position in the string.
    """
    found: list[NetworkTarget] = []
    for leaf in iter_string_leaves(args):
        spans: list[tuple[int, Optional[NetworkTarget]]] = []
        url_ranges: list[tuple[int, int]] = []
        for m in _URL_RE.finditer(leaf):
            url_ranges.append((m.start(), m.end()))
            spans.append((m.start(), _target_from_url(m.group(0))))
        for m in _HOSTPORT_RE.finditer(leaf):
            if any(start <= m.start() < end for start, end in url_ranges):
                continue
            spans.append((m.start(), _target_from_hostport(m.group(1), m.group(2))))
        for _, target in sorted(spans, key=lambda item: item[0]):
            if target is not None:
                found.append(target)
    return found
