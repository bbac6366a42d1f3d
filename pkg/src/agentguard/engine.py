"""Rule evaluation: match conditions against an event, combine effects into an outcome.

The engine is a pure function of (event, policy set, history view). Matching
semantics, in brief:

* a missing attribute resolves to ABSENT, and every comparison against
  ABSENT is false (``exists(path)`` tests presence explicitly);
* ``and``/``or`` short-circuit left to right;
* a runtime type mismatch (say ``<`` on a string) marks the rule as errored,
  and the errored rule contributes the policy set's ``on_eval_error`` effect;
* matched effects combine as the lattice maximum deny > review > allow, with
  an empty set falling through to the policy default.

LLM effects cannot be resolved here (that needs a backend call), so the
engine reports them as a pending outcome for the caller to resolve and then
feed back through :func:`conclude`.
"""

from __future__ import annotations

import functools
import re
import time
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional, Sequence

from .dsl.nodes import (
    And,
    Compare,
    ConditionExpr,
    Contains,
    Exists,
    HistoryCount,
    HistoryExists,
    In,
    Literal,
    Match,
    Not,
    Or,
    PolicySet,
    Rule,
)
from .model import (
    ABSENT,
    AttributeContext,
    AttributePath,
    Decision,
    Effect,
    IllegalRoot,
    POST,
    PRE,
    ToolCallEvent,
    ToolResultEvent,
    resolve_attribute,
)

DEFAULT_REVIEW_TIMEOUT = 300.0
DEFAULT_REVIEW_ON_TIMEOUT = "deny"

_RANK = {"allow": 1, "review": 2, "deny": 3}


class ConditionError(Exception):
    """A condition could not be evaluated (type mismatch or illegal reference)."""


class InternalError(Exception):
    """Unexpected failure inside the engine; policy content never raises this."""


@dataclass
class HistoryItem:
    """One earlier call in the session, with its result when already reported."""

    event: ToolCallEvent
    result_event: Optional[ToolResultEvent] = None


@dataclass(frozen=True)
class MatchedRule:
    """A rule that matched (or errored while being tested) for one event."""

    rule_id: str
    effect: Effect
    priority: int = 0
    errored: bool = False
    error: Optional[str] = None


@dataclass(frozen=True)
class Final:
    decision: Decision


@dataclass(frozen=True)
class PendingLLM:
    rule_ids: tuple[str, ...]


@dataclass(frozen=True)
class ReviewRequired:
    """The combined outcome is review; the caller must enqueue a review item."""

    timeout: float
    on_timeout: str
    rule_ids: tuple[str, ...]


@dataclass(frozen=True)
class PendingReview:
    review_id: str


@dataclass
class Evaluation:
    """Everything one check produced: matched rules, outcome, timing."""

    call_id: str
    phase: str
    policy_version: int
    matched: list[MatchedRule]
    outcome: Any
    started: float
    finished: Optional[float] = None
    llm_notes: dict[str, str] = field(default_factory=dict)

    def matched_refs(self) -> list[dict[str, Any]]:
        return [
            {"rule_id": m.rule_id, "effect_kind": m.effect.kind, "errored": m.errored}
            for m in self.matched
        ]


@dataclass(frozen=True)
class LlmResolution:
    """What one llm-effect rule contributes after inspection."""

    contribution: Optional[str]  # "deny", "review", or None for no contribution
    note: str = ""


# ---------------------------------------------------------------------------
# Value semantics
# ---------------------------------------------------------------------------

def json_equal(a: Any, b: Any) -> bool:
    """Structural equality with JSON type classes; bool is distinct from numbers."""
    if isinstance(a, bool) or isinstance(b, bool):
        return isinstance(a, bool) and isinstance(b, bool) and a == b
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return a == b
    if isinstance(a, str) and isinstance(b, str):
        return a == b
    if a is None or b is None:
        return a is None and b is None
    if isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
        return len(a) == len(b) and all(json_equal(x, y) for x, y in zip(a, b))
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(json_equal(a[k], b[k]) for k in a)
    return False


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _ordered_compare(op: str, a: Any, b: Any) -> bool:
    if _is_number(a) and _is_number(b):
        pass
    elif isinstance(a, str) and isinstance(b, str):
        pass
    else:
        raise ConditionError(
            f"cannot order {type(a).__name__} against {type(b).__name__} with {op!r}")
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    return a >= b


@functools.lru_cache(maxsize=512)
def _compiled(pattern: str) -> re.Pattern[str]:
    return re.compile(pattern)


# ---------------------------------------------------------------------------
# Condition evaluation
# ---------------------------------------------------------------------------

def _operand_value(operand: Any, ctx: AttributeContext) -> Any:
    if isinstance(operand, AttributePath):
        try:
            return resolve_attribute(operand, ctx)
        except IllegalRoot as exc:
            raise ConditionError(str(exc)) from exc
    return operand.value


def eval_condition(node: ConditionExpr, ctx: AttributeContext, history: Sequence[HistoryItem]) -> bool:
    if isinstance(node, Literal):
        if isinstance(node.value, bool):
            return node.value
        raise ConditionError(f"literal {node.value!r} is not a boolean condition")
    if isinstance(node, And):
        return all(eval_condition(item, ctx, history) for item in node.items)
    if isinstance(node, Or):
        return any(eval_condition(item, ctx, history) for item in node.items)
    if isinstance(node, Not):
        return not eval_condition(node.item, ctx, history)
    if isinstance(node, Compare):
        lhs = _operand_value(node.lhs, ctx)
        rhs = _operand_value(node.rhs, ctx)
        if lhs is ABSENT or rhs is ABSENT:
            return False
        if node.op == "==":
            return json_equal(lhs, rhs)
        if node.op == "!=":
            return not json_equal(lhs, rhs)
        return _ordered_compare(node.op, lhs, rhs)
    if isinstance(node, Match):
        value = _operand_value(node.path, ctx)
        if value is ABSENT:
            return False
        if not isinstance(value, str):
            raise ConditionError(f"'matches' needs a string, got {type(value).__name__}")
        return _compiled(node.pattern).search(value) is not None
    if isinstance(node, Contains):
        value = _operand_value(node.path, ctx)
        if value is ABSENT:
            return False
        needle = node.needle.value
        if isinstance(value, str):
            if not isinstance(needle, str):
                raise ConditionError("'contains' on a string needs a string needle")
            return needle in value
        if isinstance(value, (list, tuple)):
            return any(json_equal(item, needle) for item in value)
        if isinstance(value, dict):
            if not isinstance(needle, str):
                raise ConditionError("'contains' on a map needs a string key")
            return needle in value
        raise ConditionError(f"'contains' needs a string, list or map, got {type(value).__name__}")
    if isinstance(node, In):
        value = _operand_value(node.path, ctx)
        if value is ABSENT:
            return False
        return any(json_equal(value, item.value) for item in node.items)
    if isinstance(node, Exists):
        return _operand_value(node.path, ctx) is not ABSENT
    if isinstance(node, (HistoryExists, HistoryCount)):
        return evaluate_history_node(node, history)
    raise InternalError(f"unknown condition node {type(node).__name__}")  # pragma: no cover


def _prior_context(history: Sequence[HistoryItem], index: int) -> AttributeContext:
    item = history[index]
    result = item.result_event.result if item.result_event is not None else ABSENT
    return AttributeContext.for_event(item.event, phase=POST, result=result, history_length=index)


def evaluate_history_node(node: Any, history: Sequence[HistoryItem]) -> bool:
    """Quantify the inner condition over prior events, each under its own bindings."""
    count = 0
    for index in range(len(history)):
        prior_ctx = _prior_context(history, index)
        if eval_condition(node.inner, prior_ctx, ()):
            if isinstance(node, HistoryExists):
                return True
            count += 1
    if isinstance(node, HistoryExists):
        return False
    if node.op == "==":
        return count == node.bound
    if node.op == "!=":
        return count != node.bound
    return _ordered_compare(node.op, count, node.bound)


# ---------------------------------------------------------------------------
# Combining
# ---------------------------------------------------------------------------

def combine(effects: Iterable[str]) -> str:
    """Lattice maximum of resolved effect kinds: deny > review > allow; empty -> default.

    Commutative, associative, idempotent; order and multiplicity never matter.
    """
    best = 0
    for kind in effects:
        rank = _RANK.get(kind)
        if rank is None:
            raise ValueError(f"combine got unresolved effect kind {kind!r}")
        best = max(best, rank)
    if best == 0:
        return "default"
    return {1: "allow", 2: "review", 3: "deny"}[best]


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _contribution(matched: MatchedRule, ps: PolicySet,
                  llm_resolutions: Mapping[str, LlmResolution]) -> Optional[str]:
    if matched.errored:
        return None if ps.on_eval_error == "ignore" else ps.on_eval_error
    if matched.effect.kind == "llm":
        resolution = llm_resolutions.get(matched.rule_id)
        return resolution.contribution if resolution else None
    return matched.effect.kind


def _decision_reason(matched: MatchedRule) -> str:
    if matched.errored:
        return f"rule {matched.rule_id} errored ({matched.error}); escalated per on_eval_error"
    if matched.effect.reason:
        return f"{matched.rule_id}: {matched.effect.reason}"
    return f"matched rule {matched.rule_id}"


def conclude(
    evaluation: Evaluation,
    ps: PolicySet,
    llm_resolutions: Optional[Mapping[str, LlmResolution]] = None,
    *,
    default_review_timeout: float = DEFAULT_REVIEW_TIMEOUT,
    default_review_on_timeout: str = DEFAULT_REVIEW_ON_TIMEOUT,
) -> Any:
    """Combine contributions into Final(decision) or ReviewRequired.

    ``llm_resolutions`` maps rule id to what inspection decided; rules still
    unresolved contribute nothing (only safe when a deny already dominates).
    """
    resolutions = llm_resolutions or {}
    contributions: list[tuple[MatchedRule, str]] = []
    for matched in evaluation.matched:
        kind = _contribution(matched, ps, resolutions)
        if kind is not None:
            contributions.append((matched, kind))

    combined = combine(kind for _, kind in contributions)
    if combined == "deny":
        winner = next(m for m, kind in contributions if kind == "deny")
        via = "llm" if (winner.effect.kind == "llm" and not winner.errored) else "rule"
        reason = _decision_reason(winner)
        if via == "llm":
            note = evaluation.llm_notes.get(winner.rule_id)
            if note:
                reason = f"{reason} ({note})"
        return Final(Decision(verdict="deny", via=via, reason=reason))
    if combined == "review":
        timeout = default_review_timeout
        on_timeout = default_review_on_timeout
        explicit = [
            m for m, kind in contributions
            if kind == "review" and m.effect.kind == "review" and not m.errored
        ]
        if explicit:
            timeout = min(m.effect.review_timeout for m in explicit)
            on_timeout = "deny" if any(m.effect.on_timeout == "deny" for m in explicit) else "allow"
        rule_ids = tuple(m.rule_id for m, kind in contributions if kind == "review")
        return ReviewRequired(timeout=timeout, on_timeout=on_timeout, rule_ids=rule_ids)
    if combined == "allow":
        winner = next(m for m, kind in contributions if kind == "allow")
        return Final(Decision(verdict="allow", via="rule", reason=_decision_reason(winner)))
    return Final(Decision(verdict=ps.default_decision, via="default",
                          reason="no rule decided; policy default applied"))


def evaluate(
    event: ToolCallEvent,
    ps: PolicySet,
    history: Sequence[HistoryItem],
    *,
    phase: str = PRE,
    result: Optional[ToolResultEvent] = None,
    now: Optional[float] = None,
    default_review_timeout: float = DEFAULT_REVIEW_TIMEOUT,
    default_review_on_timeout: str = DEFAULT_REVIEW_ON_TIMEOUT,
) -> Evaluation:
    """Test every enabled rule of the phase against the event and combine the outcome.

    ``history`` must hold only events with seq strictly below the event's.
    The returned outcome is Final, ReviewRequired, or PendingLLM; the engine
    never raises on policy content.
    """
    started = time.time() if now is None else now
    ctx = AttributeContext.for_event(
        event,
        phase=phase,
        result=(result.result if result is not None else ABSENT),
        history_length=len(history),
    )

    matched: list[tuple[int, MatchedRule]] = []
    for index, rule in enumerate(ps.rules):
        if not rule.enabled or rule.phase != phase:
            continue
        try:
            if eval_condition(rule.when, ctx, history):
                matched.append((index, MatchedRule(rule.id, rule.effect, rule.priority)))
        except ConditionError as exc:
            matched.append((index, MatchedRule(rule.id, rule.effect, rule.priority,
                                               errored=True, error=str(exc))))

    matched.sort(key=lambda pair: (-pair[1].priority, pair[0]))
    ordered = [m for _, m in matched]

    evaluation = Evaluation(
        call_id=event.call_id,
        phase=phase,
        policy_version=ps.version,
        matched=ordered,
        outcome=None,
        started=started,
    )

    llm_ids = tuple(m.rule_id for m in ordered if m.effect.kind == "llm" and not m.errored)
    immediate = [kind for kind in
                 (_contribution(m, ps, {}) for m in ordered)
                 if kind is not None]
    if llm_ids and "deny" not in immediate:
        evaluation.outcome = PendingLLM(llm_ids)
        return evaluation

    evaluation.outcome = conclude(
        evaluation, ps,
        default_review_timeout=default_review_timeout,
        default_review_on_timeout=default_review_on_timeout,
    )
    if isinstance(evaluation.outcome, Final):
        evaluation.finished = time.time() if now is None else now
    return evaluation


def resolve_llm_effect(rule: Rule, state: str, *, error_decision: str = "review") -> LlmResolution:
    """Map an inspector verdict state onto the rule's contribution."""
    if state == "flag":
        return LlmResolution(contribution=rule.effect.on_flag, note="flagged by inspection")
    if state == "safe":
        return LlmResolution(contribution=None, note="inspection found nothing")
    return LlmResolution(contribution=error_decision, note="inspection failed")
