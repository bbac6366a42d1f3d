"""Canonical text form of a policy set; ``parse(serialize(ps))`` is structurally ``ps``."""

from __future__ import annotations

import json
from typing import Any

from ..model import AttributePath, Effect
from .nodes import (
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

HEADER = "# agentguard policy"

_PREC_OR = 1
_PREC_AND = 2
_PREC_NOT = 3
_PREC_ATOM = 4


def _literal_text(value: Any) -> str:
    if value is None:
        return "null"
    if value is True:
        return "true"
    if value is False:
        return "false"
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, int):
        return str(value)
    return repr(value)


def _operand_text(operand: Any) -> str:
    if isinstance(operand, AttributePath):
        return operand.dotted()
    return _literal_text(operand.value)


def _duration_text(seconds: float) -> str:
    if float(seconds).is_integer():
        return f"{int(seconds)}s"
    return f"{seconds!r}s"


def _precedence(node: ConditionExpr) -> int:
    if isinstance(node, Or):
        return _PREC_OR
    if isinstance(node, And):
        return _PREC_AND
    if isinstance(node, Not):
        return _PREC_NOT
    return _PREC_ATOM


def condition_text(node: ConditionExpr, min_prec: int = _PREC_OR) -> str:
    if isinstance(node, Or):
        text = " or ".join(condition_text(item, _PREC_AND) for item in node.items)
    elif isinstance(node, And):
        text = " and ".join(condition_text(item, _PREC_NOT) for item in node.items)
    elif isinstance(node, Not):
        text = "not " + condition_text(node.item, _PREC_ATOM)
    elif isinstance(node, Compare):
        text = f"{_operand_text(node.lhs)} {node.op} {_operand_text(node.rhs)}"
    elif isinstance(node, Match):
        text = f"{node.path.dotted()} matches {json.dumps(node.pattern, ensure_ascii=False)}"
    elif isinstance(node, Contains):
        text = f"{node.path.dotted()} contains {_literal_text(node.needle.value)}"
    elif isinstance(node, In):
        items = ", ".join(_literal_text(item.value) for item in node.items)
        text = f"{node.path.dotted()} in [{items}]"
    elif isinstance(node, Exists):
        text = f"exists({node.path.dotted()})"
    elif isinstance(node, HistoryExists):
        text = f"history.exists({condition_text(node.inner)})"
    elif isinstance(node, HistoryCount):
        text = f"history.count({condition_text(node.inner)}) {node.op} {node.bound}"
    elif isinstance(node, Literal):
        text = _literal_text(node.value)
    else:  # pragma: no cover - exhaustive over node types
        raise TypeError(f"cannot serialize condition node {type(node).__name__}")
    if _precedence(node) < min_prec:
        return f"({text})"
    return text


def effect_text(effect: Effect) -> str:
    if effect.kind in ("allow", "deny"):
        return effect.kind
    if effect.kind == "review":
        return (
            f"review(timeout: {_duration_text(effect.review_timeout or 0)}, "
            f"on_timeout: {effect.on_timeout})"
        )
    return (
        f"llm(prompt: {json.dumps(effect.prompt_template, ensure_ascii=False)}, "
        f"on_flag: {effect.on_flag}, max_history: {effect.max_history_events})"
    )


def rule_text(rule: Rule) -> str:
    lines = [f"rule {rule.id} {{"]
    lines.append(f"  phase: {rule.phase}")
    if rule.priority != 0:
        lines.append(f"  priority: {rule.priority}")
    if not rule.enabled:
        lines.append("  enabled: false")
    lines.append(f"  when: {condition_text(rule.when)}")
    lines.append(f"  effect: {effect_text(rule.effect)}")
    if rule.effect.reason:
        lines.append(f"  reason: {json.dumps(rule.effect.reason, ensure_ascii=False)}")
    lines.append("}")
    return "\n".join(lines)


def serialize_policy_set(ps: PolicySet) -> str:
    """Render a policy set to canonical DSL text."""
    parts = [HEADER]
    settings = []
    if ps.version != 1:
        settings.append(f"version: {ps.version}")
    if ps.default_decision != "allow":
        settings.append(f"default: {ps.default_decision}")
    if ps.on_eval_error != "review":
        settings.append(f"on_error: {ps.on_eval_error}")
    if settings:
        parts.extend(settings)
    for rule in ps.rules:
        parts.append("")
        parts.append(rule_text(rule))
    return "\n".join(parts) + "\n"
