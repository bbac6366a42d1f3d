"""Lint-style checks over a parsed policy set; diagnostics only, never fatal."""

from __future__ import annotations

from typing import Iterable, Optional, Sequence

from ..model import ToolDescriptor
from .nodes import Compare, In, Literal, PolicySet, Rule, Match, walk_condition
from .parser import Diagnostic


def _referenced_tool_names(rule: Rule) -> Iterable[str]:
    for node in walk_condition(rule.when):
        if isinstance(node, Compare) and node.op == "==":
            sides = (node.lhs, node.rhs)
            for path_side, lit_side in (sides, sides[::-1]):
                if (
                    getattr(path_side, "root", None) == "tool"
                    and getattr(path_side, "segments", None) == ("name",)
                    and isinstance(lit_side, Literal)
                    and isinstance(lit_side.value, str)
                ):
                    yield lit_side.value
        elif isinstance(node, In):
            if node.path.root == "tool" and node.path.segments == ("name",):
                for item in node.items:
                    if isinstance(item.value, str):
                        yield item.value


def pattern_has_backtracking_risk(pattern: str) -> bool:
    """Single-pass heuristic: a quantified group whose body itself contains a quantifier."""
    stack: list[bool] = []
    risky = False
    in_class = False
    i = 0
    n = len(pattern)
    while i < n:
        ch = pattern[i]
        if ch == "\\":
            i += 2
            continue
        if in_class:
            if ch == "]":
                in_class = False
            i += 1
            continue
        if ch == "[":
            in_class = True
            i += 1
            continue
        if ch == "(":
            stack.append(False)
            i += 1
            continue
        if ch == ")":
            had_quantifier = stack.pop() if stack else False
            quantified = i + 1 < n and pattern[i + 1] in "*+{"
            if had_quantifier and quantified:
                risky = True
            if stack and (had_quantifier or quantified or (i + 1 < n and pattern[i + 1] == "?")):
                stack[-1] = True
            i += 1
            continue
        if ch in "*+?{":
            if stack:
                stack[-1] = True
            i += 1
            continue
        i += 1
    return risky


def validate(ps: PolicySet, known_tools: Optional[Sequence[ToolDescriptor]] = None) -> list[Diagnostic]:
    """Non-fatal checks: unknown tool names, disabled rules, risky patterns."""
    diagnostics: list[Diagnostic] = []
    known_names = {tool.name for tool in known_tools} if known_tools is not None else None

    for rule in ps.rules:
        line, col = rule.span or (0, 0)
        if not rule.enabled:
            diagnostics.append(Diagnostic(
                "note", "unreachable_rule",
                f"rule {rule.id!r} is disabled and will never match", line, col))
        if known_names is not None:
            for name in _referenced_tool_names(rule):
                if name not in known_names:
                    diagnostics.append(Diagnostic(
                        "warning", "unknown_tool",
                        f"rule {rule.id!r} references unknown tool {name!r}", line, col))
        for node in walk_condition(rule.when):
            if isinstance(node, Match) and pattern_has_backtracking_risk(node.pattern):
                diagnostics.append(Diagnostic(
                    "warning", "pattern_risk",
                    f"rule {rule.id!r} pattern {node.pattern!r} risks catastrophic backtracking",
                    line, col))
    return diagnostics
