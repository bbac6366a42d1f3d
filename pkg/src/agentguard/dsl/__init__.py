"""Policy language: AST, parser, serializer, lint checks, and rule templates."""

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
from .parser import Diagnostic, PolicyParseError, parse_policy_set, try_parse_policy_set
from .printer import serialize_policy_set
from .validation import validate

__all__ = [
    "And",
    "Compare",
    "ConditionExpr",
    "Contains",
    "Diagnostic",
    "Exists",
    "HistoryCount",
    "HistoryExists",
    "In",
    "Literal",
    "Match",
    "Not",
    "Or",
    "PolicyParseError",
    "PolicySet",
    "Rule",
    "parse_policy_set",
    "serialize_policy_set",
    "try_parse_policy_set",
    "validate",
]
