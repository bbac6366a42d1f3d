"""AST for the policy language: condition expressions, rules, and policy sets."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterator, Optional, Union

from ..model import PHASES, AttributePath, Effect, ModelError

COMPARE_OPS = ("==", "!=", "<", "<=", ">", ">=")
DEFAULT_DECISIONS = ("allow", "deny")
ERROR_POLICIES = ("deny", "review", "ignore")


@dataclass(frozen=True)
class Literal:
    """A constant operand: string, number, boolean, or null."""

    value: Any

    def __post_init__(self) -> None:
        if self.value is not None and not isinstance(self.value, (str, int, float, bool)):
            raise ModelError(f"unsupported literal type {type(self.value).__name__}")


Operand = Union[AttributePath, Literal]


@dataclass(frozen=True)
class And:
    items: tuple["ConditionExpr", ...]


@dataclass(frozen=True)
class Or:
    items: tuple["ConditionExpr", ...]


@dataclass(frozen=True)
class Not:
    item: "ConditionExpr"


@dataclass(frozen=True)
class Compare:
    lhs: Operand
    op: str
    rhs: Operand

    def __post_init__(self) -> None:
        if self.op not in COMPARE_OPS:
            raise ModelError(f"unknown comparison operator {self.op!r}")


@dataclass(frozen=True)
class Match:
    """Regular-expression search over a string attribute."""

    path: AttributePath
    pattern: str


@dataclass(frozen=True)
class Contains:
    """Substring test on strings, membership on lists, key presence on maps."""

    path: AttributePath
    needle: Literal


@dataclass(frozen=True)
class In:
    """Membership of the attribute value in a literal list."""

    path: AttributePath
    items: tuple[Literal, ...]


@dataclass(frozen=True)
class Exists:
    """True iff the attribute resolves to a present value."""

    path: AttributePath


@dataclass(frozen=True)
class HistoryExists:
    """True iff some earlier call in the session satisfies the inner condition."""

    inner: "ConditionExpr"


@dataclass(frozen=True)
class HistoryCount:
    """Compare the number of earlier satisfying calls against a bound."""

    inner: "ConditionExpr"
    op: str
    bound: int

    def __post_init__(self) -> None:
        if self.op not in COMPARE_OPS:
            raise ModelError(f"unknown comparison operator {self.op!r}")


ConditionExpr = Union[
    Literal, And, Or, Not, Compare, Match, Contains, In, Exists, HistoryExists, HistoryCount
]

HISTORY_NODES = (HistoryExists, HistoryCount)


def walk_condition(node: ConditionExpr) -> Iterator[ConditionExpr]:
    """Yield every node of the condition tree, parents before children."""
    yield node
    if isinstance(node, (And, Or)):
        for item in node.items:
            yield from walk_condition(item)
    elif isinstance(node, Not):
        yield from walk_condition(node.item)
    elif isinstance(node, HISTORY_NODES):
        yield from walk_condition(node.inner)


def condition_paths(node: ConditionExpr) -> Iterator[AttributePath]:
    """Yield every attribute path referenced anywhere in the condition."""
    for sub in walk_condition(node):
        if isinstance(sub, Compare):
            for operand in (sub.lhs, sub.rhs):
                if isinstance(operand, AttributePath):
                    yield operand
        elif isinstance(sub, (Match, Contains, In, Exists)):
            yield sub.path


@dataclass(frozen=True)
class Rule:
    """One declarative rule: when the condition holds in the given phase, apply the effect."""

    id: str
    when: ConditionExpr
    effect: Effect
    phase: str = "pre"
    priority: int = 0
    enabled: bool = True
    span: Optional[tuple[int, int]] = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if not self.id:
            raise ModelError("rule id must be non-empty")
        if self.phase not in PHASES:
            raise ModelError(f"rule phase must be one of {PHASES}")


@dataclass(frozen=True)
class PolicySet:
    """Versioned, ordered collection of rules plus set-wide defaults."""

    version: int = 1
    rules: tuple[Rule, ...] = ()
    default_decision: str = "allow"
    on_eval_error: str = "review"

    def __post_init__(self) -> None:
        if self.version < 1:
            raise ModelError("policy version must be >= 1")
        if self.default_decision not in DEFAULT_DECISIONS:
            raise ModelError("default_decision must be 'allow' or 'deny'")
        if self.on_eval_error not in ERROR_POLICIES:
            raise ModelError(f"on_eval_error must be one of {ERROR_POLICIES}")
        object.__setattr__(self, "rules", tuple(self.rules))
        seen: set[str] = set()
        for rule in self.rules:
            if rule.id in seen:
                raise ModelError(f"duplicate rule id {rule.id!r}")
            seen.add(rule.id)

    def rule_by_id(self, rule_id: str) -> Optional[Rule]:
        for rule in self.rules:
            if rule.id == rule_id:
                return rule
        return None
