"""AgentGuard: attribute-based access control for tool-using LLM agents.

A control server evaluates every tool invocation against declarative
policies before (and optionally after) execution; decisions are allow, deny,
or escalation to LLM inspection or human review. Everything is audited to an
append-only log that doubles as replayable trace input.
"""

from .dsl import PolicySet, Rule, parse_policy_set, serialize_policy_set, validate
from .engine import combine, evaluate
from .model import (
    ABSENT,
    AttributePath,
    Decision,
    Effect,
    NetworkTarget,
    Principal,
    ToolCallEvent,
    ToolDescriptor,
    ToolResultEvent,
    extract_targets,
    resolve_attribute,
)
from .service import GuardService, ServiceSettings

__version__ = "0.1.0"

__all__ = [
    "ABSENT",
    "AttributePath",
    "Decision",
    "Effect",
    "GuardService",
    "NetworkTarget",
    "PolicySet",
    "Principal",
    "Rule",
    "ServiceSettings",
    "ToolCallEvent",
    "ToolDescriptor",
    "ToolResultEvent",
    "combine",
    "evaluate",
    "extract_targets",
    "parse_policy_set",
    "resolve_attribute",
    "serialize_policy_set",
    "validate",
    "__version__",
]
