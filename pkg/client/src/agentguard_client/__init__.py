"""AgentGuard enforcement SDK: wrap agent tools so every call is checked centrally."""

from .adapters import AdapterMismatch, wrap_toolset
from .guard import GuardClient, GuardConfig, GuardDenied, GuardUnavailable, guard_tool

__version__ = "0.1.0"

__all__ = [
    "AdapterMismatch",
    "GuardClient",
    "GuardConfig",
    "GuardDenied",
    "GuardUnavailable",
    "guard_tool",
    "wrap_toolset",
    "__version__",
]
