"""Adapters from framework-native tool collections to guarded ones.

Supported shapes:

* ``dict`` of name -> callable (plain function registries);
* ``list``/``tuple`` of callables (names taken from ``__name__``);
* ``list``/``tuple`` of tool objects exposing ``name`` plus a ``func`` or
  ``run`` callable attribute (the shape LangChain-style frameworks use).

Objects are shallow-copied and the copy's callable replaced, so framework
internals and the caller's originals stay untouched.
"""

from __future__ import annotations

import copy
from typing import Any, Mapping, Sequence

from .guard import GuardClient, guard_tool


class AdapterMismatch(TypeError):
    """The toolset shape is not one the adapters understand."""


def _descriptor_for(obj: Any, name: str) -> dict[str, Any]:
    descriptor: dict[str, Any] = {"name": name}
    category = getattr(obj, "category", None)
    if isinstance(category, str):
        descriptor["category"] = category
    description = getattr(obj, "description", None)
    if isinstance(description, str) and description:
        descriptor["attributes"] = {"description": description[:200]}
    return descriptor


def _wrap_object(obj: Any, client: GuardClient) -> Any:
    name = getattr(obj, "name", None)
    if not isinstance(name, str) or not name:
        raise AdapterMismatch(f"tool object {obj!r} has no usable 'name'")
    descriptor = _descriptor_for(obj, name)
    for attr in ("func", "run"):
        target = getattr(obj, attr, None)
        if callable(target):
            clone = copy.copy(obj)
            try:
                setattr(clone, attr, guard_tool(target, descriptor, client=client))
            except AttributeError as exc:
                raise AdapterMismatch(
                    f"tool object {name!r} does not allow replacing {attr!r}") from exc
            return clone
    if callable(obj):
        return guard_tool(obj, descriptor, client=client)
    raise AdapterMismatch(f"tool object {name!r} exposes neither 'func' nor 'run'")


def wrap_toolset(tools: Any, *, client: GuardClient) -> Any:
    """Return a guarded collection of the same shape; every tool checked per call."""
    if isinstance(tools, Mapping):
        out = {}
        for name, func in tools.items():
            if not callable(func):
                raise AdapterMismatch(f"toolset entry {name!r} is not callable")
            out[name] = guard_tool(func, {"name": str(name)}, client=client)
        return out
    if isinstance(tools, Sequence) and not isinstance(tools, (str, bytes)):
        wrapped: list[Any] = []
        for item in tools:
            if hasattr(item, "name"):
                wrapped.append(_wrap_object(item, client))
            elif callable(item):
                wrapped.append(guard_tool(item, None, client=client))
            else:
                raise AdapterMismatch(f"toolset entry {item!r} is not a tool")
        return type(tools)(wrapped) if isinstance(tools, tuple) else wrapped
    raise AdapterMismatch(f"unsupported toolset shape: {type(tools).__name__}")
