"""Rule templates: a data catalog the console renders as parameterized forms.

Each template carries a DSL body with ``${param}`` slots. ``${param@string}``
inserts the value as a quoted string literal; a bare ``${param}`` inserts it
verbatim (identifiers, numbers, durations, choices). Rendering always
re-parses the produced text, so a bad parameter surfaces as ordinary policy
diagnostics rather than broken text.
"""

from __future__ import annotations

import json
import re
from importlib import resources
from typing import Any, Mapping

from .parser import Diagnostic, try_parse_policy_set

_SLOT_RE = re.compile(r"\$\{(\w+)(@string)?\}")


def load_catalog() -> list[dict[str, Any]]:
    """The shipped template catalog; deployments may extend it with their own JSON."""
    text = resources.files("agentguard.templates").joinpath("catalog.json").read_text("utf-8")
    return json.loads(text)


def template_by_id(template_id: str, catalog: list[dict[str, Any]] | None = None) -> dict[str, Any]:
    for entry in catalog if catalog is not None else load_catalog():
        if entry["id"] == template_id:
            return entry
    raise KeyError(f"unknown template {template_id!r}")


def render_template(template: Mapping[str, Any], params: Mapping[str, str]) -> str:
    """Fill the template body; raises KeyError for a missing parameter."""
    values = {p["name"]: params.get(p["name"], p.get("default", "")) for p in template["params"]}
    for name, value in values.items():
        if value == "":
            raise KeyError(f"template parameter {name!r} is required")

    def fill(match: re.Match[str]) -> str:
        name, as_string = match.group(1), match.group(2)
        if name not in values:
            raise KeyError(f"template body references unknown parameter {name!r}")
        value = str(values[name])
        return json.dumps(value, ensure_ascii=False) if as_string else value

    return _SLOT_RE.sub(fill, template["body"]) + "\n"


def render_and_check(template_id: str, params: Mapping[str, str]) -> tuple[str, list[Diagnostic]]:
    """Render one template to DSL text and return it with its parse diagnostics."""
    text = render_template(template_by_id(template_id), params)
    _, diagnostics = try_parse_policy_set(text)
    return text, diagnostics
