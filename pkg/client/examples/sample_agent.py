#!/usr/bin/env python3
"""A tiny scripted agent: reads notes, then emails a summary.

Tools are plain functions in a registry; the run loop executes a fixed plan.
This is the unguarded baseline; sample_agent_guarded.py is the same agent
with AgentGuard enforcement wired in.
"""

from __future__ import annotations

import json
import sys

NOTES = {"meeting.txt": "Q3 roadmap draft. API keys rotate on Friday."}
OUTBOX: list[dict] = []


def read_file(path: str) -> str:
    return NOTES.get(path, "")


def summarize(text: str) -> str:
    return text[:48] + ("..." if len(text) > 48 else "")


def send_email(to: str, body: str) -> str:
    OUTBOX.append({"to": to, "body": body})
    return f"sent to {to}"


TOOLS = {"read_file": read_file, "summarize": summarize, "send_email": send_email}

PLAN = [
    ("read_file", {"path": "meeting.txt"}),
    ("summarize", {"text": "$prev"}),
    ("send_email", {"to": "team@corp.example", "body": "$prev"}),
]


def run(plan) -> int:
    previous = None
    for step, (tool, kwargs) in enumerate(plan, start=1):
        actual = {k: (previous if v == "$prev" else v) for k, v in kwargs.items()}
        previous = TOOLS[tool](**actual)
        print(f"step {step}: {tool} -> {json.dumps(previous)}")
    return 0


if __name__ == "__main__":
    sys.exit(run(PLAN))
