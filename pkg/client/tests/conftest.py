"""Spawn a real control server subprocess; the SDK under test only sees its HTTP API."""

from __future__ import annotations

import socket
import subprocess
import sys
import time
from pathlib import Path

import pytest
import requests

ADMIN_TOKEN = "client-test-admin"

EXFIL_POLICY = """
rule no_shell {
  phase: pre
  when: tool.name == "shell"
  effect: deny
  reason: "shell banned"
}

rule exfil_guard {
  phase: pre
  when: tool.name == "send_email" and history.exists(tool.name == "read_file")
  effect: deny
  reason: "read-then-send exfiltration"
}

rule cred_leak {
  phase: post
  when: result.text matches "AKIA[0-9A-Z]{16}"
  effect: deny
  reason: "credential-shaped result"
}

rule pay_review {
  phase: pre
  when: tool.name == "pay"
  effect: review(timeout: 120s, on_timeout: deny)
  reason: "payments need approval"
}
"""


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


class ServerProcess:
    def __init__(self, tmp_path: Path, policy_text: str):
        self.port = free_port()
        self.base_url = f"http://127.0.0.1:{self.port}"
        policy = tmp_path / "policy.agp"
        policy.write_text(policy_text, encoding="utf-8")
        config = tmp_path / "server.toml"
        config.write_text(
            f'policy_path = "{policy}"\n'
            f'audit_path = "{tmp_path / "audit.ndjson"}"\n'
            f"port = {self.port}\n"
            f'admin_token = "{ADMIN_TOKEN}"\n'
            'llm_backend = "mock"\n'
            "review_sweep_interval = 0.05\n",
            encoding="utf-8")
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "agentguard.cli", "serve", "--config", str(config)],
            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
        deadline = time.monotonic() + 20
        while time.monotonic() < deadline:
            if self.proc.poll() is not None:
                raise RuntimeError(f"server exited early:\n{self.proc.stderr.read()}")
            try:
                requests.get(f"{self.base_url}/healthz", timeout=0.5)
                return
            except requests.RequestException:
                time.sleep(0.05)
        raise RuntimeError("server never became healthy")

    def admin(self) -> dict:
        return {"Authorization": f"Bearer {ADMIN_TOKEN}"}

    def audit_records(self, **params) -> list[dict]:
        response = requests.get(f"{self.base_url}/v1/audit", params={"limit": 1000, **params},
                                headers=self.admin(), timeout=5)
        response.raise_for_status()
        return response.json()["records"]

    def stop(self) -> None:
        self.proc.terminate()
        try:
            self.proc.wait(timeout=10)
        except subprocess.TimeoutExpired:
            self.proc.kill()


@pytest.fixture(scope="module")
def server(tmp_path_factory):
    proc = ServerProcess(tmp_path_factory.mktemp("server"), EXFIL_POLICY)
    yield proc
    proc.stop()


@pytest.fixture
def make_client(server):
    from agentguard_client import GuardClient, GuardConfig

    created = []

    def factory(**overrides) -> GuardClient:
        kwargs = dict(
            server_url=server.base_url,
            principal={"agent_id": "sdk-test", "role": "assistant", "trust_level": 1},
            check_wait=2.0,
            poll_interval=0.2,
            decision_deadline=10.0,
        )
        kwargs.update(overrides)
        client = GuardClient(GuardConfig(**kwargs))
        created.append(client)
        return client

    yield factory
    for client in created:
        client.close()
