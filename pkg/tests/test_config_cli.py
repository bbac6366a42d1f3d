"""Config loading (file, env, overrides) and the serve subcommand's startup contract."""

from __future__ import annotations

import subprocess
import sys
import time

import pytest
import requests

from agentguard.server.config import ConfigError, ServerConfig, load_config


def test_defaults_and_generated_admin_token():
    config = ServerConfig(policy_path="p.agp", audit_path="a.ndjson")
    assert config.fail_mode == "closed"
    assert config.review_timeout == 300.0
    assert config.llm_error_decision == "review"
    assert config.generated_token and config.admin_token


def test_toml_file_and_env_override(tmp_path, monkeypatch):
    cfg = tmp_path / "agentguard.toml"
    cfg.write_text(
        'port = 9911\n'
        'policy_path = "pol.agp"\n'
        'audit_path = "audit.ndjson"\n'
        'fail_mode = "open"\n'
        'llm_backend = "mock"\n'
        'llm_mock_keywords = ["DROP TABLE", "rm -rf"]\n',
        encoding="utf-8")
    monkeypatch.setenv("AGENTGUARD_FAIL_MODE", "closed")
    monkeypatch.setenv("AGENTGUARD_WAIT_CAP", "12.5")
    config = load_config(str(cfg))
    assert config.port == 9911
    assert config.fail_mode == "closed"  # env wins over file
    assert config.wait_cap == 12.5
    assert config.llm_mock_keywords == ("DROP TABLE", "rm -rf")


def test_explicit_overrides_beat_env(tmp_path, monkeypatch):
    monkeypatch.setenv("AGENTGUARD_PORT", "1111")
    config = load_config(None, {"port": 2222, "policy_path": "p", "audit_path": "a"})
    assert config.port == 2222


def test_unknown_key_and_bad_values_rejected(tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("nonsense = 1\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(str(cfg))
    with pytest.raises(ConfigError):
        ServerConfig(policy_path="p", audit_path="a", fail_mode="sideways")
    with pytest.raises(ConfigError):
        ServerConfig(policy_path="p", audit_path="a", llm_backend="http")  # needs llm_url


def test_serve_aborts_on_bad_policy_with_diagnostics(tmp_path):
    policy = tmp_path / "broken.agp"
    policy.write_text("rule x { when: ??? }", encoding="utf-8")
    proc = subprocess.run(
        [sys.executable, "-m", "agentguard.cli", "serve",
         "--policies", str(policy), "--audit", str(tmp_path / "a.ndjson"),
         "--port", "0"],
        capture_output=True, text=True, timeout=30)
    assert proc.returncode == 2
    assert "rejected" in proc.stderr
    assert "1:" in proc.stderr  # line:col span present


def test_serve_aborts_on_missing_policy_file(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "agentguard.cli", "serve",
         "--policies", str(tmp_path / "missing.agp"),
         "--audit", str(tmp_path / "a.ndjson"), "--port", "0"],
        capture_output=True, text=True, timeout=30)
    assert proc.returncode == 2
    assert "does not exist" in proc.stderr


def test_serve_subprocess_answers_http(tmp_path):
    policy = tmp_path / "ok.agp"
    policy.write_text('rule r { when: tool.name == "x" effect: deny }\n', encoding="utf-8")
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(
        f'policy_path = "{policy}"\n'
        f'audit_path = "{tmp_path / "a.ndjson"}"\n'
        'port = 18787\n'
        'admin_token = "tok"\n',
        encoding="utf-8")
    proc = subprocess.Popen(
        [sys.executable, "-m", "agentguard.cli", "serve", "--config", str(cfg)],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    try:
        deadline = time.monotonic() + 15
        last_error = None
        while time.monotonic() < deadline:
            try:
                response = requests.get("http://127.0.0.1:18787/healthz", timeout=1)
                assert response.json() == {"status": "ok"}
                break
            except requests.RequestException as exc:
                last_error = exc
                time.sleep(0.1)
        else:
            raise AssertionError(f"server never came up: {last_error}")
        policies = requests.get("http://127.0.0.1:18787/v1/policies",
                                headers={"Authorization": "Bearer tok"}, timeout=5)
        assert policies.status_code == 200
        assert "rule r" in policies.json()["text"]
    finally:
        proc.terminate()
        proc.wait(timeout=10)
