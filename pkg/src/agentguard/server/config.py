"""Server configuration: TOML key/value file, overridable per-key via AGENTGUARD_* env vars."""

from __future__ import annotations

import os
import secrets
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - environment-dependent import
    import tomli as tomllib

ENV_PREFIX = "AGENTGUARD_"


class ConfigError(ValueError):
    pass


@dataclass
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = 8787
    policy_path: str = "policy.agp"
    audit_path: str = "audit.ndjson"
    admin_token: str = ""  # empty: generate an ephemeral token at startup and log it
    fail_mode: str = "closed"  # closed | open
    wait_cap: float = 30.0
    review_timeout: float = 300.0
    review_on_timeout: str = "deny"
    review_sweep_interval: float = 1.0
    idle_timeout: float = 24 * 3600.0
    llm_backend: str = "none"  # none | mock | http
    llm_url: str = ""
    llm_model: str = ""
    llm_timeout: float = 10.0
    llm_error_decision: str = "review"
    llm_mock_keywords: tuple[str, ...] = ()
    prompt_length_cap: int = 16000
    audit_fsync: bool = False
    audit_size_warn_mb: int = 512
    console_dir: str = ""
    sse_heartbeat: float = 15.0

    def __post_init__(self) -> None:
        if self.fail_mode not in ("closed", "open"):
            raise ConfigError("fail_mode must be 'closed' or 'open'")
        if self.review_on_timeout not in ("allow", "deny"):
            raise ConfigError("review_on_timeout must be 'allow' or 'deny'")
        if self.llm_backend not in ("none", "mock", "http"):
            raise ConfigError("llm_backend must be 'none', 'mock' or 'http'")
        if self.llm_error_decision not in ("review", "deny"):
            raise ConfigError("llm_error_decision must be 'review' or 'deny'")
        if self.llm_backend == "http" and not self.llm_url:
            raise ConfigError("llm_backend=http requires llm_url")
        if not self.admin_token:
            self.admin_token = secrets.token_urlsafe(24)
            self.generated_token = True
        else:
            self.generated_token = False


def _coerce(name: str, raw: Any, target_type: Any) -> Any:
    if target_type is bool:
        if isinstance(raw, bool):
            return raw
        if isinstance(raw, str):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        raise ConfigError(f"{name} must be a boolean")
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    if target_type is str:
        if not isinstance(raw, str):
            raise ConfigError(f"{name} must be a string")
        return raw
    if target_type == tuple[str, ...]:
        if isinstance(raw, str):
            return tuple(part.strip() for part in raw.split(",") if part.strip())
        if isinstance(raw, (list, tuple)):
            return tuple(str(item) for item in raw)
        raise ConfigError(f"{name} must be a list of strings")
    return raw  # pragma: no cover


def load_config(path: Optional[str] = None, overrides: Optional[dict[str, Any]] = None) -> ServerConfig:
    """Layered config: file < AGENTGUARD_* environment < explicit overrides."""
    values: dict[str, Any] = {}
    known = {f.name for f in fields(ServerConfig)}

    if path:
        file_path = Path(path)
        if not file_path.exists():
            raise ConfigError(f"config file {path} does not exist")
        with open(file_path, "rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"config file {path}: {exc}") from exc
        for key, raw in data.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = raw

    for key in known:
        env_name = ENV_PREFIX + key.upper()
        if env_name in os.environ:
            values[key] = os.environ[env_name]

    for key, raw in (overrides or {}).items():
        if raw is not None:
            values[key] = raw

    resolved_types = {
        "host": str, "port": int, "policy_path": str, "audit_path": str,
        "admin_token": str, "fail_mode": str, "wait_cap": float,
        "review_timeout": float, "review_on_timeout": str,
        "review_sweep_interval": float, "idle_timeout": float,
        "llm_backend": str, "llm_url": str, "llm_model": str,
        "llm_timeout": float, "llm_error_decision": str,
        "llm_mock_keywords": tuple[str, ...], "prompt_length_cap": int,
        "audit_fsync": bool, "audit_size_warn_mb": int, "console_dir": str,
        "sse_heartbeat": float,
    }
    coerced = {}
    for key, raw in values.items():
        try:
            coerced[key] = _coerce(key, raw, resolved_types[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from exc
    return ServerConfig(**coerced)
