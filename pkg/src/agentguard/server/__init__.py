"""HTTP control server: configuration, endpoints, and assembly helpers."""

from .config import ConfigError, ServerConfig, load_config
from .http import ServerHandle, build_service, serve, start_server

__all__ = [
    "ConfigError",
    "ServerConfig",
    "ServerHandle",
    "build_service",
    "load_config",
    "serve",
    "start_server",
]
