"""Runtime configuration for the serve command and the control surface."""

from __future__ import annotations

import dataclasses
import json
import secrets
from dataclasses import dataclass
from pathlib import Path

DEFAULT_LISTEN = "127.0.0.1:8888"
DEFAULT_CONTROL_LISTEN = "127.0.0.1:8900"
DEFAULT_UPSTREAM_TIMEOUT = 30.0


class ConfigError(ValueError):
    """The configuration file is unreadable or malformed."""


@dataclass(frozen=True)
class Config:
    listen: str = DEFAULT_LISTEN
    control_listen: str = DEFAULT_CONTROL_LISTEN
    control_token: str = ""
    session_path: str | None = None
    upstream_timeout_seconds: float = DEFAULT_UPSTREAM_TIMEOUT

    def with_overrides(self, **overrides) -> "Config":
        """A copy with every non-None override applied."""
        changes = {k: v for k, v in overrides.items() if v is not None}
        return dataclasses.replace(self, **changes)


def parse_address(value: str) -> tuple[str, int]:
    host, sep, port = value.rpartition(":")
    if not sep or not host:
        raise ConfigError(f"address must be host:port, got {value!r}")
    try:
        number = int(port)
    except ValueError:
        raise ConfigError(f"bad port in {value!r}") from None
    if not 0 <= number <= 65535:
        raise ConfigError(f"port out of range in {value!r}")
    return host, number


def generate_token() -> str:
    return secrets.token_hex(16)


_KEYS = {
    "listen",
    "control_listen",
    "control_token",
    "session_path",
    "upstream_timeout_seconds",
}


def load_config(path: str | Path) -> Config:
    """Read a JSON config file; unknown keys and wrong types are errors."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - _KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    config = Config()
    for key in ("listen", "control_listen", "control_token"):
        if key in raw:
            if not isinstance(raw[key], str):
                raise ConfigError(f"{key} must be a string")
            config = dataclasses.replace(config, **{key: raw[key]})
    if "session_path" in raw:
        value = raw["session_path"]
        if value is not None and not isinstance(value, str):
            raise ConfigError("session_path must be a string or null")
        config = dataclasses.replace(config, session_path=value)
    if "upstream_timeout_seconds" in raw:
        value = raw["upstream_timeout_seconds"]
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value <= 0:
            raise ConfigError("upstream_timeout_seconds must be a positive number")
        config = dataclasses.replace(config, upstream_timeout_seconds=float(value))

    parse_address(config.listen)
    parse_address(config.control_listen)
    return config
