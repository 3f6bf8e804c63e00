"""Layered key=value configuration: flag > config file > built-in default."""

from __future__ import annotations

import logging
from pathlib import Path

from .errors import ConfigError

log = logging.getLogger(__name__)

DEFAULTS: dict[str, object] = {
    "tier": "small",
    "budget_b": None,
    "budget_k": None,
    "max_subgoals": 4,
    "temperature": 0.7,
    "top_p": 0.95,
    "max_output_tokens": 512,
    "seed": 42,
    "input_cap": 4096,
    "wall_seconds": 10.0,
    "memory_bytes": 4 * 1024**3,
    "model": "scripted",
    "script": "",
    "endpoint": "",
    "embedder": "hash384",
    "embed_endpoint": "",
    "snapshot": "",
    "denylist": "",
    "delta": 0.85,
    "plan_gate_tokens": 120,
    "max_stack_lines": 10,
}

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _coerce(key: str, raw: str):
    default = DEFAULTS[key]
    if key in ("budget_b", "budget_k"):
        return int(raw)
    if isinstance(default, bool):
        lowered = raw.strip().lower()
        if lowered in _BOOL_TRUE:
            return True
        if lowered in _BOOL_FALSE:
            return False
        raise ConfigError(f"config key {key} expects a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines; # starts a comment."""
    values: dict[str, object] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"config line {number} is not key = value: {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r} on line {number}")
        try:
            values[key] = _coerce(key, raw)
        except ValueError as exc:
            raise ConfigError(f"config key {key} has a bad value {raw!r}") from exc
    return values


def load_config_file(path: str | Path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text)


def resolve_config(flag_values: dict, file_values: dict | None = None) -> dict:
    """Merge with precedence flag > file > default; unknown flags rejected."""
    resolved = dict(DEFAULTS)
    for key, value in (file_values or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        resolved[key] = value
    for key, value in flag_values.items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        if value is not None:
            resolved[key] = value
    return resolved
