"""Flat ``key = value`` run configuration files.

Keys are dot-prefixed by section (``model.dim``, ``train.steps``,
``world.n_frames``, ``serve.port``); unprefixed keys land in section "".
Values are coerced by the target dataclass field's type, so a config can
override any field without the readers growing per-key plumbing.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

__all__ = ["parse_config_text", "load_config", "split_sections",
           "override_dataclass", "ConfigError"]

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class ConfigError(ValueError):
    pass


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def split_sections(flat: dict[str, str]) -> dict[str, dict[str, str]]:
    sections: dict[str, dict[str, str]] = {}
    for key, value in flat.items():
        section, _, field = key.rpartition(".")
        sections.setdefault(section, {})[field] = value
    return sections


def _coerce(value: str, target_type, key: str):
    try:
        if target_type is bool:
            low = value.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(value)
        if target_type is int:
            return int(value)
        if target_type is float:
            return float(value)
        if target_type is str:
            return value
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {target_type.__name__}")
    raise ConfigError(f"{key}: unsupported field type {target_type!r}")


def override_dataclass(instance, overrides: dict[str, str]):
    """New dataclass instance with string overrides coerced per field type."""
    types = {f.name: f.type for f in dataclasses.fields(instance)}
    resolved = {}
    for name in types:
        t = types[name]
        if isinstance(t, str):  # from __future__ annotations in the dataclass
            t = {"int": int, "float": float, "bool": bool, "str": str}.get(t, t)
        types[name] = t
    changes = {}
    for key, value in overrides.items():
        if key not in types:
            raise ConfigError(f"unknown field {key!r} for "
                              f"{type(instance).__name__}")
        changes[key] = _coerce(value, types[key], key)
    return dataclasses.replace(instance, **changes)
