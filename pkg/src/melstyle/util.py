"""Small shared helpers."""

from __future__ import annotations

import dataclasses

from .errors import ConfigError


def dataclass_from_dict(cls, data: dict, context: str = ""):
    """Build a dataclass from a mapping, rejecting unknown keys by name."""
    if not isinstance(data, dict):
        raise ConfigError(f"{context or cls.__name__}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{context or cls.__name__}: unknown field(s) {', '.join(unknown)}")
    converted = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if isinstance(value, list):
            value = tuple(value)
        converted[f.name] = value
    return cls(**converted)
