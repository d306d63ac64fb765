"""Flat ``key=value`` configuration files with override precedence."""

from __future__ import annotations

import dataclasses
from pathlib import Path


class ConfigError(ValueError):
    pass


def parse_pairs(lines, source: str = "<overrides>") -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def load_pairs(path=None, overrides=()) -> dict[str, str]:
    """File values first, then command-line overrides on top."""
    pairs = {}
    if path is not None:
        pairs.update(parse_pairs(Path(path).read_text(encoding="utf-8").splitlines(), str(path)))
    pairs.update(parse_pairs(overrides))
    return pairs


def _coerce(key: str, value: str, kind):
    kind = kind if isinstance(kind, type) else {"int": int, "float": float, "bool": bool,
                                                 "str": str}.get(str(kind), str)
    try:
        if kind is bool:
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        return kind(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind.__name__}") from None


def build(cls, pairs: dict[str, str], **fixed):
    """Instantiate dataclass ``cls`` from the subset of ``pairs`` naming its fields."""
    fields = {f.name: f.type for f in dataclasses.fields(cls)}
    kwargs = {k: _coerce(k, v, fields[k]) for k, v in pairs.items() if k in fields}
    kwargs.update(fixed)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def reject_unknown(pairs: dict[str, str], *classes, extra=()) -> None:
    known = set(extra)
    for cls in classes:
        known.update(f.name for f in dataclasses.fields(cls))
    unknown = sorted(set(pairs) - known)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
