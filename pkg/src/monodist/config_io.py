"""Flat key=value config files shared by training and scene configs."""

from __future__ import annotations

from .errors import ConfigError, UnknownConfigKey


def parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def parse_float_tuple(raw: str) -> tuple[float, ...]:
    return tuple(float(v) for v in raw.replace(",", " ").split())


def parse_flat_config(text: str, field_types: dict) -> dict:
    """Parse ``key = value`` lines into typed values.

    Blank lines and ``#`` comments are skipped.  Unknown keys are hard
    errors so that typos cannot silently fall back to defaults.
    """
    out = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {line_no}: expected key = value, got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in field_types:
            raise UnknownConfigKey(key)
        try:
            out[key] = field_types[key](raw.strip())
        except ValueError as exc:
            raise ConfigError(f"line {line_no}: bad value for {key}: {exc}") from None
    return out
