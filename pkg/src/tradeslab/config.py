"""Canonical ``key = value`` text used for config files and checkpoint metadata."""

from __future__ import annotations

from .errors import DataError


def parse_kv(text: str) -> dict:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise DataError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if key in out:
            raise DataError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def canonical_kv(mapping: dict) -> str:
    """Sorted ``key=value`` lines; the same mapping always yields the same bytes."""
    lines = []
    for key in sorted(mapping):
        value = str(mapping[key])
        if "\n" in value or "=" in key:
            raise ValueError(f"cannot encode {key!r} canonically")
        lines.append(f"{key}={value}")
    return "".join(line + "\n" for line in lines)


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return parse_kv(fh.read())
