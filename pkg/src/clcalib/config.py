"""Flat ``section.key = value`` run configuration files.

Lines starting with ``#`` and blank lines are ignored. Values are strings;
typed accessors raise :class:`InputError` with the offending key.
"""

from __future__ import annotations

from pathlib import Path

from .errors import InputError


def parse_config(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InputError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if "." not in key:
            raise InputError(f"config line {lineno}: key {key!r} needs a section prefix")
        out[key] = value
    return out


def read_config(path: str | Path) -> dict[str, str]:
    return parse_config(Path(path).read_text())


def format_config(values: dict[str, str]) -> str:
    lines = []
    section = None
    for key in sorted(values):
        sec = key.split(".", 1)[0]
        if section is not None and sec != section:
            lines.append("")
        section = sec
        lines.append(f"{key} = {values[key]}")
    return "\n".join(lines) + "\n"


class Config:
    """Typed view over a flat config mapping with defaults."""

    def __init__(self, values: dict[str, str], defaults: dict[str, str]):
        unknown = set(values) - set(defaults)
        if unknown:
            raise InputError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        self.values = {**defaults, **values}

    def str(self, key: str) -> str:
        return self.values[key]

    def int(self, key: str) -> int:
        try:
            return int(self.values[key])
        except ValueError:
            raise InputError(f"{key}: expected an integer, got {self.values[key]!r}") from None

    def float(self, key: str) -> float:
        try:
            return float(self.values[key])
        except ValueError:
            raise InputError(f"{key}: expected a number, got {self.values[key]!r}") from None

    def bool(self, key: str) -> bool:
        v = self.values[key].lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise InputError(f"{key}: expected a boolean, got {self.values[key]!r}")

    def list(self, key: str) -> list[str]:
        return [s.strip() for s in self.values[key].split(",") if s.strip()]

    def floats(self, key: str) -> list[float]:
        try:
            return [float(s) for s in self.list(key)]
        except ValueError:
            raise InputError(f"{key}: expected comma-separated numbers") from None

    def ints(self, key: str) -> list[int]:
        try:
            return [int(s) for s in self.list(key)]
        except ValueError:
            raise InputError(f"{key}: expected comma-separated integers") from None
