"""Flat key = value run configuration.

One assignment per line, `#` starts a comment, blank lines are skipped.
Values with spaces are lists.  Every parse error carries the file name and
line number so the CLI can exit 1 with a message pointing at the bad line.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from .errors import InvalidArgument
from .reports import config_digest

_TRUE = {"on", "true", "yes", "1"}
_FALSE = {"off", "false", "no", "0"}


class ConfigError(InvalidArgument):
    """Config syntax or value error; message already carries name:line."""


@dataclass(frozen=True)
class Entry:
    value: str
    line: int


def _strip_comment(line: str) -> str:
    # A '#' opens a comment at line start or after whitespace; this keeps
    # '#' usable inside values like fragment paths if ever needed.
    if line.lstrip().startswith("#"):
        return ""
    for i, ch in enumerate(line):
        if ch == "#" and (i == 0 or line[i - 1] in " \t"):
            return line[:i]
    return line


class RunConfig:
    """Parsed key = value map with typed, line-number-aware accessors."""

    def __init__(self, text: str, name: str = "<config>", path: str | None = None):
        self.name = name
        self.path = path
        self.text = text
        self.digest = config_digest(text)
        self.entries: dict[str, Entry] = {}
        self.used: set[str] = set()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = _strip_comment(raw).strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{name}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if not key or not key.replace("_", "").isalnum() or key[0].isdigit():
                raise ConfigError(f"{name}:{lineno}: bad key {key!r}")
            if key in self.entries:
                first = self.entries[key].line
                raise ConfigError(
                    f"{name}:{lineno}: duplicate key {key!r} (first set on line {first})"
                )
            self.entries[key] = Entry(value, lineno)

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls(text, name=os.path.basename(path), path=path)

    @classmethod
    def empty(cls) -> "RunConfig":
        return cls("", name="<defaults>")

    # -- raw access ---------------------------------------------------------

    def has(self, key: str) -> bool:
        return key in self.entries

    def _where(self, key: str) -> str:
        return f"{self.name}:{self.entries[key].line}"

    def _raw(self, key: str, default):
        self.used.add(key)
        if key not in self.entries:
            if default is _REQUIRED:
                raise ConfigError(f"{self.name}: missing required key {key!r}")
            return None, default
        return self.entries[key], default

    def unused_keys(self):
        return [
            (k, e.line) for k, e in sorted(self.entries.items(), key=lambda kv: kv[1].line)
            if k not in self.used
        ]

    def reject_unknown(self) -> None:
        extra = self.unused_keys()
        if extra:
            spots = ", ".join(f"{self.name}:{line}: {key!r}" for key, line in extra)
            raise ConfigError(f"unknown config keys: {spots}")

    # -- typed getters ------------------------------------------------------

    def get_str(self, key: str, default=None) -> str | None:
        entry, default = self._raw(key, default)
        return default if entry is None else entry.value

    def get_choice(self, key: str, choices, default=None) -> str | None:
        entry, default = self._raw(key, default)
        if entry is None:
            return default
        if entry.value not in choices:
            raise ConfigError(
                f"{self._where(key)}: {key} must be one of "
                f"{sorted(choices)}, got {entry.value!r}"
            )
        return entry.value

    def get_bool(self, key: str, default=None):
        entry, default = self._raw(key, default)
        if entry is None:
            return default
        low = entry.value.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{self._where(key)}: {key} must be on/off, got {entry.value!r}")

    def get_float(self, key: str, default=None):
        entry, default = self._raw(key, default)
        if entry is None:
            return default
        return self._parse_float(key, entry.value)

    def get_int(self, key: str, default=None):
        entry, default = self._raw(key, default)
        if entry is None:
            return default
        try:
            return int(entry.value, 0)
        except ValueError as exc:
            raise ConfigError(
                f"{self._where(key)}: {key} must be an integer, got {entry.value!r}"
            ) from exc

    def get_floats(self, key: str, default=None):
        entry, default = self._raw(key, default)
        if entry is None:
            return default
        toks = entry.value.split()
        if not toks:
            raise ConfigError(f"{self._where(key)}: {key} must list at least one number")
        return [self._parse_float(key, t) for t in toks]

    def get_ints(self, key: str, default=None):
        entry, default = self._raw(key, default)
        if entry is None:
            return default
        toks = entry.value.split()
        if not toks:
            raise ConfigError(f"{self._where(key)}: {key} must list at least one integer")
        try:
            return [int(t, 0) for t in toks]
        except ValueError as exc:
            raise ConfigError(
                f"{self._where(key)}: {key} must be integers, got {entry.value!r}"
            ) from exc

    def get_path(self, key: str, default=None):
        """Path value resolved relative to the config file location."""
        entry, default = self._raw(key, default)
        if entry is None:
            return default
        base = os.path.dirname(self.path) if self.path else "."
        return os.path.normpath(os.path.join(base, entry.value))

    def _parse_float(self, key: str, token: str) -> float:
        # Grid spacings read naturally as fractions, so "1/64" is accepted.
        try:
            if "/" in token:
                num, _, den = token.partition("/")
                return float(num) / float(den)
            return float(token)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(
                f"{self._where(key)}: {key} must be a number, got {token!r}"
            ) from exc


class _Required:
    def __repr__(self):
        return "<required>"


_REQUIRED = _Required()
REQUIRED = _REQUIRED
