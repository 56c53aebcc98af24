"""Flat ``key = value`` configuration files.

Lines are ``key = value``; ``#`` starts a comment; blank lines are ignored.
Values stay strings until a typed getter asks for them, so the same file can
feed the scene, channel, training and evaluation stages.
"""

from __future__ import annotations

import hashlib
import math
from pathlib import Path


class ConfigError(ValueError):
    """Malformed config file or a value of the wrong type."""


class Config:
    def __init__(self, values: dict[str, str] | None = None, source: str = "<memory>"):
        self.values: dict[str, str] = dict(values or {})
        self.source = source

    @classmethod
    def parse(cls, text: str, source: str = "<memory>") -> "Config":
        values: dict[str, str] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key:
                raise ConfigError(f"{source}:{lineno}: empty key")
            values[key] = value
        return cls(values, source)

    @classmethod
    def load(cls, path: str | Path) -> "Config":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.parse(text, str(path))

    def __contains__(self, key: str) -> bool:
        return key in self.values

    def with_overrides(self, **overrides) -> "Config":
        merged = dict(self.values)
        merged.update({k: _format(v) for k, v in overrides.items()})
        return Config(merged, self.source)

    def get_str(self, key: str, default: str | None = None) -> str:
        if key in self.values:
            return self.values[key]
        if default is None:
            raise ConfigError(f"{self.source}: missing required key {key!r}")
        return default

    def get_int(self, key: str, default: int | None = None) -> int:
        if key not in self.values:
            if default is None:
                raise ConfigError(f"{self.source}: missing required key {key!r}")
            return default
        try:
            return int(self.values[key])
        except ValueError:
            raise ConfigError(f"{self.source}: {key} must be an integer, got {self.values[key]!r}") from None

    def get_float(self, key: str, default: float | None = None) -> float:
        if key not in self.values:
            if default is None:
                raise ConfigError(f"{self.source}: missing required key {key!r}")
            return default
        try:
            return float(self.values[key])
        except ValueError:
            raise ConfigError(f"{self.source}: {key} must be a number, got {self.values[key]!r}") from None

    def get_floats(self, key: str, default: tuple[float, ...] | None = None) -> tuple[float, ...]:
        if key not in self.values:
            if default is None:
                raise ConfigError(f"{self.source}: missing required key {key!r}")
            return default
        try:
            return tuple(float(p) for p in self.values[key].replace(",", " ").split())
        except ValueError:
            raise ConfigError(f"{self.source}: {key} must be a list of numbers") from None

    def get_bool(self, key: str, default: bool) -> bool:
        if key not in self.values:
            return default
        value = self.values[key].lower()
        if value in ("1", "true", "yes", "on"):
            return True
        if value in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{self.source}: {key} must be a boolean, got {self.values[key]!r}")

    def dumps(self) -> str:
        return "".join(f"{k} = {self.values[k]}\n" for k in sorted(self.values))

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()


def _format(value) -> str:
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if isinstance(value, (tuple, list)):
        return " ".join(_format(v) for v in value)
    return str(value)
