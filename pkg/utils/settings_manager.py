"""Flat key=value run configuration: parsing, overrides and persistence."""
from __future__ import annotations

from dataclasses import fields
from pathlib import Path
from typing import Any, Iterable

from models.config import RunConfig
from utils.errors import ConfigError

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _field_types() -> dict[str, str]:
    # Annotations are strings under postponed evaluation.
    return {f.name: str(f.type) for f in fields(RunConfig)}


def coerce_value(key: str, raw: str) -> Any:
    types = _field_types()
    if key not in types:
        raise ConfigError(f"Unknown config key '{key}'. Known keys: {', '.join(types)}.")
    kind = types[key]
    text = raw.strip()
    try:
        if kind == "bool":
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"Config key '{key}' expects {kind}, got '{raw}'.") from exc
    return text


def parse_lines(lines: Iterable[str], source: str = "<config>") -> dict[str, Any]:
    values = {}
    for number, line in enumerate(lines, start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{number}: expected key=value, got '{line.rstrip()}'.")
        key, raw = stripped.split("=", 1)
        values[key.strip()] = coerce_value(key.strip(), raw)
    return values


def parse_override(item: str) -> tuple[str, Any]:
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got '{item}'.")
    key, raw = item.split("=", 1)
    return key.strip(), coerce_value(key.strip(), raw)


class SettingsManager:
    def __init__(self, path: Path | None = None, overrides: Iterable[str] = ()):
        self.path = path
        self._values: dict[str, Any] = {}
        self.load()
        for item in overrides:
            self.set(*parse_override(item))

    @property
    def config(self) -> RunConfig:
        return RunConfig.from_dict(self._values)

    def set(self, key: str, value: Any) -> None:
        if key not in _field_types():
            raise ConfigError(f"Unknown config key '{key}'.")
        self._values[key] = value

    def load(self) -> RunConfig:
        if self.path is not None:
            if not self.path.exists():
                raise ConfigError(f"Config file not found: {self.path}")
            text = self.path.read_text(encoding="utf-8")
            self._values.update(parse_lines(text.splitlines(), str(self.path)))
        return self.config

    def save(self, path: Path | None = None) -> Path:
        target = path or self.path
        if target is None:
            raise ConfigError("No path to save the configuration to.")
        target.parent.mkdir(parents=True, exist_ok=True)
        lines = [f"{key} = {_format(value)}" for key, value in self.config.to_dict().items()]
        target.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return target


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)
