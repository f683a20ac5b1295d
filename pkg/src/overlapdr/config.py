"""TOML config loading shared by the harness and the CLI."""
from __future__ import annotations

from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    """Malformed configuration; ``field`` names the offending key when known."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        super().__init__(message)
        self.field = field
        self.line = line


def read_toml(path: str | Path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"{path}: {exc}", line=line) from exc


def bundled_config(name: str) -> Path:
    """Path of a config shipped in ``overlapdr/configs``."""
    return Path(__file__).parent / "configs" / name
