"""Flat dotted-key configuration files.

Format: one ``key = value`` pair per line, ``#`` starts a comment line,
blank lines are ignored. Keys are dotted paths like ``train.epochs``.
Values stay strings until a consumer casts them. CLI flags override
config keys, which override built-in defaults.
"""

from __future__ import annotations

from typing import Callable, Mapping, Optional

from .errors import MissingInputError, ParseError, ValidationError


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as handle:
            lines = handle.read().splitlines()
    except FileNotFoundError:
        raise MissingInputError(f"config file not found: {path}") from None
    entries: dict = {}
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"{path} line {line_no}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ParseError(f"{path} line {line_no}: empty key")
        if key in entries:
            raise ValidationError(f"{path} line {line_no}: duplicate key {key!r}")
        entries[key] = value
    return entries


def parse_bool(value: str) -> bool:
    low = value.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"cannot interpret {value!r} as a boolean")


def parse_float_list(value: str) -> list:
    try:
        return [float(tok) for tok in value.split(",") if tok.strip() != ""]
    except ValueError:
        raise ValidationError(f"cannot interpret {value!r} as a float list") from None


class Settings:
    """Merged view over config entries with flag-level overrides."""

    def __init__(self, entries: Optional[Mapping] = None):
        self.entries = dict(entries or {})

    def apply_overrides(self, pairs) -> None:
        for pair in pairs or []:
            if "=" not in pair:
                raise ValidationError(f"--set expects key=value, got {pair!r}")
            key, _, value = pair.partition("=")
            self.entries[key.strip()] = value.strip()

    def get(self, key: str, cast: Callable = str, default=None, override=None):
        """Flag override -> config entry -> default, cast on the way out."""
        if override is not None:
            return override
        if key in self.entries:
            raw = self.entries[key]
            try:
                return cast(raw)
            except ValidationError:
                raise
            except (TypeError, ValueError):
                raise ValidationError(
                    f"config key {key!r}: cannot interpret {raw!r}"
                ) from None
        return default
