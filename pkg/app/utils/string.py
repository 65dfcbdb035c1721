"""
String parsing for command-line spellings.
"""

from __future__ import annotations

import re

from utils.errors import ValidationError

_CELL_TOKEN_RE = re.compile(r"^(?P<key>[a-zA-Z]+)(?P<value>\d+)$")
_CELL_PAIR_RE = re.compile(r"^q(?P<q>\d+)p(?P<p>\d+)$", flags=re.IGNORECASE)


def safe_strip(val) -> str:
    """
    Safely strip a value, converting non-string types to string first.
    """
    if val is None:
        return ""
    return str(val).strip()


def split_option(text: str) -> tuple[str, str | None]:
    """
    Split `name` or `name:argument` into its lowercase name and optional argument.
    """
    cleaned = safe_strip(text)
    if not cleaned:
        raise ValidationError("empty option value")
    name, sep, arg = cleaned.partition(":")
    name = name.strip().lower()
    if sep and not arg.strip():
        raise ValidationError(f"missing argument after ':' in {text!r}")
    return name, (arg.strip() if sep else None)


def parse_float(text: str, what: str) -> float:
    try:
        return float(text)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{what}: expected a number, got {text!r}") from exc


def parse_cell(text: str) -> dict[str, int]:
    """
    Parse a benchmark cell such as `q4p4,T1000` into `{"q": 4, "p": 4, "T": 1000}`.
    """
    result: dict[str, int] = {}
    for token in safe_strip(text).split(","):
        token = token.strip()
        if not token:
            continue
        pair = _CELL_PAIR_RE.match(token)
        if pair:
            result["q"] = int(pair.group("q"))
            result["p"] = int(pair.group("p"))
            continue
        match = _CELL_TOKEN_RE.match(token)
        if not match:
            raise ValidationError(f"cannot parse cell token {token!r} in {text!r}")
        key = match.group("key")
        key = "T" if key.upper() == "T" else key.lower()
        if key not in {"p", "q", "T"}:
            raise ValidationError(f"unknown cell key {key!r} in {text!r}")
        result[key] = int(match.group("value"))
    if not result:
        raise ValidationError(f"empty benchmark cell {text!r}")
    return result


def parse_name_list(text: str | None) -> list[str]:
    """
    Parse a comma separated list such as `var1,mar1` (blank entries ignored).
    """
    if text is None:
        return []
    return [part.strip().lower() for part in str(text).split(",") if part.strip()]
