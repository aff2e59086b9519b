"""Duration helpers. All times inside the engine are integer milliseconds."""

from __future__ import annotations

import re

MS = 1
SECOND = 1000 * MS
MINUTE = 60 * SECOND
HOUR = 60 * MINUTE
DAY = 24 * HOUR

_UNITS = {"ms": MS, "s": SECOND, "m": MINUTE, "h": HOUR, "d": DAY}
_DURATION_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*(ms|s|m|h|d)\s*$")


def parse_duration(value: object) -> int:
    """Parse ``"48h"``, ``"7d"``, ``"250ms"`` or a plain integer of milliseconds.

    Raises:
        ValueError: malformed or negative duration.
    """
    if isinstance(value, bool):
        raise ValueError(f"not a duration: {value!r}")
    if isinstance(value, int):
        if value < 0:
            raise ValueError(f"negative duration: {value}")
        return value
    if isinstance(value, str):
        match = _DURATION_RE.match(value)
        if match:
            amount = float(match.group(1)) * _UNITS[match.group(2)]
            if amount != int(amount):
                raise ValueError(f"duration {value!r} is not a whole number of ms")
            return int(amount)
    raise ValueError(f"not a duration: {value!r}")


def format_duration(ms: int) -> str:
    """Largest unit that divides ``ms`` exactly, e.g. ``86400000 -> "1d"``."""
    if ms == 0:
        return "0ms"
    for suffix in ("d", "h", "m", "s"):
        if ms % _UNITS[suffix] == 0:
            return f"{ms // _UNITS[suffix]}{suffix}"
    return f"{ms}ms"
