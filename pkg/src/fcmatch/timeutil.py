"""Timestamp parsing shared by ingestion and analytics.

All timestamps are UTC epoch seconds. Date-only strings parse as midnight
UTC of that date; naive datetimes are taken to be UTC.
"""

from __future__ import annotations

from datetime import datetime, timezone


def parse_timestamp(value) -> int:
    """Parse an ISO-8601 string or epoch-second number into epoch seconds."""
    if isinstance(value, (int, float)):
        return int(value)
    s = str(value).strip()
    if not s:
        raise ValueError("empty timestamp")
    try:
        return int(s)
    except ValueError:
        pass
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(s)
    except ValueError as exc:
        raise ValueError(f"unparseable timestamp {value!r}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def isoformat_utc(epoch_seconds: int) -> str:
    return datetime.fromtimestamp(epoch_seconds, tz=timezone.utc).strftime(
        "%Y-%m-%dT%H:%M:%SZ"
    )
