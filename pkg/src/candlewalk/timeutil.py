"""UTC timestamp helpers: hourly bars, ISO parsing, calendar-month arithmetic."""

from __future__ import annotations

import calendar
from datetime import datetime, timezone

HOUR = 3600

_MONDAY_EPOCH = 4 * 86400  # 1970-01-01 was a Thursday; first Monday is Jan 5.


def to_datetime(ts: int) -> datetime:
    return datetime.fromtimestamp(ts, tz=timezone.utc)


def to_timestamp(dt: datetime) -> int:
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def parse_timestamp(text: str) -> int:
    """Parse an integer Unix-seconds or ISO-8601 UTC timestamp to epoch seconds."""
    text = text.strip()
    if _looks_like_unix(text):
        return int(text)
    iso = text.replace(" ", "T", 1)
    if iso.endswith("Z"):
        iso = iso[:-1] + "+00:00"
    dt = datetime.fromisoformat(iso)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    elif dt.utcoffset().total_seconds() != 0:
        raise ValueError(f"timestamp must be UTC, got offset in {text!r}")
    return int(dt.timestamp())


def _looks_like_unix(text: str) -> bool:
    body = text[1:] if text[:1] == "-" else text
    return body.isdigit() and body != ""


def format_iso(ts: int) -> str:
    return to_datetime(ts).strftime("%Y-%m-%dT%H:%M:%SZ")


def shift_months(ts: int, months: int) -> int:
    """Shift by calendar months, clamping the day to the target month's length."""
    dt = to_datetime(ts)
    total = dt.year * 12 + (dt.month - 1) + months
    year, month = divmod(total, 12)
    month += 1
    day = min(dt.day, calendar.monthrange(year, month)[1])
    return to_timestamp(dt.replace(year=year, month=month, day=day))


def next_anchor(ts: int, anchor_day: int) -> int:
    """Smallest instant >= ts that falls on anchor_day at 00:00 UTC."""
    if not 1 <= anchor_day <= 28:
        raise ValueError(f"anchor_day must be in 1..28, got {anchor_day}")
    dt = to_datetime(ts)
    candidate = to_timestamp(dt.replace(day=anchor_day, hour=0, minute=0, second=0, microsecond=0))
    if candidate < ts:
        candidate = shift_months(candidate, 1)
    return candidate


def period_boundaries(start: int, end: int, period: str, anchor_day: int = 5) -> list[int]:
    """Boundary instants partitioning [start, end] into calendar periods.

    Months break on anchor_day 00:00 UTC; weeks break on Monday 00:00 UTC.
    The run's own start/end always bound the first and last period, so
    leading and trailing partial periods are kept.
    """
    if end <= start:
        raise ValueError("period span is empty")
    bounds = [start]
    if period == "month":
        cut = next_anchor(start + 1, anchor_day)
        while cut < end:
            bounds.append(cut)
            cut = shift_months(cut, 1)
    elif period == "week":
        cut = start - ((start - _MONDAY_EPOCH) % (7 * 86400)) + 7 * 86400
        while cut < end:
            bounds.append(cut)
            cut += 7 * 86400
    else:
        raise ValueError(f"unknown period {period!r}")
    bounds.append(end)
    return bounds
