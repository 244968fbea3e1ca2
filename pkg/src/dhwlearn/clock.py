"""Minute-resolution timestamps shared by traces, draw histories and run logs.

Timestamps are whole minutes since the Unix epoch (UTC); files carry ISO-8601.
"""

from __future__ import annotations

from datetime import datetime, timezone

import numpy as np

MINUTES_PER_DAY = 1440
# 1970-01-01 was a Thursday (Monday = 0).
_EPOCH_WEEKDAY = 3


def minute_to_iso(minute: int) -> str:
    return datetime.fromtimestamp(int(minute) * 60, tz=timezone.utc).isoformat()


def iso_to_minute(text: str) -> int:
    dt = datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp() // 60)


def period_of_day(minute, period_min: int):
    """Index of the control period within its day (scalar or array)."""
    return (np.asarray(minute) % MINUTES_PER_DAY) // period_min


def is_weekend(minute):
    weekday = (np.asarray(minute) // MINUTES_PER_DAY + _EPOCH_WEEKDAY) % 7
    return weekday >= 5
