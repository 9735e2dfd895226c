"""Hour-index clock and traffic-hour windows.

Timestamps are integer hours since 1970-01-01 00:00 in local civil time.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np

from ..errors import FormatError

EPOCH = datetime(1970, 1, 1)


def hour_index(dt: datetime) -> int:
    delta = dt - EPOCH
    if delta.seconds % 3600 or delta.microseconds:
        raise FormatError(f"timestamp {dt.isoformat()} is not on the hourly lattice")
    return delta.days * 24 + delta.seconds // 3600


def to_datetime(h) -> datetime:
    return EPOCH + timedelta(hours=int(h))


def format_hour(h) -> str:
    return to_datetime(h).strftime("%Y-%m-%dT%H:%M")


def parse_timestamp(text: str) -> int:
    text = text.strip()
    try:
        dt = datetime.fromisoformat(text.replace(" ", "T"))
    except ValueError:
        raise FormatError(f"unparseable timestamp {text!r}") from None
    if dt.tzinfo is not None:
        raise FormatError(f"timestamp {text!r} carries a zone; expected local civil time")
    return hour_index(dt)


def weekday_and_hour(hours):
    """Weekday (Mon=0) and hour-of-day arrays for hour indices."""
    hours = np.asarray(hours, dtype=np.int64)
    days = np.floor_divide(hours, 24)
    # 1970-01-01 was a Thursday (weekday 3)
    return (days + 3) % 7, hours - days * 24


@dataclass(frozen=True)
class TrafficWindow:
    weekdays: tuple = (0, 1, 2, 3, 4)
    windows: tuple = ((6, 10), (16, 20))

    @classmethod
    def from_dict(cls, d):
        if not d:
            return cls()
        return cls(tuple(d.get("weekdays", cls.weekdays)),
                   tuple(tuple(w) for w in d.get("windows", cls.windows)))

    def to_dict(self):
        return {"weekdays": list(self.weekdays), "windows": [list(w) for w in self.windows]}


def traffic_hours_filter(hours, window: TrafficWindow | None = None):
    """True for hours inside the configured weekday/hour windows (half-open)."""
    window = window or TrafficWindow()
    wd, hod = weekday_and_hour(hours)
    in_day = np.isin(wd, window.weekdays)
    in_hour = np.zeros(wd.shape, dtype=bool)
    for start, end in window.windows:
        in_hour |= (hod >= start) & (hod < end)
    return in_day & in_hour
