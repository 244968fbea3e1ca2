"""File-backed ambient traces.

CSV layout: header ``timestamp,temp_c`` then one row per period, ISO-8601
timestamps with offset, strictly increasing on a fixed period.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import pandas as pd

from dhwlearn.clock import minute_to_iso
from dhwlearn.forecastio.base import AmbientSource, AmbientTrace, TraceError

logger = logging.getLogger(__name__)

COLUMNS = ("timestamp", "temp_c")
_EPOCH = pd.Timestamp("1970-01-01", tz="UTC")


def _parse_float(text: str) -> float:
    # float() round-trips what write_trace emits bit for bit.
    try:
        return float(text)
    except ValueError:
        return float("nan")


def load_trace(path: str | Path, period_min: int | None = None) -> AmbientTrace:
    """Read and validate a trace; errors name the offending file line (header = line 1)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Ambient trace not found: {path}")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    if tuple(frame.columns) != COLUMNS:
        raise TraceError(f"{path}: expected header 'timestamp,temp_c', got {','.join(frame.columns)}", line=1)
    if frame.empty:
        raise TraceError(f"{path}: trace has no rows", line=2)

    stamps = pd.to_datetime(frame["timestamp"], utc=True, errors="coerce", format="ISO8601")
    temps = frame["temp_c"].map(_parse_float)
    bad = stamps.isna() | temps.isna()
    if bad.any():
        line = int(np.argmax(bad.to_numpy())) + 2
        raise TraceError(f"{path}: unparseable row at line {line}", line=line)

    minutes = ((stamps - _EPOCH) // pd.Timedelta(minutes=1)).to_numpy(dtype=np.int64)
    steps = np.diff(minutes)
    if np.any(steps <= 0):
        line = int(np.argmax(steps <= 0)) + 3
        raise TraceError(f"{path}: duplicate or non-increasing timestamp at line {line}", line=line)
    expected = period_min if period_min is not None else (int(steps[0]) if steps.size else 15)
    if np.any(steps != expected):
        line = int(np.argmax(steps != expected)) + 3
        raise TraceError(
            f"{path}: expected a {expected}-minute period, gap before line {line} "
            f"(first missing timestamp {minute_to_iso(int(minutes[line - 3]) + expected)})",
            line=line,
            missing_minute=int(minutes[line - 3]) + expected,
        )
    try:
        return AmbientTrace(int(minutes[0]), expected, temps.to_numpy(dtype=float))
    except ValueError as exc:
        raise TraceError(f"{path}: {exc}") from exc


def write_trace(path: str | Path, trace: AmbientTrace) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        {
            "timestamp": [minute_to_iso(int(m)) for m in trace.timestamps()],
            "temp_c": trace.temps,
        }
    )
    frame.to_csv(path, index=False)


class TraceAmbientSource(AmbientSource):
    """Ambient source replaying a loaded trace."""

    def __init__(
        self,
        trace: AmbientTrace,
        *,
        forecast_error_std: float = 0.5,
        forecast_error_phi: float = 0.9,
        seed: int = 0,
    ) -> None:
        super().__init__(forecast_error_std, forecast_error_phi, seed)
        self._trace = trace

    @property
    def trace(self) -> AmbientTrace:
        return self._trace

    @classmethod
    def from_file(cls, path: str | Path, period_min: int | None = None, **kwargs) -> TraceAmbientSource:
        """Load a trace; with ``period_min`` a file on any other period is rejected."""
        trace = load_trace(path, period_min)
        logger.info("Loaded ambient trace %s (%d periods)", path, len(trace))
        return cls(trace, **kwargs)
