"""Occupant hot-water demand: a seeded draw generator and a per-bin forecaster.

Draws are sampled as a mixture of morning and evening peaks; weekends are
shifted later. The forecaster bins past per-period draws by time of day and
weekday/weekend and reports the empirical mean and spread of each bin.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from dhwlearn.clock import MINUTES_PER_DAY, is_weekend, iso_to_minute, minute_to_iso, period_of_day
from dhwlearn.config import DEMAND_CLASSES, OccupantConfig

logger = logging.getLogger(__name__)

# Dirichlet concentration of the per-event share of a day's volume.
_EVENT_SHARE_ALPHA = 2.0


@dataclass(frozen=True)
class DrawEvent:
    timestamp: int
    volume_l: float
    duration: float

    def __post_init__(self) -> None:
        if not self.volume_l > 0:
            raise ValueError(f"DrawEvent.volume_l must be > 0, got {self.volume_l}")
        if not self.duration > 0:
            raise ValueError(f"DrawEvent.duration must be > 0, got {self.duration}")


@dataclass(frozen=True)
class DrawForecast:
    expected: np.ndarray
    std: np.ndarray
    fallback: bool = False

    def __post_init__(self) -> None:
        expected = np.asarray(self.expected, dtype=float)
        std = np.asarray(self.std, dtype=float)
        if expected.shape != std.shape:
            raise ValueError("DrawForecast expected and std must have the same shape")
        if np.any(expected < 0) or np.any(std < 0):
            raise ValueError("DrawForecast values must be >= 0")
        object.__setattr__(self, "expected", expected)
        object.__setattr__(self, "std", std)

    @property
    def horizon(self) -> int:
        return int(self.expected.size)

    @classmethod
    def exact(cls, draws: Sequence[float]) -> DrawForecast:
        """A certain forecast (std 0), e.g. for scripted scenarios."""
        expected = np.asarray(draws, dtype=float)
        return cls(expected, np.zeros_like(expected))

    def risk_adjusted(self, k: float) -> np.ndarray:
        return np.maximum(self.expected + k * self.std, 0.0)


# ── Generator ──


def sample_day(
    profile: OccupantConfig, day_index: int, seed: int, start_minute: int = 0
) -> list[DrawEvent]:
    """Draw events of one day, deterministic in (seed, day_index)."""
    mean = profile.daily_mean_l
    if mean <= 0:
        return []
    rng = np.random.default_rng([seed, day_index])
    day_start = start_minute + day_index * MINUTES_PER_DAY
    total = float(
        np.clip(
            rng.normal(mean, profile.daily_jitter * mean),
            profile.min_factor * mean,
            profile.max_factor * mean,
        )
    )
    n_events = max(1, int(rng.poisson(profile.events_per_day)))
    volumes = total * rng.dirichlet(np.full(n_events, _EVENT_SHARE_ALPHA))
    shift = profile.weekend_shift_h if bool(is_weekend(day_start)) else 0.0
    morning = rng.random(n_events) < profile.morning_share
    hours = np.where(
        morning,
        rng.normal(profile.morning_peak_h + shift, profile.morning_std_h, n_events),
        rng.normal(profile.evening_peak_h + shift, profile.evening_std_h, n_events),
    )

    events = []
    for volume, hour in zip(volumes, hours):
        if volume <= 0:
            continue
        duration = float(volume) / profile.flow_l_per_min
        offset = min(max(hour * 60.0, 0.0), MINUTES_PER_DAY - duration)
        events.append(DrawEvent(day_start + int(offset), float(volume), duration))
    events.sort(key=lambda e: e.timestamp)
    return events


def sample_days(
    profile: OccupantConfig, n_days: int, seed: int, start_minute: int = 0
) -> list[DrawEvent]:
    events: list[DrawEvent] = []
    for day in range(n_days):
        events.extend(sample_day(profile, day, seed, start_minute))
    return events


def draws_per_period(
    events: Sequence[DrawEvent], start_minute: int, n_periods: int, period_min: int
) -> np.ndarray:
    """Liters drawn in each period, each event spread evenly over its duration."""
    draws = np.zeros(n_periods)
    end_minute = start_minute + n_periods * period_min
    for event in events:
        t0 = event.timestamp
        t1 = t0 + event.duration
        if t1 <= start_minute or t0 >= end_minute:
            continue
        rate = event.volume_l / event.duration
        first = max(0, int((t0 - start_minute) // period_min))
        last = min(n_periods - 1, int((t1 - start_minute) // period_min))
        for p in range(first, last + 1):
            lo = start_minute + p * period_min
            overlap = min(t1, lo + period_min) - max(t0, lo)
            if overlap > 0:
                draws[p] += rate * overlap
    return draws


# ── Forecaster ──


def predict_draws(
    history: Sequence[float],
    horizon: int,
    *,
    history_start: int = 0,
    period_min: int = 15,
    fallback_daily_l: float = DEMAND_CLASSES["medium"],
) -> DrawForecast:
    """Per-period draw forecast for the ``horizon`` periods following ``history``.

    Each forecast period uses the draws of the same time of day in the history,
    restricted to days of the same kind (weekday or weekend) when any exist.
    """
    if horizon < 0:
        raise ValueError(f"horizon must be >= 0, got {horizon}")
    periods_per_day = MINUTES_PER_DAY // period_min
    h = np.asarray(history, dtype=float)
    if h.size < periods_per_day:
        logger.warning(
            "Draw history covers %d of %d periods; using uniform %.0f L/day prior",
            h.size,
            periods_per_day,
            fallback_daily_l,
        )
        per_period = np.full(horizon, fallback_daily_l / periods_per_day)
        return DrawForecast(per_period, per_period.copy(), fallback=True)

    hist_minutes = history_start + period_min * np.arange(h.size)
    hist_bin = period_of_day(hist_minutes, period_min)
    hist_key = hist_bin * 2 + is_weekend(hist_minutes).astype(int)

    n_keys = 2 * periods_per_day
    key_count = np.bincount(hist_key, minlength=n_keys)
    key_mean = np.bincount(hist_key, weights=h, minlength=n_keys) / np.maximum(key_count, 1)
    key_var = np.bincount(
        hist_key, weights=(h - key_mean[hist_key]) ** 2, minlength=n_keys
    ) / np.maximum(key_count, 1)

    bin_count = np.bincount(hist_bin, minlength=periods_per_day)
    bin_mean = np.bincount(hist_bin, weights=h, minlength=periods_per_day) / np.maximum(bin_count, 1)
    bin_var = np.bincount(
        hist_bin, weights=(h - bin_mean[hist_bin]) ** 2, minlength=periods_per_day
    ) / np.maximum(bin_count, 1)

    fc_minutes = history_start + period_min * (h.size + np.arange(horizon))
    fc_bin = period_of_day(fc_minutes, period_min)
    fc_key = fc_bin * 2 + is_weekend(fc_minutes).astype(int)
    has_key = key_count[fc_key] > 0
    expected = np.where(has_key, key_mean[fc_key], bin_mean[fc_bin])
    var = np.where(has_key, key_var[fc_key], bin_var[fc_bin])
    return DrawForecast(np.maximum(expected, 0.0), np.sqrt(np.maximum(var, 0.0)))


# ── CSV ──


def write_draw_history(path: str | Path, timestamps: Sequence[int], liters: Sequence[float]) -> None:
    if len(timestamps) != len(liters):
        raise ValueError("timestamps and liters must have the same length")
    frame = pd.DataFrame(
        {"timestamp": [minute_to_iso(t) for t in timestamps], "liters": np.asarray(liters, float)}
    )
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)


def read_draw_history(path: str | Path) -> tuple[list[int], np.ndarray]:
    frame = pd.read_csv(path, dtype={"timestamp": str})
    missing = {"timestamp", "liters"} - set(frame.columns)
    if missing:
        raise ValueError(f"Draw history {path} is missing column(s): {', '.join(sorted(missing))}")
    liters = pd.to_numeric(frame["liters"], errors="coerce")
    bad = liters.isna() | (liters < 0)
    if bad.any():
        # Header is line 1.
        raise ValueError(f"Draw history {path}: invalid liters at line {int(bad.idxmax()) + 2}")
    return [iso_to_minute(t) for t in frame["timestamp"]], liters.to_numpy(dtype=float)


def draws_from_history(
    timestamps: Sequence[int], liters: Sequence[float], start_minute: int, n_periods: int, period_min: int
) -> np.ndarray:
    """The first ``n_periods`` liters of a recorded history, checked to sit on the run's periods."""
    if n_periods < 1:
        raise ValueError(f"n_periods must be >= 1, got {n_periods}")
    if len(timestamps) < n_periods:
        raise ValueError(f"Draw history covers {len(timestamps)} periods, run needs {n_periods}")
    ts = np.asarray(timestamps[:n_periods], dtype=np.int64)
    if ts[0] != start_minute:
        raise ValueError(
            f"Draw history starts at {minute_to_iso(int(ts[0]))}, run starts at {minute_to_iso(start_minute)}"
        )
    gaps = np.flatnonzero(np.diff(ts) != period_min)
    if gaps.size:
        i = int(gaps[0]) + 1
        raise ValueError(
            f"Draw history is not on the {period_min}-minute period at {minute_to_iso(int(ts[i]))}"
        )
    return np.asarray(liters[:n_periods], dtype=float)
