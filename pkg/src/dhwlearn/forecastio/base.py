"""Ambient temperature traces, forecasts and the source abstraction.

A source owns one regular AmbientTrace (the weather the simulated house
experiences) and issues forecasts over it with a seeded AR(1) error.
"""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from dhwlearn.clock import minute_to_iso

logger = logging.getLogger(__name__)

TEMP_RANGE_C = (-30.0, 50.0)


class TraceError(ValueError):
    """Malformed trace file or a request the trace does not cover."""

    def __init__(self, message: str, *, line: int | None = None, missing_minute: int | None = None):
        super().__init__(message)
        self.line = line
        self.missing_minute = missing_minute


@dataclass(frozen=True)
class AmbientTrace:
    start_minute: int
    period_min: int
    temps: np.ndarray

    def __post_init__(self) -> None:
        temps = np.array(self.temps, dtype=float)
        if temps.ndim != 1:
            raise ValueError("AmbientTrace temps must be one-dimensional")
        if self.period_min < 1:
            raise ValueError("AmbientTrace period_min must be >= 1")
        lo, hi = TEMP_RANGE_C
        if temps.size and (not np.all(np.isfinite(temps)) or temps.min() < lo or temps.max() > hi):
            raise ValueError(f"AmbientTrace temperatures must lie in [{lo}, {hi}] °C")
        temps.setflags(write=False)
        object.__setattr__(self, "temps", temps)

    def __len__(self) -> int:
        return int(self.temps.size)

    @property
    def end_minute(self) -> int:
        """First minute not covered by the trace."""
        return self.start_minute + len(self) * self.period_min

    def timestamps(self) -> np.ndarray:
        return self.start_minute + self.period_min * np.arange(len(self))

    def segment(self, now: int, n_periods: int) -> np.ndarray:
        """Temperatures of the ``n_periods`` periods starting at ``now``."""
        offset = now - self.start_minute
        if offset % self.period_min:
            raise TraceError(f"{minute_to_iso(now)} is not on the trace's {self.period_min}-minute grid")
        first = offset // self.period_min
        if first < 0:
            raise TraceError(
                f"Ambient trace starts at {minute_to_iso(self.start_minute)}; "
                f"first missing timestamp is {minute_to_iso(now)}",
                missing_minute=now,
            )
        if first + n_periods > len(self):
            missing = max(now, self.end_minute)
            raise TraceError(
                f"Ambient trace ends before {minute_to_iso(now + n_periods * self.period_min)}; "
                f"first missing timestamp is {minute_to_iso(missing)}",
                missing_minute=missing,
            )
        return self.temps[first : first + n_periods]

    def at(self, minute: int) -> float:
        return float(self.segment(minute, 1)[0])


@dataclass(frozen=True)
class AmbientForecast:
    issued_at: int
    period_min: int
    temps: np.ndarray

    def __len__(self) -> int:
        return int(np.asarray(self.temps).size)


def ar1_noise(rng: np.random.Generator, n: int, std: float, phi: float) -> np.ndarray:
    """Stationary AR(1) sequence with marginal standard deviation ``std``."""
    if n == 0 or std == 0:
        return np.zeros(n)
    innovations = rng.standard_normal(n) * std * math.sqrt(1.0 - phi * phi)
    innovations[0] = rng.standard_normal() * std
    return lfilter([1.0], [1.0, -phi], innovations)


class AmbientSource(ABC):
    """Weather seen by one simulated house plus its forecast service."""

    def __init__(self, forecast_error_std: float, forecast_error_phi: float, seed: int) -> None:
        if forecast_error_std < 0:
            raise ValueError("forecast_error_std must be >= 0")
        if not (0.0 <= forecast_error_phi < 1.0):
            raise ValueError("forecast_error_phi must be in [0, 1)")
        self.forecast_error_std = forecast_error_std
        self.forecast_error_phi = forecast_error_phi
        self.seed = seed

    @property
    @abstractmethod
    def trace(self) -> AmbientTrace:
        """The true ambient temperatures."""

    def temperature_at(self, minute: int) -> float:
        return self.trace.at(minute)

    def forecast(self, now: int, n_periods: int) -> AmbientForecast:
        truth = self.trace.segment(now, n_periods)
        # Seeded by issuance time so a forecast does not depend on call order.
        rng = np.random.default_rng([self.seed, now])
        error = ar1_noise(rng, n_periods, self.forecast_error_std, self.forecast_error_phi)
        temps = np.clip(truth + error, *TEMP_RANGE_C)
        return AmbientForecast(issued_at=now, period_min=self.trace.period_min, temps=temps)


def forecast_ambient(source: AmbientSource, now: int, T: int) -> AmbientForecast:
    return source.forecast(now, T)
