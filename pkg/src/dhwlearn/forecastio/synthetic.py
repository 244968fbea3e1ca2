"""Synthetic ambient weather: daily sinusoid, seasonal drift and AR(1) weather noise."""

from __future__ import annotations

import numpy as np

from dhwlearn.clock import MINUTES_PER_DAY
from dhwlearn.config import AmbientConfig
from dhwlearn.forecastio.base import TEMP_RANGE_C, AmbientSource, AmbientTrace, ar1_noise

_DAYS_PER_YEAR = 365.2425
# Day of year with the coldest seasonal mean (mid January).
_COLDEST_DAY_OF_YEAR = 15.0
# Keeps the weather stream independent of other seeded streams of the same house.
_WEATHER_STREAM = 0xA3B1


def generate_synthetic_trace(
    config: AmbientConfig,
    start_minute: int,
    n_periods: int,
    seed: int,
    period_min: int = 15,
) -> AmbientTrace:
    minutes = start_minute + period_min * np.arange(n_periods)
    hour = (minutes % MINUTES_PER_DAY) / 60.0
    day_of_year = (minutes / MINUTES_PER_DAY) % _DAYS_PER_YEAR
    daily = -config.daily_amplitude_c * np.cos(2 * np.pi * (hour - config.coldest_hour) / 24.0)
    seasonal = -config.seasonal_amplitude_c * np.cos(
        2 * np.pi * (day_of_year - _COLDEST_DAY_OF_YEAR) / _DAYS_PER_YEAR
    )
    rng = np.random.default_rng([seed, _WEATHER_STREAM])
    weather = ar1_noise(rng, n_periods, config.weather_noise_std, config.weather_noise_phi)
    temps = np.clip(config.mean_c + daily + seasonal + weather, *TEMP_RANGE_C)
    return AmbientTrace(start_minute, period_min, temps)


class SyntheticAmbientSource(AmbientSource):
    """Ambient source generating its own trace from ``AmbientConfig``."""

    def __init__(
        self,
        config: AmbientConfig,
        start_minute: int,
        n_periods: int,
        seed: int,
        period_min: int = 15,
    ) -> None:
        super().__init__(config.forecast_error_std, config.forecast_error_phi, seed)
        self._trace = generate_synthetic_trace(config, start_minute, n_periods, seed, period_min)

    @property
    def trace(self) -> AmbientTrace:
        return self._trace
