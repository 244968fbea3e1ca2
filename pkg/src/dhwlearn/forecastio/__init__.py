"""Ambient source factory.

Lazy-imports the concrete source so file-backed runs never build synthetic
weather and vice versa.
"""

from __future__ import annotations

from dhwlearn.config import WorkbenchConfig
from dhwlearn.forecastio.base import (
    AmbientForecast,
    AmbientSource,
    AmbientTrace,
    TraceError,
    forecast_ambient,
)

__all__ = [
    "AmbientForecast",
    "AmbientSource",
    "AmbientTrace",
    "TraceError",
    "forecast_ambient",
    "get_ambient_source",
]


def get_ambient_source(config: WorkbenchConfig, seed: int, n_periods: int) -> AmbientSource:
    """Instantiate the configured ambient source covering ``n_periods`` from the run start."""
    ambient = config.ambient
    if ambient.source == "file":
        from dhwlearn.forecastio.trace import TraceAmbientSource

        source = TraceAmbientSource.from_file(
            ambient.trace_path,
            period_min=config.period_min,
            forecast_error_std=ambient.forecast_error_std,
            forecast_error_phi=ambient.forecast_error_phi,
            seed=seed,
        )
        # Fail early rather than mid-run.
        source.trace.segment(config.start_minute, n_periods)
        return source
    else:
        from dhwlearn.forecastio.synthetic import SyntheticAmbientSource

        return SyntheticAmbientSource(
            ambient, config.start_minute, n_periods, seed, config.period_min
        )
