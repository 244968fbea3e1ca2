"""Experience tuples and the feature encoding shared by training and rollout."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

# Columns of the discharge model input matrix.
INPUT_NAMES = (
    "midpoint_c",
    "hours_since_reheat",
    "draw_since_reheat_l",
    "ambient_c",
    "draw_l",
    "tod_sin",
    "tod_cos",
)
# Columns of the discharge model output matrix.
OUTPUT_NAMES = ("midpoint_delta_c", "electric_wh")


@dataclass(frozen=True)
class StateFeatures:
    """Learned proxy for the vessel's hidden energy content."""

    midpoint_c: float
    minutes_since_reheat: float
    draw_since_reheat_l: float
    ambient_c: float
    period_of_day: int
    periods_per_day: int = 96

    def __post_init__(self) -> None:
        values = (self.midpoint_c, self.minutes_since_reheat, self.draw_since_reheat_l, self.ambient_c)
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"StateFeatures must be finite, got {values}")
        if not (0 <= self.period_of_day < self.periods_per_day):
            raise ValueError("period_of_day must lie in [0, periods_per_day)")


@dataclass(frozen=True)
class Action:
    reheat: int
    target_c: float

    def __post_init__(self) -> None:
        if self.reheat not in (0, 1):
            raise ValueError(f"reheat must be 0 or 1, got {self.reheat}")


@dataclass(frozen=True)
class Experience:
    features: StateFeatures
    action: Action
    next_midpoint_c: float
    electric_wh: float
    timestamp: int
    draw_l: float = 0.0
    duration_periods: int = 1

    def __post_init__(self) -> None:
        if not (math.isfinite(self.next_midpoint_c) and math.isfinite(self.electric_wh)):
            raise ValueError("Experience outcomes must be finite")
        if self.draw_l < 0 or self.duration_periods < 1:
            raise ValueError("Experience draw_l must be >= 0 and duration_periods >= 1")

    @property
    def is_discharge(self) -> bool:
        return self.action.reheat == 0 and self.duration_periods == 1


def encode_inputs(
    midpoint_c,
    minutes_since_reheat,
    draw_since_reheat_l,
    ambient_c,
    draw_l,
    period_of_day,
    periods_per_day: int,
) -> np.ndarray:
    """Stack raw features (scalars or equal-length arrays) into an [N x 7] input matrix."""
    phase = 2.0 * np.pi * np.asarray(period_of_day, dtype=float) / periods_per_day
    columns = np.broadcast_arrays(
        np.asarray(midpoint_c, dtype=float),
        np.asarray(minutes_since_reheat, dtype=float) / 60.0,
        np.asarray(draw_since_reheat_l, dtype=float),
        np.asarray(ambient_c, dtype=float),
        np.asarray(draw_l, dtype=float),
        np.sin(phase),
        np.cos(phase),
    )
    return np.atleast_2d(np.stack(columns, axis=-1))


def experience_arrays(experiences: Sequence[Experience]) -> tuple[np.ndarray, np.ndarray]:
    """Model inputs and targets (midpoint change, electric energy) for discharge experiences."""
    rows = [e for e in experiences if e.is_discharge]
    if not rows:
        return np.empty((0, len(INPUT_NAMES))), np.empty((0, len(OUTPUT_NAMES)))
    f = [e.features for e in rows]
    x = encode_inputs(
        [s.midpoint_c for s in f],
        [s.minutes_since_reheat for s in f],
        [s.draw_since_reheat_l for s in f],
        [s.ambient_c for s in f],
        [e.draw_l for e in rows],
        [s.period_of_day for s in f],
        f[0].periods_per_day,
    )
    y = np.column_stack(
        (
            [e.next_midpoint_c - e.features.midpoint_c for e in rows],
            [e.electric_wh for e in rows],
        )
    )
    return x, y


# ── CSV buffers ──

_CSV_COLUMNS = (
    "timestamp",
    "midpoint_c",
    "minutes_since_reheat",
    "draw_since_reheat_l",
    "ambient_c",
    "period_of_day",
    "periods_per_day",
    "reheat",
    "target_c",
    "next_midpoint_c",
    "electric_wh",
    "draw_l",
    "duration_periods",
)


def experiences_to_frame(experiences: Sequence[Experience]) -> pd.DataFrame:
    records = [
        {
            "timestamp": e.timestamp,
            "midpoint_c": e.features.midpoint_c,
            "minutes_since_reheat": e.features.minutes_since_reheat,
            "draw_since_reheat_l": e.features.draw_since_reheat_l,
            "ambient_c": e.features.ambient_c,
            "period_of_day": e.features.period_of_day,
            "periods_per_day": e.features.periods_per_day,
            "reheat": e.action.reheat,
            "target_c": e.action.target_c,
            "next_midpoint_c": e.next_midpoint_c,
            "electric_wh": e.electric_wh,
            "draw_l": e.draw_l,
            "duration_periods": e.duration_periods,
        }
        for e in experiences
    ]
    return pd.DataFrame.from_records(records, columns=list(_CSV_COLUMNS))


def experiences_from_frame(frame: pd.DataFrame) -> list[Experience]:
    missing = set(_CSV_COLUMNS) - set(frame.columns)
    if missing:
        raise ValueError(f"Experience table missing column(s): {', '.join(sorted(missing))}")
    return [
        Experience(
            features=StateFeatures(
                midpoint_c=float(r.midpoint_c),
                minutes_since_reheat=float(r.minutes_since_reheat),
                draw_since_reheat_l=float(r.draw_since_reheat_l),
                ambient_c=float(r.ambient_c),
                period_of_day=int(r.period_of_day),
                periods_per_day=int(r.periods_per_day),
            ),
            action=Action(int(r.reheat), float(r.target_c)),
            next_midpoint_c=float(r.next_midpoint_c),
            electric_wh=float(r.electric_wh),
            timestamp=int(r.timestamp),
            draw_l=float(r.draw_l),
            duration_periods=int(r.duration_periods),
        )
        for r in frame.itertuples(index=False)
    ]


def write_experiences(path: str | Path, experiences: Sequence[Experience]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    experiences_to_frame(experiences).to_csv(path, index=False)


def read_experiences(path: str | Path) -> list[Experience]:
    return experiences_from_frame(pd.read_csv(path))
