"""Plot-ready tables built from run logs.

Every table is tidy long format with a fixed column order; the schemas are
listed in docs/ARCHITECTURE.md. Rendering is left to external tooling.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from dhwlearn.agent import RunLog
from dhwlearn.dynamics.experience import StateFeatures
from dhwlearn.dynamics.rollout import LearnedDynamics, rollout
from dhwlearn.store.base import RunStore

# Fixed setting of the learned stratification curves.
REPRESENTATION_START_C = 50.0
REPRESENTATION_DRAW_L = 100.0
REPRESENTATION_IDLE_H = (0, 12, 24)
REPRESENTATION_TAP_L = 5.0
REPRESENTATION_AMBIENT_C = 10.0


def _frames(logs: Sequence[RunLog]) -> list[tuple[RunLog, pd.DataFrame]]:
    return [(log, log.to_frame()) for log in logs]


def representation_table(dynamics: LearnedDynamics) -> pd.DataFrame:
    """Predicted mid-point while 100 L are drawn after a 50 °C reheat and 0/12/24 h idle."""
    per_hour = 60 // dynamics.period_min
    n_tap = math.ceil(REPRESENTATION_DRAW_L / REPRESENTATION_TAP_L)
    rows = []
    for idle_h in REPRESENTATION_IDLE_H:
        n_idle = idle_h * per_hour
        draws = np.concatenate((np.zeros(n_idle), np.full(n_tap, REPRESENTATION_TAP_L)))
        n = draws.size
        features = StateFeatures(REPRESENTATION_START_C, 0.0, 0.0, REPRESENTATION_AMBIENT_C, 0, dynamics.periods_per_day)
        traj = rollout(
            dynamics,
            features,
            (np.zeros((1, n), int), np.zeros((1, n))),
            draws,
            np.full(n, REPRESENTATION_AMBIENT_C),
        )
        std = np.sqrt(np.maximum(traj.midpoint_var[0], dynamics.noise_std**2))
        drawn = np.cumsum(draws)
        for t in range(n_idle, n):
            rows.append((idle_h, drawn[t], traj.midpoint_c[0, t], std[t]))
    return pd.DataFrame(rows, columns=["idle_h", "cumulative_draw_l", "midpoint_c", "midpoint_std_c"])


def probe_variance_table(logs: Sequence[RunLog]) -> pd.DataFrame:
    parts = [
        f.loc[f["probe_variance"].notna(), ["day", "probe_variance"]].assign(run_id=log.run_id)
        for log, f in _frames(logs)
    ]
    return _concat(parts, ["run_id", "day", "probe_variance"])


def info_gain_table(logs: Sequence[RunLog]) -> pd.DataFrame:
    parts = []
    for log, f in _frames(logs):
        if log.controller != "efficiency":
            continue
        g = f.groupby(f["day"] // 2)["e_t"].sum().reset_index()
        g.columns = ["window", "info_gain_bits"]
        parts.append(g.assign(run_id=log.run_id))
    return _concat(parts, ["run_id", "window", "info_gain_bits"])


def online_prediction_table(logs: Sequence[RunLog]) -> pd.DataFrame:
    parts = []
    for log, f in _frames(logs):
        part = pd.DataFrame(
            {
                "run_id": log.run_id,
                "timestamp": f["timestamp"],
                "sensor_c": f["sensor_c"],
                # Row t predicted the reading that row t + 1 starts from.
                "predicted_c": f["pred_midpoint_c"].shift(1),
                "predicted_std_c": f["pred_std_c"].shift(1),
                "reheat": f["reheat"],
            }
        )
        parts.append(part)
    return _concat(parts, ["run_id", "timestamp", "sensor_c", "predicted_c", "predicted_std_c", "reheat"])


def _consumption(logs: Sequence[RunLog], period: str, days_per_bin: int) -> pd.DataFrame:
    parts = []
    for log, f in _frames(logs):
        g = f.groupby(f["day"] // days_per_bin).agg(draw_l=("draw_l", "sum"), electric_wh=("electric_wh", "sum"))
        g = g.reset_index().rename(columns={"day": period})
        g["electric_kwh"] = g.pop("electric_wh") / 1000.0
        parts.append(g.assign(run_id=log.run_id, controller=log.controller, demand_class=log.demand_class))
    return _concat(parts, ["run_id", "controller", "demand_class", period, "draw_l", "electric_kwh"])


def weekly_consumption_table(logs: Sequence[RunLog]) -> pd.DataFrame:
    table = _consumption(logs, "week", 7)
    group = table.groupby("run_id", sort=False)
    table["cumulative_draw_l"] = group["draw_l"].cumsum()
    table["cumulative_kwh"] = group["electric_kwh"].cumsum()
    return table


def daily_consumption_table(logs: Sequence[RunLog]) -> pd.DataFrame:
    return _consumption(logs, "day", 1)


def episode_table(logs: Sequence[RunLog]) -> pd.DataFrame:
    """Sensor traces split into episodes that start at each reheat completion."""
    parts = []
    for log, f in _frames(logs):
        episode = f["reheat_completed"].astype(bool).cumsum()
        part = pd.DataFrame(
            {
                "run_id": log.run_id,
                "controller": log.controller,
                "episode": episode,
                "hours_since_reheat": f["hours_since_reheat"],
                "sensor_c": f["sensor_c"],
                "legionella": f["legionella_completed"].astype(bool).groupby(episode).transform("first"),
            }
        )
        # Before the first completed reheat there is no episode to belong to.
        parts.append(part[episode > 0])
    return _concat(parts, ["run_id", "controller", "episode", "hours_since_reheat", "sensor_c", "legionella"])


def outflow_table(logs: Sequence[RunLog]) -> pd.DataFrame:
    rows = []
    for log, f in _frames(logs):
        temps = f.loc[f["draw_l"] > 0, "outflow_min_c"].dropna().to_numpy()
        if temps.size == 0:
            continue
        q = np.percentile(temps, [0, 5, 25, 50, 75, 95, 100])
        rows.append((log.run_id, log.controller, log.demand_class, int(temps.size), *q))
    return pd.DataFrame(
        rows,
        columns=[
            "run_id",
            "controller",
            "demand_class",
            "n_draw_periods",
            "min_c",
            "p5_c",
            "p25_c",
            "median_c",
            "p75_c",
            "p95_c",
            "max_c",
        ],
    )


def _concat(parts: list[pd.DataFrame], columns: list[str]) -> pd.DataFrame:
    if not parts:
        return pd.DataFrame(columns=columns)
    return pd.concat(parts, ignore_index=True).loc[:, columns]


_LOG_TABLES: dict[str, Callable[[Sequence[RunLog]], pd.DataFrame]] = {
    "fig3": probe_variance_table,
    "fig4": info_gain_table,
    "fig6": online_prediction_table,
    "fig7": weekly_consumption_table,
    "fig8": daily_consumption_table,
    "fig9": episode_table,
    "fig10": outflow_table,
}
EXPORT_KEYS = ("fig2", *_LOG_TABLES)


def build_table(
    logs: Sequence[RunLog], which: str, *, dynamics: LearnedDynamics | None = None
) -> pd.DataFrame:
    if which == "fig2":
        if dynamics is None:
            raise ValueError("fig2 needs a trained model checkpoint")
        return representation_table(dynamics)
    if which not in _LOG_TABLES:
        raise ValueError(f"Unknown figure key '{which}'. Valid keys: {', '.join(EXPORT_KEYS)}")
    if not logs:
        raise ValueError(f"No run logs to export for {which}")
    return _LOG_TABLES[which](logs)


async def export_plot_data(
    logs: Sequence[RunLog],
    which: str,
    store: RunStore,
    *,
    dynamics: LearnedDynamics | None = None,
) -> str:
    """Write the ``which`` table to the store; returns its location."""
    return await store.save_table(which, build_table(logs, which, dynamics=dynamics))
