"""Model validation against the simulator.

Offline validation replays scripted draw profiles on a freshly reheated
vessel and compares the learned model's open-loop mid-point curve with the
simulated one, reporting the volumetric error at the stratification knee.
Online validation runs one learning house and scores its one-step
predictions as they happened.
"""

from __future__ import annotations

import asyncio
import logging
import math
from dataclasses import dataclass
from typing import Any

import numpy as np
import pandas as pd

from dhwlearn.agent import EfficiencyAgent, EpisodeRunner, RunLog
from dhwlearn.clock import period_of_day
from dhwlearn.config import WorkbenchConfig
from dhwlearn.dynamics.ensemble import train_ensemble
from dhwlearn.dynamics.experience import StateFeatures
from dhwlearn.dynamics.heatpump_fit import ReheatModel, fit_heat_pump
from dhwlearn.dynamics.rollout import LearnedDynamics, rollout
from dhwlearn.forecastio import get_ambient_source
from dhwlearn.harness.benchmark import build_manifest
from dhwlearn.simcore import HouseSimulator, observe
from dhwlearn.store.base import RunStore

logger = logging.getLogger(__name__)

SCENARIOS = ("tap_after_reheat", "intermittent_then_tap")
# Predictive std this wide means the model is unsure of itself.
WIDE_BAND_STD_C = 1.0
_OFFLINE_STREAM = 0x0FF1


class ReplayModel:
    """Transition model that replays known mid-point changes, one per call."""

    def __init__(self, deltas_c, variance: float = 0.0) -> None:
        self.deltas = np.asarray(deltas_c, dtype=float)
        self.variance = variance
        self.calls = 0

    def predict_batch(self, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = len(inputs)
        delta = self.deltas[min(self.calls, len(self.deltas) - 1)]
        self.calls += 1
        mean = np.column_stack((np.full(n, delta), np.zeros(n)))
        return mean, np.full((n, 2), self.variance)


@dataclass(frozen=True)
class ScenarioRun:
    draws_l: np.ndarray
    ambient_c: np.ndarray
    start_minute: int
    initial_midpoint_c: float
    true_midpoint_c: np.ndarray
    sensor_c: np.ndarray


def scenario_draws(scenario: str, config: WorkbenchConfig) -> np.ndarray:
    """Per-period liters of a scripted profile; every profile ends by emptying the tank."""
    h = config.harness
    volume = config.vessel.volume_l
    n_tap = math.ceil(volume / h.tap_l_per_period)
    tap = np.full(n_tap, h.tap_l_per_period)
    if scenario == "tap_after_reheat":
        return tap
    if scenario == "intermittent_then_tap":
        n_idle = round(h.intermittent_hours * 60 / config.period_min)
        trickle = np.full(n_idle, h.intermittent_l_per_hour * config.period_min / 60.0)
        return np.concatenate((trickle, tap))
    raise ValueError(f"Unknown scenario '{scenario}'. Expected: {' | '.join(SCENARIOS)}")


def simulate_scenario(scenario: str, config: WorkbenchConfig, seed: int = 0) -> ScenarioRun:
    """Reheat to the default target, then replay the scripted draws."""
    draws = scenario_draws(scenario, config)
    p = config.period_min
    max_heat = config.agent.max_charge_periods
    ambient = get_ambient_source(config, seed, max_heat + draws.size + 1)
    sim = HouseSimulator(config.vessel, config.heat_pump, timestamp=config.start_minute, period_min=p)
    target = config.agent.planner.default_target_c
    now = config.start_minute
    for _ in range(max_heat):
        if sim.state.midpoint_temp >= target:
            break
        sim.advance(True, 0.0, ambient.temperature_at(now))
        now += p
    start = now
    initial = sim.state.midpoint_temp
    truth = np.empty(draws.size)
    sensor = np.empty(draws.size)
    outdoor = np.empty(draws.size)
    noise = config.vessel.sensor_noise_std
    for t, draw in enumerate(draws):
        outdoor[t] = ambient.temperature_at(now)
        sim.advance(False, float(draw), outdoor[t])
        now += p
        truth[t] = sim.state.midpoint_temp
        sensor[t] = observe(sim.state, float(draw), 0.0, outdoor[t], [seed, _OFFLINE_STREAM, t], noise_std=noise).midpoint_temp
    return ScenarioRun(draws, outdoor, start, initial, truth, sensor)


def knee_volume(curve_c: np.ndarray, cumulative_l: np.ndarray, threshold_c: float) -> tuple[float, bool]:
    """Liters drawn when the curve first falls below ``threshold_c``; flag False if it never does."""
    below = np.flatnonzero(curve_c < threshold_c)
    if below.size == 0:
        return float(cumulative_l[-1]), False
    i = int(below[0])
    if i == 0:
        return float(cumulative_l[0]), True
    c0, c1 = curve_c[i - 1], curve_c[i]
    v0, v1 = cumulative_l[i - 1], cumulative_l[i]
    frac = (c0 - threshold_c) / (c0 - c1) if c0 != c1 else 1.0
    return float(v0 + frac * (v1 - v0)), True


def compare_curves(
    run: ScenarioRun, dynamics: LearnedDynamics, config: WorkbenchConfig
) -> tuple[dict[str, Any], pd.DataFrame]:
    features = StateFeatures(
        midpoint_c=run.initial_midpoint_c,
        minutes_since_reheat=0.0,
        draw_since_reheat_l=0.0,
        ambient_c=float(run.ambient_c[0]),
        period_of_day=int(period_of_day(run.start_minute, config.period_min)),
        periods_per_day=config.periods_per_day,
    )
    n = run.draws_l.size
    traj = rollout(dynamics, features, (np.zeros((1, n), int), np.zeros((1, n))), run.draws_l, run.ambient_c)
    model = traj.midpoint_c[0]
    std = np.sqrt(np.maximum(traj.midpoint_var[0], dynamics.noise_std**2))
    error = model - run.true_midpoint_c
    cumulative = np.cumsum(run.draws_l)
    threshold = config.vessel.hw_threshold_c
    true_knee, true_crossed = knee_volume(run.true_midpoint_c, cumulative, threshold)
    model_knee, model_crossed = knee_volume(model, cumulative, threshold)
    knee_error = abs(model_knee - true_knee)
    volume = config.vessel.volume_l
    report = {
        "n_points": int(n),
        "max_abs_error_c": float(np.max(np.abs(error))),
        "mean_abs_error_c": float(np.mean(np.abs(error))),
        "true_knee_l": true_knee,
        "model_knee_l": model_knee,
        "knee_censored": not (true_crossed and model_crossed),
        "knee_error_l": knee_error,
        "knee_error_pct": 100.0 * knee_error / volume,
        "coverage_1std": float(np.mean(np.abs(error) <= std)),
        "mean_band_std_c": float(np.mean(std)),
        "wide_bands": bool(np.median(std) > WIDE_BAND_STD_C),
    }
    table = pd.DataFrame(
        {
            "step": np.arange(n),
            "cumulative_draw_l": cumulative,
            "true_c": run.true_midpoint_c,
            "sensor_c": run.sensor_c,
            "model_c": model,
            "model_std_c": std,
        }
    )
    return report, table


async def run_offline_validation(
    scenario: str,
    config: WorkbenchConfig,
    store: RunStore,
    *,
    checkpoint: str = "model",
    model: LearnedDynamics | None = None,
    oracle: bool = False,
    seed: int | None = None,
) -> dict[str, Any]:
    """Score a trained model (or the replay oracle) on one scripted scenario.

    Without ``model`` or ``oracle`` the model is loaded from ``checkpoint``;
    a missing checkpoint raises CheckpointError.
    """
    seed = config.seed if seed is None else seed
    run = await asyncio.to_thread(simulate_scenario, scenario, config, seed)
    if oracle:
        deltas = np.diff(np.concatenate(([run.initial_midpoint_c], run.true_midpoint_c)))
        model = LearnedDynamics(
            transition=ReplayModel(deltas),
            reheat=ReheatModel(config.agent.ensemble.prior_rise_c_per_period),
            volume_l=config.vessel.volume_l,
            hw_threshold_c=config.vessel.hw_threshold_c,
            knee_band_c=config.agent.ensemble.hw_knee_band_c,
            noise_std=config.vessel.sensor_noise_std,
            period_min=config.period_min,
        )
    elif model is None:
        model = LearnedDynamics.from_json_dict(await store.load_checkpoint(checkpoint))

    report, table = await asyncio.to_thread(compare_curves, run, model, config)
    report = {
        "scenario": scenario,
        "model": "oracle" if oracle else checkpoint,
        **report,
        "manifest": build_manifest(config, seed=seed),
    }
    name = f"offline-{scenario}"
    await store.save_report(name, report)
    await store.save_table(name, table)
    logger.info(
        "Offline %s: knee error %.1f L (%.1f %% of tank)",
        scenario,
        report["knee_error_l"],
        report["knee_error_pct"],
    )
    return report


# ── Online ──


def _window_median(values: pd.Series, days: pd.Series, first: int, last: int) -> float:
    picked = values[(days >= first) & (days <= last)].dropna()
    return float(picked.median()) if len(picked) else math.nan


def online_metrics(log: RunLog) -> dict[str, Any]:
    """One-step error, calibration and learning-progress statistics of a run log."""
    frame = log.to_frame()
    ppd = 1440 // log.period_min
    # A prediction made in row t is about the state that row t + 1 starts from.
    error = (frame["pred_midpoint_c"] - frame["midpoint_true_c"].shift(-1)).abs()
    sensor_error = (frame["pred_midpoint_c"] - frame["sensor_c"].shift(-1)).abs()
    valid = error.notna()
    covered = sensor_error[valid] <= frame.loc[valid, "pred_std_c"]
    probes = frame.loc[frame["probe_variance"].notna(), ["day", "probe_variance"]]
    by_day = probes.groupby("day")["probe_variance"].first()
    last_day = int(by_day.index.max()) if len(by_day) else -1

    def probe_at(day: int) -> float:
        return float(by_day.loc[day]) if day in by_day.index else math.nan

    late_day = min(28, last_day)
    early_var, late_var = probe_at(2), probe_at(late_day)
    weeks = frame["period"] // (7 * ppd)
    return {
        "n_predictions": int(valid.sum()),
        "median_error_days_1_7_c": _window_median(error, frame["day"], 0, 6),
        "median_error_days_21_28_c": _window_median(error, frame["day"], 20, 27),
        "median_error_c": float(error.median()) if valid.any() else math.nan,
        "coverage_1std": float(covered.mean()) if valid.any() else math.nan,
        "probe_variance_day_2": early_var,
        "probe_variance_late_day": late_day,
        "probe_variance_late": late_var,
        "probe_variance_ratio": late_var / early_var if early_var and early_var > 0 else math.nan,
        "retrains_per_week": [int(v) for v in frame.groupby(weeks)["retrained"].sum()],
        "info_gain_per_2_days": [float(v) for v in frame.groupby(frame["day"] // 2)["e_t"].sum()],
    }


async def run_online_validation(
    config: WorkbenchConfig,
    n_days: int,
    seed: int,
    store: RunStore,
    *,
    checkpoint: str = "model",
) -> dict[str, Any]:
    """Run one learning house and score its online predictions; saves its buffer and trained model."""
    runner = EpisodeRunner(config, "efficiency", n_days, seed, run_id=f"online-s{seed}")
    log = await asyncio.to_thread(runner.run)
    await store.save_run_log(log, build_manifest(config, run_id=log.run_id, controller="efficiency", seed=seed))
    agent = runner.controller
    if isinstance(agent, EfficiencyAgent):
        await store.save_experiences(log.run_id, agent.experiences)
    dynamics = agent.dynamics if isinstance(agent, EfficiencyAgent) else None
    if dynamics is not None:
        await store.save_checkpoint(checkpoint, dynamics.to_json_dict())
    else:
        logger.warning("No transition model was trained in %d days; no checkpoint saved", n_days)

    report = {
        "run_id": log.run_id,
        "n_days": n_days,
        "seed": seed,
        "checkpoint": checkpoint if dynamics is not None else None,
        "retrain_count": agent.retrain_count if isinstance(agent, EfficiencyAgent) else 0,
        **online_metrics(log),
        "manifest": build_manifest(config, seed=seed),
    }
    await store.save_report("online", report)
    logger.info(
        "Online validation: median one-step error %.2f °C, coverage %.0f %%",
        report["median_error_c"],
        100 * report["coverage_1std"],
    )
    return report


async def simulate(
    config: WorkbenchConfig,
    controller: str,
    n_days: int,
    seed: int,
    store: RunStore,
    *,
    draws_l: np.ndarray | None = None,
) -> RunLog:
    """One house; writes its log and manifest, plus the learning agent's buffer and checkpoint.

    ``draws_l`` replays recorded per-period draws instead of sampling the occupant.
    """
    runner = EpisodeRunner(config, controller, n_days, seed)
    log = await asyncio.to_thread(runner.run, draws_l)
    await store.save_run_log(log, build_manifest(config, run_id=log.run_id, controller=controller, seed=seed))
    agent = runner.controller
    if isinstance(agent, EfficiencyAgent):
        await store.save_experiences(log.run_id, agent.experiences)
        if agent.dynamics is not None:
            await store.save_checkpoint(log.run_id, agent.dynamics.to_json_dict())
    return log


async def train_from_experiences(
    config: WorkbenchConfig,
    store: RunStore,
    name: str,
    *,
    checkpoint: str = "model",
    seed: int | None = None,
) -> dict[str, Any]:
    """Fit a fresh model on a stored experience buffer and save it as ``checkpoint``.

    The heat-pump law is only fitted when the buffer holds enough reheat
    periods; the reheat-duration model starts from its prior.
    """
    seed = config.seed if seed is None else seed
    experiences = await store.load_experiences(name)
    ens_cfg = config.agent.ensemble
    ensemble = await asyncio.to_thread(train_ensemble, experiences, ens_cfg, seed)
    try:
        heat_pump = fit_heat_pump(experiences, ens_cfg)
    except ValueError as exc:
        logger.warning("Heat pump law not fitted from '%s': %s", name, exc)
        heat_pump = None
    dynamics = LearnedDynamics(
        transition=ensemble,
        reheat=ReheatModel(ens_cfg.prior_rise_c_per_period),
        heat_pump=heat_pump,
        volume_l=config.vessel.volume_l,
        hw_threshold_c=config.vessel.hw_threshold_c,
        knee_band_c=ens_cfg.hw_knee_band_c,
        noise_std=config.vessel.sensor_noise_std,
        period_min=config.period_min,
    )
    await store.save_checkpoint(checkpoint, dynamics.to_json_dict())
    logger.info("Trained '%s' on buffer '%s' (%d experiences)", checkpoint, name, len(experiences))
    return {
        "experiences": name,
        "checkpoint": checkpoint,
        "n_experiences": len(experiences),
        "n_train": ensemble.n_train,
        "heat_pump": heat_pump is not None,
    }
