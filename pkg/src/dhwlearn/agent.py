"""Closed-loop control of one house.

A controller sees one Observation per period and returns a Decision. The
shared base class owns the reheat bookkeeping both controllers need: holding
a started reheat until the sensor reaches its target, the time and draw
accumulators that reset when a reheat completes, and the fixed-interval
legionella cycle.

``EfficiencyAgent`` runs the learning loop: store the experience that the new
observation completes, retrain when the variance probes or data volume say
so, forecast demand and weather, plan, and apply the backup override.
"""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from typing import Any, ClassVar

import numpy as np
import pandas as pd

from dhwlearn.clock import MINUTES_PER_DAY, minute_to_iso, period_of_day
from dhwlearn.config import AgentConfig, WorkbenchConfig
from dhwlearn.dynamics.ensemble import (
    EnsembleModel,
    information_gain,
    predict,
    probe_grid,
    residual_excess,
    train_ensemble,
    variance_snapshot,
)
from dhwlearn.dynamics.experience import Action, Experience, StateFeatures
from dhwlearn.dynamics.heatpump_fit import (
    CycleRecord,
    HeatPumpFit,
    ReheatModel,
    fit_heat_pump,
    fit_reheat_cycles,
)
from dhwlearn.dynamics.rollout import LearnedDynamics, estimate_hot_water
from dhwlearn.forecastio import AmbientSource, get_ambient_source
from dhwlearn.occupant import draws_per_period, predict_draws, sample_days
from dhwlearn.planner import backup_controller, default_policy, plan
from dhwlearn.reward import combine, comfort_loss
from dhwlearn.simcore import HouseSimulator, Observation, hot_water_volume, observe

logger = logging.getLogger(__name__)

OVERRIDES = ("none", "hold", "backup", "legionella", "cold_start", "warmup")
# Keeps the sensor noise stream independent of the occupant and weather streams.
_SENSOR_STREAM = 0x5E45


@dataclass(frozen=True)
class Decision:
    action: Action
    override: str = "none"
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.override not in OVERRIDES:
            raise ValueError(f"Unknown override '{self.override}'")


def should_retrain(
    prev_variance_snapshot: np.ndarray, current_variance_snapshot: np.ndarray, threshold: float
) -> bool:
    """True iff the mean absolute change across probes exceeds ``threshold``."""
    prev = np.asarray(prev_variance_snapshot, dtype=float)
    current = np.asarray(current_variance_snapshot, dtype=float)
    if prev.shape != current.shape:
        raise ValueError("variance snapshots must cover the same probes")
    return bool(np.mean(np.abs(current - prev)) > threshold)


# ── Controllers ──


class Controller(ABC):
    """Reheat hold, accumulators and legionella scheduling."""

    name: ClassVar[str]

    def __init__(self, config: WorkbenchConfig, start_minute: int) -> None:
        self.config = config
        self.agent = config.agent
        self.start_minute = start_minute
        self.period_min = config.period_min
        self.periods_per_day = config.periods_per_day
        self.minutes_since_reheat = 0.0
        self.draw_since_reheat = 0.0
        self.charging = False
        self.charge_target = 0.0
        self.charge_periods = 0
        self.charge_electric_wh = 0.0
        self.charge_is_legionella = False
        self._charge_start: StateFeatures | None = None
        self._legionella_served = -1
        self._last_timestamp: int | None = None

    def features(self, obs: Observation) -> StateFeatures:
        return StateFeatures(
            midpoint_c=obs.midpoint_temp,
            minutes_since_reheat=self.minutes_since_reheat,
            draw_since_reheat_l=self.draw_since_reheat,
            ambient_c=obs.ambient_temp,
            period_of_day=int(period_of_day(obs.timestamp, self.period_min)),
            periods_per_day=self.periods_per_day,
        )

    def _advance_clock(self, obs: Observation) -> None:
        if self._last_timestamp is not None:
            if obs.timestamp != self._last_timestamp + self.period_min:
                raise ValueError(
                    f"observation at {minute_to_iso(obs.timestamp)} does not follow "
                    f"{minute_to_iso(self._last_timestamp)} by one period"
                )
            self.minutes_since_reheat += self.period_min
            self.draw_since_reheat += obs.flow_l
        self._last_timestamp = obs.timestamp

    def _legionella_window(self, minute: int) -> int:
        return (minute - self.start_minute) // (self.agent.legionella_period_days * MINUTES_PER_DAY)

    def _start_charge(self, obs: Observation, target: float, legionella: bool = False) -> None:
        self.charging = True
        self.charge_target = target
        self.charge_periods = 0
        self.charge_electric_wh = 0.0
        self.charge_is_legionella = legionella
        self._charge_start = self.features(obs)
        if legionella:
            self._legionella_served = self._legionella_window(obs.timestamp)

    def _end_charge(self, obs: Observation, diagnostics: dict[str, Any]) -> None:
        self.charging = False
        if obs.midpoint_temp < self.charge_target:
            if self.charge_is_legionella:
                # Not served; schedule it again.
                self._legionella_served -= 1
            return
        diagnostics["reheat_completed"] = True
        if self.charge_is_legionella:
            diagnostics["legionella_completed"] = True
        start = self._charge_start
        if start is not None:
            self.on_cycle_completed(
                CycleRecord(
                    start_midpoint_c=start.midpoint_c,
                    target_c=self.charge_target,
                    draw_since_reheat_l=start.draw_since_reheat_l,
                    hours_since_reheat=start.minutes_since_reheat / 60.0,
                    ambient_c=start.ambient_c,
                    periods=self.charge_periods,
                    electric_wh=self.charge_electric_wh,
                )
            )
        self.minutes_since_reheat = 0.0
        self.draw_since_reheat = 0.0

    def act(self, obs: Observation) -> Decision:
        self._advance_clock(obs)
        diagnostics: dict[str, Any] = {}
        self.on_observation(obs, diagnostics)

        if self.charging:
            self.charge_periods += 1
            self.charge_electric_wh += obs.heater_energy_wh
            if obs.midpoint_temp >= self.charge_target:
                self._end_charge(obs, diagnostics)
            elif self.charge_periods >= self.agent.max_charge_periods:
                logger.warning(
                    "Reheat to %.1f °C still at %.1f °C after %d periods; releasing hold",
                    self.charge_target,
                    obs.midpoint_temp,
                    self.charge_periods,
                )
                self._end_charge(obs, diagnostics)
            else:
                return Decision(Action(1, self.charge_target), "hold", diagnostics)

        if self._legionella_served < self._legionella_window(obs.timestamp):
            target = self.agent.legionella_target_c
            self._start_charge(obs, target, legionella=True)
            return Decision(Action(1, target), "legionella", diagnostics)

        decision = self.decide(obs, diagnostics)
        if decision.action.reheat:
            self._start_charge(obs, decision.action.target_c)
        return decision

    def settle(self, obs: Observation) -> dict[str, Any]:
        """Absorb the final observation of a run without deciding."""
        diagnostics: dict[str, Any] = {}
        self.on_observation(obs, diagnostics)
        return diagnostics

    def on_observation(self, obs: Observation, diagnostics: dict[str, Any]) -> None:
        """Hook run before any decision logic."""

    def on_cycle_completed(self, cycle: CycleRecord) -> None:
        """Hook run when a reheat reaches its target."""

    def baseline(self, obs: Observation) -> Action:
        planner = self.agent.planner
        want = default_policy(obs.midpoint_temp, planner.default_target_c, planner.default_delta_c, 0)
        return Action(want, planner.default_target_c)

    @abstractmethod
    def decide(self, obs: Observation, diagnostics: dict[str, Any]) -> Decision:
        """Action for a period in which no reheat is being held."""


class DefaultController(Controller):
    """The hysteresis thermostat (plus legionella)."""

    name = "default"

    def decide(self, obs: Observation, diagnostics: dict[str, Any]) -> Decision:
        return Decision(self.baseline(obs), "none", diagnostics)


class EfficiencyAgent(Controller):
    """Model-based controller with variance-gated retraining."""

    name = "efficiency"

    def __init__(
        self,
        config: WorkbenchConfig,
        start_minute: int,
        ambient: AmbientSource,
        seed: int,
    ) -> None:
        super().__init__(config, start_minute)
        self.ambient = ambient
        self.seed = seed
        self.experiences: list[Experience] = []
        self.cycles: list[CycleRecord] = []
        self.draw_history: list[float] = []
        self.ensemble: EnsembleModel | None = None
        self.heat_pump: HeatPumpFit | None = None
        self.reheat_model = ReheatModel(config.agent.ensemble.prior_rise_c_per_period)
        self.probes = probe_grid(config.agent.n_probes, seed % (2**32), self.periods_per_day)
        self.retrain_count = 0
        self._n_discharge = 0
        self._n_reheat = 0
        self._snapshot_ref: np.ndarray | None = None
        self._transition_threshold: float | None = config.agent.transition_threshold
        self._train_index = 0
        self._n_discharge_at_train = 0
        self._hp_index = 0
        self._pending: tuple[StateFeatures, Action, int] | None = None

    @property
    def dynamics(self) -> LearnedDynamics | None:
        if self.ensemble is None:
            return None
        vessel = self.config.vessel
        return LearnedDynamics(
            transition=self.ensemble,
            reheat=self.reheat_model,
            heat_pump=self.heat_pump,
            volume_l=vessel.volume_l,
            hw_threshold_c=vessel.hw_threshold_c,
            knee_band_c=self.agent.ensemble.hw_knee_band_c,
            noise_std=vessel.sensor_noise_std,
            period_min=self.period_min,
        )

    def act(self, obs: Observation) -> Decision:
        decision = super().act(obs)
        self._pending = (self.features(obs), decision.action, obs.timestamp)
        return decision

    # ── experience and retraining ──

    def on_observation(self, obs: Observation, diagnostics: dict[str, Any]) -> None:
        if self._pending is None:
            return
        features, action, timestamp = self._pending
        self._pending = None
        self.draw_history.append(obs.flow_l)
        experience = Experience(
            features=features,
            action=action,
            next_midpoint_c=obs.midpoint_temp,
            electric_wh=obs.heater_energy_wh,
            timestamp=timestamp,
            draw_l=obs.flow_l,
        )
        self.experiences.append(experience)
        previous: dict[str, Any] = {}
        if experience.is_discharge:
            self._n_discharge += 1
            if self.ensemble is not None:
                noise = self.config.vessel.sensor_noise_std
                prediction = predict(self.ensemble, features, action, obs.flow_l)
                previous["pred_midpoint_c"] = prediction.midpoint_c
                previous["pred_std_c"] = math.sqrt(max(prediction.midpoint_var, noise**2))
                previous["e_t"] = information_gain(self.ensemble, experience, noise)
        else:
            self._n_reheat += 1
        diagnostics["previous"] = previous

        day_boundary = (obs.timestamp - self.start_minute) % MINUTES_PER_DAY == 0
        if self._maybe_retrain(day_boundary):
            diagnostics["retrained"] = True
        if day_boundary and self.ensemble is not None:
            diagnostics["probe_variance"] = float(variance_snapshot(self.ensemble, self.probes).mean())

    def on_cycle_completed(self, cycle: CycleRecord) -> None:
        self.cycles.append(cycle)
        self.reheat_model = fit_reheat_cycles(self.cycles, self.agent.ensemble)

    def _train_transition(self, reason: str) -> None:
        self.ensemble = train_ensemble(
            self.experiences, self.agent.ensemble, (self.seed + self.retrain_count) % (2**32)
        )
        self.retrain_count += 1
        self._train_index = len(self.experiences)
        self._n_discharge_at_train = self._n_discharge
        self._snapshot_ref = variance_snapshot(self.ensemble, self.probes)
        if self._transition_threshold is None:
            self._transition_threshold = self.agent.threshold_fraction * float(self._snapshot_ref.mean())
        logger.info(
            "Retrained transition model (%s) on %d discharge experiences", reason, self._n_discharge
        )

    def _maybe_retrain(self, day_boundary: bool) -> bool:
        agent = self.agent
        retrained = False
        if self.ensemble is None:
            if self._n_discharge >= max(agent.min_train_experiences, agent.ensemble.min_experiences):
                self._train_transition("initial")
                retrained = True
        elif day_boundary:
            if (
                agent.retrain_growth_factor
                and self._n_discharge >= agent.retrain_growth_factor * self._n_discharge_at_train
            ):
                self._train_transition("data growth")
                retrained = True
            else:
                new = self.experiences[self._train_index :]
                excess = residual_excess(
                    self.ensemble, new, self.probes, self.config.vessel.sensor_noise_std
                )
                current = variance_snapshot(self.ensemble, self.probes, excess)
                if should_retrain(self._snapshot_ref, current, self._transition_threshold or 0.0):
                    self._train_transition("variance change")
                    retrained = True

        if self._n_reheat >= agent.ensemble.min_reheat_experiences:
            if self.heat_pump is None:
                self._fit_heat_pump()
                retrained = True
            elif day_boundary:
                new = self.experiences[self._hp_index :]
                if any(e.action.reheat for e in new):
                    change = abs(self.heat_pump.mean_squared_error(new) - self.heat_pump.mse)
                    threshold = agent.reward_threshold
                    if threshold is None:
                        threshold = agent.threshold_fraction * self.heat_pump.mse
                    if change > threshold:
                        self._fit_heat_pump()
                        retrained = True
        return retrained

    def _fit_heat_pump(self) -> None:
        self.heat_pump = fit_heat_pump(self.experiences, self.agent.ensemble)
        self._hp_index = len(self.experiences)

    # ── planning ──

    def decide(self, obs: Observation, diagnostics: dict[str, Any]) -> Decision:
        agent = self.agent
        vessel = self.config.vessel
        hw = estimate_hot_water(
            obs.midpoint_temp,
            self.draw_since_reheat,
            vessel.volume_l,
            vessel.hw_threshold_c,
            agent.ensemble.hw_knee_band_c,
        )
        diagnostics["hw_estimate_l"] = hw
        if obs.timestamp - self.start_minute < agent.warmup_days * MINUTES_PER_DAY:
            return Decision(self.baseline(obs), "warmup", diagnostics)
        dynamics = self.dynamics
        if dynamics is None:
            return Decision(self.baseline(obs), "cold_start", diagnostics)

        planner = agent.planner
        window = self.config.occupant.history_days * self.periods_per_day
        history = self.draw_history[-window:]
        history_start = self.start_minute + (len(self.draw_history) - len(history)) * self.period_min
        draw_forecast = predict_draws(
            history,
            planner.horizon,
            history_start=history_start,
            period_min=self.period_min,
            fallback_daily_l=self.config.occupant.daily_mean_l,
        )
        ambient_forecast = self.ambient.forecast(obs.timestamp, planner.horizon)
        result = plan(
            dynamics,
            self.features(obs),
            draw_forecast,
            ambient_forecast,
            agent.weights,
            planner.horizon,
            config=planner,
        )
        diagnostics["predicted_return"] = result.predicted_return
        diagnostics["default_return"] = result.default_return
        action = result.policy.first_action(planner.default_target_c)
        if not action.reheat and backup_controller(obs, hw, agent.reserve_l, agent.hard_floor_c):
            return Decision(Action(1, planner.default_target_c), "backup", diagnostics)
        return Decision(action, "none", diagnostics)


def make_controller(
    kind: str, config: WorkbenchConfig, start_minute: int, ambient: AmbientSource, seed: int
) -> Controller:
    if kind == "default":
        return DefaultController(config, start_minute)
    if kind == "efficiency":
        agent_seed = int(np.random.SeedSequence([config.agent.seed, seed]).generate_state(1)[0])
        return EfficiencyAgent(config, start_minute, ambient, agent_seed)
    raise ValueError(f"Invalid controller='{kind}'. Expected: default | efficiency")


# ── Run logs ──

RUN_COLUMNS = (
    "period",
    "timestamp",
    "day",
    "controller",
    "reheat",
    "target_c",
    "override",
    "sensor_c",
    "midpoint_true_c",
    "top_c",
    "hot_water_true_l",
    "hw_estimate_l",
    "hours_since_reheat",
    "draw_since_reheat_l",
    "draw_l",
    "outflow_min_c",
    "comfort_loss_l",
    "thermal_wh",
    "electric_wh",
    "cop",
    "ambient_c",
    "c_t",
    "o_t",
    "e_t",
    "r_t",
    "pred_midpoint_c",
    "pred_std_c",
    "probe_variance",
    "retrained",
    "reheat_completed",
    "legionella_completed",
)


@dataclass
class RunLog:
    run_id: str
    controller: str
    seed: int
    demand_class: str
    start_minute: int
    period_min: int
    warmup_periods: int = 0
    rows: list[dict[str, Any]] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame.from_records(self.rows, columns=list(RUN_COLUMNS))

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, **meta: Any) -> RunLog:
        missing = set(RUN_COLUMNS) - set(frame.columns)
        if missing:
            raise ValueError(f"Run log missing column(s): {', '.join(sorted(missing))}")
        rows = frame.loc[:, list(RUN_COLUMNS)].to_dict(orient="records")
        return cls(rows=rows, **meta)

    def metadata(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "controller": self.controller,
            "seed": self.seed,
            "demand_class": self.demand_class,
            "start_minute": self.start_minute,
            "period_min": self.period_min,
            "warmup_periods": self.warmup_periods,
        }


class EpisodeRunner:
    """Simulate-observe-act loop of one house at the control period."""

    def __init__(
        self,
        config: WorkbenchConfig,
        controller: str,
        n_days: int,
        seed: int,
        *,
        run_id: str | None = None,
        ambient: AmbientSource | None = None,
    ) -> None:
        if n_days < 1:
            raise ValueError(f"n_days must be >= 1, got {n_days}")
        self.config = config
        self.kind = controller
        self.n_days = n_days
        self.seed = seed
        self.run_id = run_id or f"{controller}-{config.occupant.demand_class}-s{seed}"
        self.n_periods = n_days * config.periods_per_day
        self.start = config.start_minute
        horizon = config.agent.planner.horizon
        self.ambient = ambient or get_ambient_source(config, seed, self.n_periods + horizon + 1)
        self.controller = make_controller(controller, config, self.start, self.ambient, seed)

    def _sensor_seed(self, period: int) -> list[int]:
        return [self.seed, _SENSOR_STREAM, period]

    def run(self, draws_l: np.ndarray | None = None) -> RunLog:
        cfg = self.config
        p = cfg.period_min
        if draws_l is None:
            events = sample_days(cfg.occupant, self.n_days, self.seed, self.start)
            draws_l = draws_per_period(events, self.start, self.n_periods, p)
        draws_l = np.asarray(draws_l, dtype=float)
        if draws_l.size != self.n_periods:
            raise ValueError(f"expected {self.n_periods} per-period draws, got {draws_l.size}")

        sim = HouseSimulator(cfg.vessel, cfg.heat_pump, timestamp=self.start, period_min=p)
        weights = cfg.agent.weights
        noise = cfg.vessel.sensor_noise_std
        threshold = cfg.vessel.hw_threshold_c
        is_efficiency = self.kind == "efficiency"
        log = RunLog(
            run_id=self.run_id,
            controller=self.kind,
            seed=self.seed,
            demand_class=cfg.occupant.demand_class,
            start_minute=self.start,
            period_min=p,
            warmup_periods=cfg.agent.warmup_days * cfg.periods_per_day if is_efficiency else 0,
        )
        logger.info("Run %s: %d days, controller=%s", self.run_id, self.n_days, self.kind)

        obs = observe(sim.state, 0.0, 0.0, self.ambient.temperature_at(self.start), self._sensor_seed(0), noise_std=noise)
        for t in range(self.n_periods):
            now = self.start + t * p
            decision = self.controller.act(obs)
            if log.rows:
                _patch(log.rows[-1], decision.diagnostics.get("previous", {}), weights)
            before = sim.state
            outdoor = self.ambient.temperature_at(now)
            outcome = sim.advance(bool(decision.action.reheat), float(draws_l[t]), outdoor)
            c_t = comfort_loss(outcome.segments, threshold)
            electric = outcome.heat_pump.electric_wh
            diag = decision.diagnostics
            log.rows.append(
                {
                    "period": t,
                    "timestamp": minute_to_iso(now),
                    "day": t // cfg.periods_per_day,
                    "controller": self.kind,
                    "reheat": decision.action.reheat,
                    "target_c": decision.action.target_c if decision.action.reheat else math.nan,
                    "override": decision.override,
                    "sensor_c": obs.midpoint_temp,
                    "midpoint_true_c": before.midpoint_temp,
                    "top_c": before.top_temp,
                    "hot_water_true_l": hot_water_volume(before, threshold),
                    "hw_estimate_l": diag.get("hw_estimate_l", math.nan),
                    "hours_since_reheat": self.controller.minutes_since_reheat / 60.0,
                    "draw_since_reheat_l": self.controller.draw_since_reheat,
                    "draw_l": float(draws_l[t]),
                    "outflow_min_c": outcome.min_outflow_c,
                    "comfort_loss_l": c_t,
                    "thermal_wh": outcome.heat_pump.thermal_wh,
                    "electric_wh": electric,
                    "cop": outcome.heat_pump.cop,
                    "ambient_c": outdoor,
                    "c_t": c_t,
                    "o_t": -electric,
                    "e_t": 0.0,
                    "r_t": float(combine(c_t, -electric, 0.0, weights)),
                    "pred_midpoint_c": math.nan,
                    "pred_std_c": math.nan,
                    "probe_variance": diag.get("probe_variance", math.nan),
                    "retrained": bool(diag.get("retrained", False)),
                    "reheat_completed": bool(diag.get("reheat_completed", False)),
                    "legionella_completed": bool(diag.get("legionella_completed", False)),
                }
            )
            obs = observe(
                sim.state,
                float(draws_l[t]),
                electric,
                self.ambient.temperature_at(now + p),
                self._sensor_seed(t + 1),
                noise_std=noise,
            )
        final = self.controller.settle(obs)
        if log.rows:
            _patch(log.rows[-1], final.get("previous", {}), weights)
        logger.info(
            "Run %s finished: %.2f kWh, %.1f L drawn",
            self.run_id,
            sum(r["electric_wh"] for r in log.rows) / 1000.0,
            float(draws_l.sum()),
        )
        return log


def _patch(row: dict[str, Any], previous: dict[str, Any], weights) -> None:
    """Fill in what the next observation revealed about a logged period."""
    if not previous:
        return
    for key in ("pred_midpoint_c", "pred_std_c"):
        if key in previous:
            row[key] = previous[key]
    if "e_t" in previous:
        row["e_t"] = previous["e_t"]
        row["r_t"] = float(combine(row["c_t"], row["o_t"], row["e_t"], weights))


def run_episode(
    house_config: WorkbenchConfig,
    agent_config: AgentConfig | None,
    n_days: int,
    seed: int,
    *,
    controller: str = "efficiency",
) -> RunLog:
    """One house, one controller, ``n_days`` of 15-minute periods; deterministic per seed."""
    config = house_config if agent_config is None else replace(house_config, agent=agent_config)
    return EpisodeRunner(config, controller, n_days, seed).run()
