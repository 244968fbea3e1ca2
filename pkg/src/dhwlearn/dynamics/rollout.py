"""Chained multi-step prediction under the learned dynamics.

Discharge periods are predicted by a transition model (the ensemble, or any
object with ``predict_batch``). A reheat is a macro step: the mid-point ramps
linearly to the target over the duration predicted by the reheat model and
each charging period costs what the heat-pump fit says. All candidates of a
batch are rolled out together.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Callable, Protocol

import numpy as np

from dhwlearn.dynamics.ensemble import EnsembleModel, EnsemblePrediction, expected_information_gain
from dhwlearn.dynamics.experience import StateFeatures, encode_inputs
from dhwlearn.dynamics.heatpump_fit import HeatPumpFit, ReheatModel

logger = logging.getLogger(__name__)

FEATURE_BOUNDS_C = (0.0, 100.0)
# Electric Wh per charging period assumed before a heat pump fit exists.
DEFAULT_CHARGE_WH = 200.0

# (midpoint [N], step index) -> (reheat [N], target [N])
PolicyCallback = Callable[[np.ndarray, int], tuple[np.ndarray, np.ndarray]]


class TransitionModel(Protocol):
    def predict_batch(self, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Mean and variance of (midpoint change, electric Wh) per input row."""


@dataclass(frozen=True)
class LearnedDynamics:
    """Everything the planner needs to imagine the future of one house."""

    transition: TransitionModel
    reheat: ReheatModel
    heat_pump: HeatPumpFit | None = None
    volume_l: float = 200.0
    hw_threshold_c: float = 45.0
    knee_band_c: float = 10.0
    noise_std: float = 0.25
    period_min: int = 15

    @property
    def periods_per_day(self) -> int:
        return 1440 // self.period_min

    def charge_wh(self, ambient_c: np.ndarray, midpoint_c: np.ndarray) -> np.ndarray:
        if self.heat_pump is None:
            return np.full(np.shape(midpoint_c), DEFAULT_CHARGE_WH)
        return self.heat_pump.predict(ambient_c, midpoint_c)

    def to_json_dict(self) -> dict[str, Any]:
        """Checkpoint body; only an ensemble transition model can be saved."""
        if not isinstance(self.transition, EnsembleModel):
            raise ValueError(f"Cannot checkpoint transition model of type {type(self.transition).__name__}")
        return {
            "kind": "dynamics",
            "transition": self.transition.to_json_dict(),
            "reheat": self.reheat.to_json_dict(),
            "heat_pump": None if self.heat_pump is None else self.heat_pump.to_json_dict(),
            "volume_l": self.volume_l,
            "hw_threshold_c": self.hw_threshold_c,
            "knee_band_c": self.knee_band_c,
            "noise_std": self.noise_std,
            "period_min": self.period_min,
        }

    @classmethod
    def from_json_dict(cls, d: dict[str, Any]) -> LearnedDynamics:
        if d.get("kind") != "dynamics":
            raise ValueError(f"Not a dynamics checkpoint (kind={d.get('kind')})")
        heat_pump = d.get("heat_pump")
        return cls(
            transition=EnsembleModel.from_json_dict(d["transition"]),
            reheat=ReheatModel.from_json_dict(d["reheat"]),
            heat_pump=None if heat_pump is None else HeatPumpFit.from_json_dict(heat_pump),
            volume_l=float(d["volume_l"]),
            hw_threshold_c=float(d["hw_threshold_c"]),
            knee_band_c=float(d["knee_band_c"]),
            noise_std=float(d["noise_std"]),
            period_min=int(d["period_min"]),
        )


def estimate_hot_water(
    midpoint_c,
    draw_since_reheat_l,
    volume_l: float,
    threshold_c: float = 45.0,
    knee_band_c: float = 10.0,
):
    """Liters of usable hot water believed to remain (scalar or array).

    Plug flow displaces hot water one liter per liter drawn since the last
    reheat. Once the mid-point reads below the threshold at most the upper
    half is still usable, shrinking to nothing ``knee_band_c`` below it.
    """
    mid = np.asarray(midpoint_c, dtype=float)
    displaced = np.clip(volume_l - np.asarray(draw_since_reheat_l, dtype=float), 0.0, volume_l)
    upper_half = 0.5 * volume_l * np.clip((mid - (threshold_c - knee_band_c)) / knee_band_c, 0.0, 1.0)
    cap = np.where(mid < threshold_c, upper_half, volume_l)
    result = np.minimum(displaced, cap)
    return float(result) if result.ndim == 0 else result


@dataclass(frozen=True)
class Trajectory:
    """Per-candidate, per-period predictions, each array shaped [N x T]."""

    midpoint_c: np.ndarray
    midpoint_var: np.ndarray
    electric_wh: np.ndarray
    hot_water_l: np.ndarray
    comfort_l: np.ndarray
    info_bits: np.ndarray
    reheat: np.ndarray
    target_c: np.ndarray
    clamped: bool = False

    @property
    def n_candidates(self) -> int:
        return int(self.midpoint_c.shape[0])

    @property
    def horizon(self) -> int:
        return int(self.midpoint_c.shape[1])

    def predictions(self, candidate: int = 0) -> list[EnsemblePrediction]:
        return [
            EnsemblePrediction(
                np.array([self.midpoint_c[candidate, t], self.electric_wh[candidate, t]]),
                np.array([self.midpoint_var[candidate, t], 0.0]),
            )
            for t in range(self.horizon)
        ]


def rollout(
    model: LearnedDynamics,
    initial: StateFeatures,
    actions: tuple[np.ndarray, np.ndarray] | PolicyCallback,
    draws_l: np.ndarray,
    ambient_c: np.ndarray,
    *,
    n_candidates: int | None = None,
) -> Trajectory:
    """Roll N candidates forward over the forecast horizon.

    ``actions`` is either a (reheat, target) pair of [N x T] arrays or a
    closed-loop callback consulted whenever a candidate is not charging.
    ``draws_l`` is the (risk-adjusted) per-period draw forecast. Action
    entries during a charge are ignored: a started reheat runs to completion.
    """
    draws = np.asarray(draws_l, dtype=float)
    ambient = np.asarray(ambient_c, dtype=float)
    T = draws.size
    if ambient.size != T:
        raise ValueError(f"forecast horizons differ: draws {T}, ambient {ambient.size}")
    if callable(actions):
        n = n_candidates or 1
        plan_reheat = plan_target = None
    else:
        plan_reheat = np.atleast_2d(np.asarray(actions[0], dtype=int))
        plan_target = np.atleast_2d(np.asarray(actions[1], dtype=float))
        if plan_reheat.shape[1] != T or plan_target.shape != plan_reheat.shape:
            raise ValueError(f"action horizon {plan_reheat.shape[1]} != forecast horizon {T}")
        n = plan_reheat.shape[0]

    shape = (n, T)
    out_mid = np.zeros(shape)
    out_var = np.zeros(shape)
    out_elec = np.zeros(shape)
    out_hw = np.zeros(shape)
    out_comfort = np.zeros(shape)
    out_reheat = np.zeros(shape, dtype=int)
    out_target = np.zeros(shape)
    clamped = False

    mid = np.full(n, initial.midpoint_c, dtype=float)
    minutes_since = np.full(n, initial.minutes_since_reheat, dtype=float)
    draw_since = np.full(n, initial.draw_since_reheat_l, dtype=float)
    remaining = np.zeros(n, dtype=int)
    ramp_step = np.zeros(n)
    final_mid = np.zeros(n)
    active_target = np.zeros(n)
    ppd = model.periods_per_day
    lo, hi = FEATURE_BOUNDS_C

    for t in range(T):
        hw_before = estimate_hot_water(
            mid, draw_since, model.volume_l, model.hw_threshold_c, model.knee_band_c
        )
        out_comfort[:, t] = np.maximum(0.0, draws[t] - hw_before)

        idle = remaining == 0
        if callable(actions):
            want, target = actions(mid.copy(), t)
            want = np.asarray(want, dtype=int)
            target = np.asarray(target, dtype=float)
        else:
            want, target = plan_reheat[:, t], plan_target[:, t]
        start = idle & (want == 1)
        if start.any():
            duration = model.reheat.predict_periods(
                mid[start],
                target[start],
                draw_since[start],
                minutes_since[start] / 60.0,
                np.full(int(start.sum()), ambient[t]),
            )
            remaining[start] = duration
            active_target[start] = target[start]
            final_mid[start] = np.maximum(target[start], mid[start])
            ramp_step[start] = (final_mid[start] - mid[start]) / duration
        charging = remaining > 0
        out_reheat[start, t] = 1
        out_target[charging, t] = active_target[charging]

        pod = (initial.period_of_day + t) % ppd
        discharging = ~charging
        if discharging.any():
            x = encode_inputs(
                mid[discharging],
                minutes_since[discharging],
                draw_since[discharging],
                ambient[t],
                draws[t],
                pod,
                ppd,
            )
            mean, var = model.transition.predict_batch(x)
            mid[discharging] = mid[discharging] + mean[:, 0]
            out_var[discharging, t] = var[:, 0]
            out_elec[discharging, t] = np.maximum(mean[:, 1], 0.0)
        if charging.any():
            out_elec[charging, t] = model.charge_wh(np.full(int(charging.sum()), ambient[t]), mid[charging])
            mid[charging] = mid[charging] + ramp_step[charging]
            remaining[charging] -= 1

        minutes_since += model.period_min
        draw_since += draws[t]
        done = charging & (remaining == 0)
        if done.any():
            mid[done] = final_mid[done]
            minutes_since[done] = 0.0
            draw_since[done] = 0.0

        if np.any((mid < lo) | (mid > hi)):
            if not clamped:
                logger.warning("Rollout mid-point left [%.0f, %.0f] °C; clamping", lo, hi)
            clamped = True
            np.clip(mid, lo, hi, out=mid)

        out_mid[:, t] = mid
        out_hw[:, t] = estimate_hot_water(
            mid, draw_since, model.volume_l, model.hw_threshold_c, model.knee_band_c
        )

    info = expected_information_gain(out_var, model.noise_std)
    return Trajectory(out_mid, out_var, out_elec, out_hw, out_comfort, info, out_reheat, out_target, clamped)
