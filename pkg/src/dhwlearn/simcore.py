"""Ground-truth physics: stratified vessel, heat pump and mid-point sensor.

The vessel is a stack of equal-volume layers (index 0 = bottom). One period
of operation is:

    (a) plug-flow draw: water leaves at the top, cold inlet water enters at
        the bottom and the profile shifts up;
    (b) standby loss: every layer relaxes exponentially toward the room;
    (c) buoyancy: inverted neighbours merge to their volume-weighted mean
        until the profile is non-decreasing upward;
    (d) heat input spread over the bottom third, then buoyancy again.

All functions are pure; ``HouseSimulator`` owns the mutable state of one house.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal, NamedTuple, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from sklearn.isotonic import isotonic_regression

from dhwlearn.config import HeatPumpConfig, VesselConfig

logger = logging.getLogger(__name__)

RHO_KG_PER_L = 1.0
CP_J_PER_KG_K = 4186.0
WH_PER_L_K = RHO_KG_PER_L * CP_J_PER_KG_K / 3600.0
SENSOR_RANGE_C = (0.0, 100.0)

_DEFAULT_VESSEL = VesselConfig()


class VesselStepError(ValueError):
    """Unphysical step request (draw larger than the vessel, NaN, overheating)."""


@dataclass(frozen=True)
class VesselState:
    layer_temps: np.ndarray
    volume_l: float
    timestamp: int = 0

    def __post_init__(self) -> None:
        temps = np.array(self.layer_temps, dtype=float)
        if temps.ndim != 1 or temps.size < 2:
            raise ValueError("VesselState needs at least 2 layers")
        if not np.all(np.isfinite(temps)):
            raise VesselStepError("VesselState contains NaN or infinite temperatures")
        if self.volume_l <= 0:
            raise ValueError("volume_l must be > 0")
        temps.setflags(write=False)
        object.__setattr__(self, "layer_temps", temps)

    @classmethod
    def uniform(
        cls, temp_c: float, n_layers: int = 10, volume_l: float = 200.0, timestamp: int = 0
    ) -> VesselState:
        return cls(np.full(n_layers, float(temp_c)), volume_l, timestamp)

    @property
    def n_layers(self) -> int:
        return int(self.layer_temps.size)

    @property
    def layer_volume_l(self) -> float:
        return self.volume_l / self.n_layers

    @property
    def midpoint_index(self) -> int:
        return self.n_layers // 2

    @property
    def midpoint_temp(self) -> float:
        return float(self.layer_temps[self.midpoint_index])

    @property
    def top_temp(self) -> float:
        return float(self.layer_temps[-1])

    def within(self, low: float, high: float, tol: float = 1e-9) -> bool:
        return bool(np.all(self.layer_temps >= low - tol) and np.all(self.layer_temps <= high + tol))


class OutflowSegment(NamedTuple):
    volume_l: float
    temp_c: float


def energy_content_wh(state: VesselState, reference_c: float = 0.0) -> float:
    """Sensible heat stored relative to ``reference_c``."""
    return float(WH_PER_L_K * state.layer_volume_l * np.sum(state.layer_temps - reference_c))


def outflow_segments(state: VesselState, draw_l: float) -> list[OutflowSegment]:
    """Water leaving the top during a plug-flow draw of ``draw_l`` liters, top first."""
    if draw_l < 0:
        raise VesselStepError(f"draw_l must be >= 0, got {draw_l}")
    if draw_l > state.volume_l:
        raise VesselStepError(f"draw of {draw_l} L exceeds vessel volume {state.volume_l} L")
    v = state.layer_volume_l
    cut = state.volume_l - draw_l
    segments: list[OutflowSegment] = []
    for j in range(state.n_layers - 1, -1, -1):
        lo, hi = j * v, (j + 1) * v
        volume = hi - max(lo, cut)
        if volume <= 0:
            break
        segments.append(OutflowSegment(volume, float(state.layer_temps[j])))
    return segments


def _plug_flow(temps: np.ndarray, layer_volume: float, draw_l: float, inlet_c: float) -> np.ndarray:
    # New layer i covers [i*v - d, (i+1)*v - d] of the old profile; below 0 is inlet water.
    n = temps.size
    edges = layer_volume * np.arange(n + 1)
    cum = np.concatenate(([0.0], np.cumsum(temps * layer_volume)))

    def integral(x: np.ndarray) -> np.ndarray:
        return np.where(x < 0, inlet_c * x, np.interp(x, edges, cum))

    return (integral(edges[1:] - draw_l) - integral(edges[:-1] - draw_l)) / layer_volume


def resolve_buoyancy(temps: np.ndarray) -> np.ndarray:
    """Merge inverted layers to their mean until temperatures rise monotonically upward."""
    return np.asarray(isotonic_regression(np.asarray(temps, dtype=float), increasing=True))


def discharge_step(
    state: VesselState,
    draw_l: float,
    inlet_temp: float,
    ambient_temp: float,
    dt: float,
    *,
    loss_w_per_k_layer: float = _DEFAULT_VESSEL.loss_w_per_k_layer,
) -> VesselState:
    """Steps (a)-(c): draw, standby loss and buoyancy, without heating."""
    if dt <= 0:
        raise VesselStepError(f"dt must be > 0, got {dt}")
    if draw_l < 0:
        raise VesselStepError(f"draw_l must be >= 0, got {draw_l}")
    if draw_l > state.volume_l:
        raise VesselStepError(f"draw of {draw_l} L exceeds vessel volume {state.volume_l} L")
    if any(math.isnan(x) for x in (draw_l, inlet_temp, ambient_temp, dt)):
        raise VesselStepError("NaN input to vessel step")

    v = state.layer_volume_l
    temps = _plug_flow(state.layer_temps, v, draw_l, inlet_temp) if draw_l > 0 else state.layer_temps
    heat_capacity_j_per_k = v * RHO_KG_PER_L * CP_J_PER_KG_K
    decay = math.exp(-loss_w_per_k_layer * dt * 60.0 / heat_capacity_j_per_k)
    temps = ambient_temp + (temps - ambient_temp) * decay
    temps = resolve_buoyancy(temps)
    return VesselState(temps, state.volume_l, state.timestamp + int(round(dt)))


def _heated_layer_count(state: VesselState, heated_layers: int | None) -> int:
    """Bottom layers the condenser feeds; None means the lower third."""
    if heated_layers is None:
        return max(1, state.n_layers // 3)
    if not 1 <= heated_layers <= state.n_layers:
        raise VesselStepError(f"heated_layers must lie in [1, {state.n_layers}], got {heated_layers}")
    return int(heated_layers)


def apply_heat(
    state: VesselState,
    heat_input_wh: float,
    *,
    heated_layers: int | None = None,
    max_temp_c: float = _DEFAULT_VESSEL.max_temp_c,
) -> VesselState:
    """Step (d): spread heat evenly over the bottom layers, then resolve buoyancy."""
    if heat_input_wh < 0 or math.isnan(heat_input_wh):
        raise VesselStepError(f"heat_input_wh must be >= 0, got {heat_input_wh}")
    n_heated = _heated_layer_count(state, heated_layers)
    if heat_input_wh == 0:
        return state
    temps = state.layer_temps.copy()
    temps[:n_heated] += heat_input_wh / n_heated / (WH_PER_L_K * state.layer_volume_l)
    if np.any(temps > max_temp_c + 1e-9):
        raise VesselStepError(
            f"heat input of {heat_input_wh:.1f} Wh pushes a layer above {max_temp_c} °C"
        )
    return VesselState(resolve_buoyancy(temps), state.volume_l, state.timestamp)


def step_vessel(
    state: VesselState,
    draw_l: float,
    inlet_temp: float,
    heat_input_wh: float,
    ambient_temp: float,
    dt: float,
    *,
    loss_w_per_k_layer: float = _DEFAULT_VESSEL.loss_w_per_k_layer,
    heated_layers: int | None = None,
    max_temp_c: float = _DEFAULT_VESSEL.max_temp_c,
) -> VesselState:
    """One full period: draw, loss, buoyancy, heating."""
    after = discharge_step(
        state, draw_l, inlet_temp, ambient_temp, dt, loss_w_per_k_layer=loss_w_per_k_layer
    )
    return apply_heat(after, heat_input_wh, heated_layers=heated_layers, max_temp_c=max_temp_c)


def standby_loss_wh(
    state: VesselState,
    ambient_temp: float,
    dt: float,
    *,
    loss_w_per_k_layer: float = _DEFAULT_VESSEL.loss_w_per_k_layer,
) -> float:
    """Heat lost to the room over ``dt`` minutes by the layers of ``state``."""
    heat_capacity_j_per_k = state.layer_volume_l * RHO_KG_PER_L * CP_J_PER_KG_K
    decay = math.exp(-loss_w_per_k_layer * dt * 60.0 / heat_capacity_j_per_k)
    drop = (state.layer_temps - ambient_temp) * (1.0 - decay)
    return float(WH_PER_L_K * state.layer_volume_l * np.sum(drop))


def hot_water_volume(state: VesselState, threshold: float) -> float:
    """Liters held in layers at or above ``threshold``."""
    return float(np.count_nonzero(state.layer_temps >= threshold) * state.layer_volume_l)


def condenser_inlet_temp(state: VesselState, heated_layers: int | None = None) -> float:
    n_heated = _heated_layer_count(state, heated_layers)
    return float(state.layer_temps[:n_heated].mean())


def heat_pump_headroom_wh(
    state: VesselState, heated_layers: int | None = None, max_supply_c: float = 70.0
) -> float:
    """Heat that can still go into the bottom layers before the warmest one hits the limit."""
    n_heated = _heated_layer_count(state, heated_layers)
    warmest = float(state.layer_temps[:n_heated].max())
    return max(0.0, n_heated * WH_PER_L_K * state.layer_volume_l * (max_supply_c - warmest))


# ── Heat pump ──


class CopTable:
    """Piecewise-linear COP over (ambient temperature, inlet water temperature)."""

    def __init__(
        self,
        ambient_c: Sequence[float],
        inlet_c: Sequence[float],
        values: Sequence[Sequence[float]],
    ) -> None:
        self.ambient_c = np.asarray(ambient_c, dtype=float)
        self.inlet_c = np.asarray(inlet_c, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != (self.ambient_c.size, self.inlet_c.size):
            raise ValueError("COP values must be shaped [ambient x inlet]")
        if np.any(self.values < 1.0):
            raise ValueError("COP must be >= 1 over the table")
        self._interp = RegularGridInterpolator(
            (self.ambient_c, self.inlet_c), self.values, method="linear"
        )

    @classmethod
    def constant(cls, cop: float) -> CopTable:
        return cls((-50.0, 50.0), (0.0, 100.0), ((cop, cop), (cop, cop)))

    @classmethod
    def from_config(cls, config: HeatPumpConfig) -> CopTable:
        return cls(config.cop_ambient_c, config.cop_inlet_c, config.cop_values)

    def cop(self, ambient_temp: float, inlet_temp: float) -> tuple[float, bool]:
        """Interpolated COP and whether the query had to be clamped to the table."""
        a = min(max(ambient_temp, self.ambient_c[0]), self.ambient_c[-1])
        t = min(max(inlet_temp, self.inlet_c[0]), self.inlet_c[-1])
        clamped = (a, t) != (ambient_temp, inlet_temp)
        return float(self._interp((a, t))), clamped


@dataclass(frozen=True)
class HeatPumpSpec:
    rated_thermal_power: float
    cop_table: CopTable
    mode: Literal["idle", "reheat"] = "reheat"
    standby_power_w: float = 0.0

    def __post_init__(self) -> None:
        if self.rated_thermal_power <= 0:
            raise ValueError("rated_thermal_power must be > 0")

    @classmethod
    def from_config(cls, config: HeatPumpConfig) -> HeatPumpSpec:
        return cls(
            rated_thermal_power=config.rated_thermal_w,
            cop_table=CopTable.from_config(config),
            standby_power_w=config.standby_power_w,
        )


@dataclass(frozen=True)
class HeatPumpStep:
    thermal_wh: float
    electric_wh: float
    cop: float
    clamped: bool = False

    def scaled(self, thermal_wh: float) -> HeatPumpStep:
        """Same operating point, delivering only ``thermal_wh``."""
        return HeatPumpStep(thermal_wh, thermal_wh / self.cop, self.cop, self.clamped)


def heat_pump_step(
    spec: HeatPumpSpec, inlet_temp: float, ambient_temp: float, dt: float
) -> HeatPumpStep:
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if spec.mode == "idle":
        return HeatPumpStep(0.0, spec.standby_power_w * dt / 60.0, 0.0)
    cop, clamped = spec.cop_table.cop(ambient_temp, inlet_temp)
    if clamped:
        logger.warning(
            "COP query (ambient=%.1f, inlet=%.1f) outside table, clamped", ambient_temp, inlet_temp
        )
    thermal = spec.rated_thermal_power * dt / 60.0
    return HeatPumpStep(thermal, thermal / cop, cop, clamped)


# ── Sensor ──


@dataclass(frozen=True)
class Observation:
    midpoint_temp: float
    flow_l: float
    heater_energy_wh: float
    ambient_temp: float
    timestamp: int

    def __post_init__(self) -> None:
        if self.flow_l < 0:
            raise ValueError("flow_l must be >= 0")
        if self.heater_energy_wh < 0:
            raise ValueError("heater_energy_wh must be >= 0")


def observe(
    state: VesselState,
    flow_l: float,
    heater_electric_wh: float,
    ambient_temp: float,
    rng_seed: int | Sequence[int] | None,
    *,
    noise_std: float = _DEFAULT_VESSEL.sensor_noise_std,
) -> Observation:
    """Project the hidden state onto the mid-point sensor reading."""
    reading = state.midpoint_temp
    if noise_std > 0:
        reading += float(np.random.default_rng(rng_seed).normal(0.0, noise_std))
    lo, hi = SENSOR_RANGE_C
    return Observation(
        midpoint_temp=min(max(reading, lo), hi),
        flow_l=float(flow_l),
        heater_energy_wh=float(heater_electric_wh),
        ambient_temp=float(ambient_temp),
        timestamp=state.timestamp,
    )


# ── One simulated house ──


@dataclass(frozen=True)
class PeriodOutcome:
    heat_pump: HeatPumpStep
    segments: list[OutflowSegment] = field(default_factory=list)

    @property
    def min_outflow_c(self) -> float:
        return min((s.temp_c for s in self.segments), default=math.nan)


class HouseSimulator:
    """Vessel + heat pump of one house, advanced one control period at a time."""

    def __init__(
        self,
        vessel: VesselConfig,
        heat_pump: HeatPumpConfig,
        *,
        timestamp: int = 0,
        period_min: int = 15,
    ) -> None:
        self.vessel = vessel
        self.spec = HeatPumpSpec.from_config(heat_pump)
        self.max_supply_c = min(heat_pump.max_supply_c, vessel.max_temp_c)
        self.period_min = period_min
        self.state = VesselState.uniform(
            vessel.initial_temp_c, vessel.n_layers, vessel.volume_l, timestamp
        )

    def advance(self, reheat: bool, draw_l: float, ambient_c: float) -> PeriodOutcome:
        segments = outflow_segments(self.state, draw_l)
        after = discharge_step(
            self.state,
            draw_l,
            self.vessel.inlet_temp_c,
            self.vessel.room_temp_c,
            self.period_min,
            loss_w_per_k_layer=self.vessel.loss_w_per_k_layer,
        )
        if reheat:
            hp = heat_pump_step(
                self.spec,
                condenser_inlet_temp(after, self.vessel.heated_layers),
                ambient_c,
                self.period_min,
            )
            headroom = heat_pump_headroom_wh(after, self.vessel.heated_layers, self.max_supply_c)
            if headroom < hp.thermal_wh:
                hp = hp.scaled(headroom)
        else:
            hp = HeatPumpStep(0.0, self.spec.standby_power_w * self.period_min / 60.0, 0.0)
        self.state = apply_heat(
            after,
            hp.thermal_wh,
            heated_layers=self.vessel.heated_layers,
            max_temp_c=self.vessel.max_temp_c,
        )
        return PeriodOutcome(hp, segments)
