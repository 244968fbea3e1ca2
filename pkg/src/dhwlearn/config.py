"""dhwlearn configuration.

Built-in defaults, optionally overridden by a JSON config file and then by
environment variables (with .env support via python-dotenv).
All config is immutable after construction.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Literal

from dotenv import load_dotenv

from dhwlearn.reward import RewardWeights

DEMAND_CLASSES: dict[str, float] = {"low": 80.0, "medium": 120.0, "high": 200.0}


def _safe_int(env_var: str, default: int) -> int:
    """Read an int from env, falling back to default on parse error."""
    try:
        return int(os.getenv(env_var, str(default)))
    except (ValueError, TypeError):
        return default


def _strictly_increasing(values: tuple[float, ...]) -> bool:
    return all(b > a for a, b in zip(values, values[1:]))


def _default_cop_values() -> tuple[tuple[float, ...], ...]:
    # Rows follow cop_ambient_c, columns follow cop_inlet_c.
    ambient = (-10.0, 0.0, 7.0, 14.0, 25.0)
    inlet = (10.0, 30.0, 45.0, 60.0, 70.0)
    return tuple(
        tuple(round(3.0 + 0.057 * a - 0.035 * (t - 40.0), 3) for t in inlet) for a in ambient
    )


@dataclass(frozen=True)
class VesselConfig:
    volume_l: float = 200.0
    n_layers: int = 10
    inlet_temp_c: float = 10.0
    max_temp_c: float = 70.0
    room_temp_c: float = 18.0
    initial_temp_c: float = 52.5
    # Standby loss of a full 50 °C tank in a 20 °C room.
    standby_loss_kwh_per_day: float = 1.5
    sensor_noise_std: float = 0.25
    hw_threshold_c: float = 45.0

    def __post_init__(self) -> None:
        if self.n_layers < 2:
            raise ValueError("vessel.n_layers must be >= 2")
        if self.volume_l <= 0:
            raise ValueError("vessel.volume_l must be > 0")
        if not (self.inlet_temp_c < self.max_temp_c):
            raise ValueError("vessel.inlet_temp_c must be below vessel.max_temp_c")
        if not (self.inlet_temp_c <= self.initial_temp_c <= self.max_temp_c):
            raise ValueError("vessel.initial_temp_c must lie in [inlet_temp_c, max_temp_c]")
        if self.standby_loss_kwh_per_day < 0:
            raise ValueError("vessel.standby_loss_kwh_per_day must be >= 0")
        if self.sensor_noise_std < 0:
            raise ValueError("vessel.sensor_noise_std must be >= 0")

    @property
    def layer_volume_l(self) -> float:
        return self.volume_l / self.n_layers

    @property
    def heated_layers(self) -> int:
        """Bottom third of the vessel holds the condenser coil."""
        return max(1, self.n_layers // 3)

    @property
    def loss_w_per_k_layer(self) -> float:
        total_ua = self.standby_loss_kwh_per_day * 1000.0 / 24.0 / 30.0
        return total_ua / self.n_layers


@dataclass(frozen=True)
class HeatPumpConfig:
    rated_thermal_w: float = 2000.0
    cop_ambient_c: tuple[float, ...] = (-10.0, 0.0, 7.0, 14.0, 25.0)
    cop_inlet_c: tuple[float, ...] = (10.0, 30.0, 45.0, 60.0, 70.0)
    cop_values: tuple[tuple[float, ...], ...] = field(default_factory=_default_cop_values)
    standby_power_w: float = 0.0
    max_supply_c: float = 70.0

    def __post_init__(self) -> None:
        if self.rated_thermal_w <= 0:
            raise ValueError("heat_pump.rated_thermal_w must be > 0")
        if len(self.cop_ambient_c) < 2 or not _strictly_increasing(self.cop_ambient_c):
            raise ValueError("heat_pump.cop_ambient_c needs >= 2 strictly increasing points")
        if len(self.cop_inlet_c) < 2 or not _strictly_increasing(self.cop_inlet_c):
            raise ValueError("heat_pump.cop_inlet_c needs >= 2 strictly increasing points")
        if len(self.cop_values) != len(self.cop_ambient_c) or any(
            len(row) != len(self.cop_inlet_c) for row in self.cop_values
        ):
            raise ValueError("heat_pump.cop_values must be shaped [ambient x inlet]")
        if any(v < 1.0 for row in self.cop_values for v in row):
            raise ValueError("heat_pump.cop_values must all be >= 1")
        if self.standby_power_w < 0:
            raise ValueError("heat_pump.standby_power_w must be >= 0")


@dataclass(frozen=True)
class OccupantConfig:
    demand_class: Literal["low", "medium", "high"] = "medium"
    amplitude: float = 1.0  # 0 = no demand
    daily_jitter: float = 0.15
    min_factor: float = 0.5
    max_factor: float = 1.5
    events_per_day: float = 6.0
    morning_peak_h: float = 7.0
    morning_std_h: float = 1.0
    evening_peak_h: float = 19.5
    evening_std_h: float = 1.5
    morning_share: float = 0.45
    weekend_shift_h: float = 1.5
    flow_l_per_min: float = 8.0
    history_days: int = 28

    def __post_init__(self) -> None:
        if self.demand_class not in DEMAND_CLASSES:
            raise ValueError(
                f"Invalid occupant.demand_class='{self.demand_class}'. "
                f"Expected: {' | '.join(DEMAND_CLASSES)}"
            )
        if self.amplitude < 0:
            raise ValueError("occupant.amplitude must be >= 0")
        if not (0 < self.min_factor <= 1.0 <= self.max_factor):
            raise ValueError("occupant factors must satisfy 0 < min_factor <= 1 <= max_factor")
        if not (0.0 <= self.morning_share <= 1.0):
            raise ValueError("occupant.morning_share must be between 0 and 1")
        if self.events_per_day <= 0 or self.flow_l_per_min <= 0:
            raise ValueError("occupant.events_per_day and flow_l_per_min must be > 0")
        if self.history_days < 1:
            raise ValueError("occupant.history_days must be >= 1")

    @property
    def daily_mean_l(self) -> float:
        return DEMAND_CLASSES[self.demand_class] * self.amplitude


@dataclass(frozen=True)
class AmbientConfig:
    source: Literal["synthetic", "file"] = "synthetic"
    trace_path: str = ""
    mean_c: float = 10.0
    daily_amplitude_c: float = 5.0
    seasonal_amplitude_c: float = 6.0
    coldest_hour: float = 4.0
    weather_noise_std: float = 1.0
    weather_noise_phi: float = 0.99
    forecast_error_std: float = 0.5
    forecast_error_phi: float = 0.9

    def __post_init__(self) -> None:
        if self.source not in {"synthetic", "file"}:
            raise ValueError(
                f"Invalid ambient.source='{self.source}'. Expected: synthetic | file"
            )
        if self.source == "file" and not self.trace_path:
            raise ValueError("ambient.trace_path is required when ambient.source=file")
        for name in ("weather_noise_phi", "forecast_error_phi"):
            if not (0.0 <= getattr(self, name) < 1.0):
                raise ValueError(f"ambient.{name} must be in [0, 1)")
        if self.weather_noise_std < 0 or self.forecast_error_std < 0:
            raise ValueError("ambient noise std values must be >= 0")


@dataclass(frozen=True)
class EnsembleConfig:
    n_members: int = 10
    hidden_layers: tuple[int, ...] = (32, 32)
    max_epochs: int = 300
    learning_rate: float = 1e-3
    validation_fraction: float = 0.1
    patience: int = 10
    tol: float = 1e-5
    min_experiences: int = 50
    max_train_samples: int = 20000
    hp_ambient_breakpoints: tuple[float, ...] = (0.0, 10.0)
    hp_midpoint_breakpoints: tuple[float, ...] = (40.0, 50.0)
    min_reheat_experiences: int = 20
    min_cycles: int = 3
    prior_rise_c_per_period: float = 2.0
    hw_knee_band_c: float = 10.0

    def __post_init__(self) -> None:
        if self.n_members < 2:
            raise ValueError("ensemble.n_members must be >= 2")
        if not self.hidden_layers or any(h < 1 for h in self.hidden_layers):
            raise ValueError("ensemble.hidden_layers must be non-empty positive sizes")
        if self.max_epochs < 1:
            raise ValueError("ensemble.max_epochs must be >= 1")
        if not (0.0 < self.validation_fraction < 0.5):
            raise ValueError("ensemble.validation_fraction must be in (0, 0.5)")
        if self.min_experiences < 2:
            raise ValueError("ensemble.min_experiences must be >= 2")
        if self.prior_rise_c_per_period <= 0:
            raise ValueError("ensemble.prior_rise_c_per_period must be > 0")
        if self.hw_knee_band_c <= 0:
            raise ValueError("ensemble.hw_knee_band_c must be > 0")


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 96
    targets: tuple[float, ...] = (47.5, 50.0, 52.5, 55.0)
    default_target_c: float = 52.5
    default_delta_c: float = 5.0
    enumeration_cap: int = 2**20
    exact_plan_limit: int = 4096
    budget: int = 600
    beam_width: int = 4
    max_reheats: int = 3
    start_stride: int = 1
    risk_k: float = 1.0
    hw_tolerance_l: float = 1e-6

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("planner.horizon must be >= 1")
        if not self.targets or not _strictly_increasing(self.targets):
            raise ValueError("planner.targets must be a non-empty increasing grid")
        if self.default_delta_c <= 0:
            raise ValueError("planner.default_delta_c must be > 0")
        if self.budget < 1:
            raise ValueError("planner.budget must be >= 1")
        if self.beam_width < 1 or self.max_reheats < 1 or self.start_stride < 1:
            raise ValueError("planner.beam_width, max_reheats and start_stride must be >= 1")
        if self.risk_k < 0:
            raise ValueError("planner.risk_k must be >= 0")


@dataclass(frozen=True)
class AgentConfig:
    # None = 10 % of the first measured value.
    transition_threshold: float | None = None
    reward_threshold: float | None = None
    threshold_fraction: float = 0.1
    n_probes: int = 64
    reserve_l: float = 30.0
    hard_floor_c: float = 42.0
    legionella_period_days: int = 14
    legionella_target_c: float = 65.0
    warmup_days: int = 28
    min_train_experiences: int = 96
    retrain_growth_factor: float = 2.0
    max_charge_periods: int = 32
    seed: int = 0
    weights: RewardWeights = field(default_factory=RewardWeights)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)

    def __post_init__(self) -> None:
        for name in ("transition_threshold", "reward_threshold"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ValueError(f"agent.{name} must be >= 0")
        if self.threshold_fraction < 0:
            raise ValueError("agent.threshold_fraction must be >= 0")
        if self.n_probes < 1:
            raise ValueError("agent.n_probes must be >= 1")
        if self.reserve_l < 0:
            raise ValueError("agent.reserve_l must be >= 0")
        if self.legionella_period_days < 1:
            raise ValueError("agent.legionella_period_days must be >= 1")
        if self.warmup_days < 0:
            raise ValueError("agent.warmup_days must be >= 0")
        if self.retrain_growth_factor != 0 and self.retrain_growth_factor <= 1:
            raise ValueError("agent.retrain_growth_factor must be 0 (off) or > 1")
        if self.max_charge_periods < 1:
            raise ValueError("agent.max_charge_periods must be >= 1")


@dataclass(frozen=True)
class HarnessConfig:
    n_default_houses: int = 10
    n_efficiency_houses: int = 10
    demand_classes: tuple[str, ...] = ("medium",)
    tap_l_per_period: float = 10.0
    intermittent_hours: float = 6.0
    intermittent_l_per_hour: float = 8.0

    def __post_init__(self) -> None:
        if self.n_default_houses < 0 or self.n_efficiency_houses < 0:
            raise ValueError("harness house counts must be >= 0")
        if self.n_default_houses + self.n_efficiency_houses < 1:
            raise ValueError("harness needs at least one house")
        for cls in self.demand_classes:
            if cls not in DEMAND_CLASSES:
                raise ValueError(f"Invalid harness.demand_classes entry '{cls}'")
        if not self.demand_classes:
            raise ValueError("harness.demand_classes must not be empty")
        if self.tap_l_per_period <= 0:
            raise ValueError("harness.tap_l_per_period must be > 0")


@dataclass(frozen=True)
class WorkbenchConfig:
    """Immutable root configuration."""

    seed: int = 0
    days: int = 50
    period_min: int = 15
    start: str = "2017-01-02T00:00:00+00:00"
    out_dir: Path = field(default_factory=lambda: Path("./dhw_runs"))
    workers: int = 1
    log_level: str = "INFO"
    vessel: VesselConfig = field(default_factory=VesselConfig)
    heat_pump: HeatPumpConfig = field(default_factory=HeatPumpConfig)
    occupant: OccupantConfig = field(default_factory=OccupantConfig)
    ambient: AmbientConfig = field(default_factory=AmbientConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    harness: HarnessConfig = field(default_factory=HarnessConfig)

    def __post_init__(self) -> None:
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        object.__setattr__(self, "log_level", (self.log_level or "INFO").upper())
        if self.days < 1:
            raise ValueError("days must be >= 1")
        if self.period_min < 1 or 1440 % self.period_min:
            raise ValueError("period_min must divide a day (e.g. 5, 10, 15)")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        try:
            self.start_minute  # noqa: B018
        except ValueError as exc:
            raise ValueError(f"Invalid start='{self.start}': {exc}") from exc

    @property
    def periods_per_day(self) -> int:
        return 1440 // self.period_min

    @property
    def start_minute(self) -> int:
        """Simulation start as whole minutes since the Unix epoch (UTC)."""
        dt = datetime.fromisoformat(self.start.replace("Z", "+00:00"))
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        return int(dt.timestamp() // 60)

    @classmethod
    def from_file(cls, path: str | Path) -> WorkbenchConfig:
        """Load a JSON config file on top of the built-in defaults."""
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise ValueError(f"Config file {path} must contain a JSON object")
        return _build(cls, raw, "")

    @classmethod
    def from_env(
        cls,
        dotenv_path: str | Path | None = None,
        config_path: str | Path | None = None,
    ) -> WorkbenchConfig:
        """Defaults <- config file (DHW_CONFIG or argument) <- environment."""
        if dotenv_path:
            load_dotenv(dotenv_path)
        else:
            load_dotenv()

        path = config_path or os.getenv("DHW_CONFIG", "")
        base = cls.from_file(path) if path else cls()
        return replace(
            base,
            seed=_safe_int("DHW_SEED", base.seed),
            days=_safe_int("DHW_DAYS", base.days),
            workers=_safe_int("DHW_WORKERS", base.workers),
            out_dir=Path(os.getenv("DHW_OUT_DIR", str(base.out_dir))),
            log_level=os.getenv("DHW_LOG_LEVEL", base.log_level),
        )

    def to_json_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["out_dir"] = str(self.out_dir)
        return d

    def config_hash(self) -> str:
        """SHA-256 of the physics/agent settings (output location excluded)."""
        d = self.to_json_dict()
        for volatile in ("out_dir", "workers", "log_level"):
            d.pop(volatile)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _build(cls: type, data: dict[str, Any], prefix: str) -> Any:
    """Construct a config dataclass from nested dicts, rejecting unknown keys."""
    defaults = cls()
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"Unknown config key(s): {', '.join(prefix + k for k in unknown)}")

    kwargs: dict[str, Any] = {}
    for name, value in data.items():
        current = getattr(defaults, name)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise ValueError(f"Config key '{prefix}{name}' must be an object")
            kwargs[name] = _build(type(current), value, f"{prefix}{name}.")
        elif isinstance(current, tuple):
            kwargs[name] = _to_tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def _to_tuple(value: Any) -> Any:
    if isinstance(value, (list, tuple)):
        return tuple(_to_tuple(v) for v in value)
    return value
