"""Learned charging behaviour: heat-pump electric energy and reheat duration.

The heat pump is fitted as a piecewise-linear function of ambient and inlet
(mid-point) temperature, using hinge features at configured breakpoints. The
reheat duration model regresses completed cycle lengths on the temperature
rise and the state the cycle started from.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from dhwlearn.config import EnsembleConfig
from dhwlearn.dynamics.experience import Experience

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
# Upper bound on a predicted charge, one day at 15-minute periods.
MAX_REHEAT_PERIODS = 96


def _hinge_basis(
    ambient_c, midpoint_c, ambient_breaks: Sequence[float], midpoint_breaks: Sequence[float]
) -> np.ndarray:
    a = np.atleast_1d(np.asarray(ambient_c, dtype=float))
    m = np.atleast_1d(np.asarray(midpoint_c, dtype=float))
    columns = [np.ones_like(a), a]
    columns += [np.maximum(0.0, a - b) for b in ambient_breaks]
    columns.append(m)
    columns += [np.maximum(0.0, m - b) for b in midpoint_breaks]
    return np.column_stack(columns)


@dataclass(frozen=True)
class HeatPumpFit:
    """Electric Wh per charging period as a function of (ambient, mid-point)."""

    coef: np.ndarray
    ambient_breaks: tuple[float, ...]
    midpoint_breaks: tuple[float, ...]
    mae_wh: float
    mape: float
    n_samples: int
    rank_deficient: bool = False
    mse: float = 0.0

    def predict(self, ambient_c, midpoint_c) -> np.ndarray:
        basis = _hinge_basis(ambient_c, midpoint_c, self.ambient_breaks, self.midpoint_breaks)
        return np.maximum(basis @ self.coef, 0.0)

    def mean_squared_error(self, experiences: Sequence[Experience]) -> float:
        rows = [e for e in experiences if e.action.reheat == 1 and e.duration_periods == 1]
        if not rows:
            return 0.0
        pred = self.predict([e.features.ambient_c for e in rows], [e.features.midpoint_c for e in rows])
        return float(np.mean((pred - np.array([e.electric_wh for e in rows])) ** 2))

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "heat_pump",
            "coef": self.coef.tolist(),
            "ambient_breaks": list(self.ambient_breaks),
            "midpoint_breaks": list(self.midpoint_breaks),
            "mae_wh": self.mae_wh,
            "mape": self.mape,
            "mse": self.mse,
            "n_samples": self.n_samples,
            "rank_deficient": self.rank_deficient,
        }

    @classmethod
    def from_json_dict(cls, d: dict[str, Any]) -> HeatPumpFit:
        if d.get("kind") != "heat_pump" or d.get("format_version") != FORMAT_VERSION:
            raise ValueError("Unsupported heat pump checkpoint")
        return cls(
            coef=np.asarray(d["coef"], dtype=float),
            ambient_breaks=tuple(d["ambient_breaks"]),
            midpoint_breaks=tuple(d["midpoint_breaks"]),
            mae_wh=float(d["mae_wh"]),
            mape=float(d["mape"]),
            n_samples=int(d["n_samples"]),
            rank_deficient=bool(d["rank_deficient"]),
            mse=float(d.get("mse", 0.0)),
        )


def fit_heat_pump_arrays(
    ambient_c: np.ndarray,
    midpoint_c: np.ndarray,
    electric_wh: np.ndarray,
    config: EnsembleConfig,
) -> HeatPumpFit:
    """Least-squares hinge fit; falls back to the mean when the design is rank deficient."""
    a = np.asarray(ambient_c, dtype=float)
    m = np.asarray(midpoint_c, dtype=float)
    y = np.asarray(electric_wh, dtype=float)
    if len(y) < config.min_reheat_experiences:
        raise ValueError(
            f"need >= {config.min_reheat_experiences} reheat experiences, got {len(y)}"
        )
    basis = _hinge_basis(a, m, config.hp_ambient_breakpoints, config.hp_midpoint_breakpoints)
    coef, _, rank, _ = np.linalg.lstsq(basis, y, rcond=None)
    rank_deficient = rank < basis.shape[1]
    if rank_deficient:
        logger.warning(
            "Heat pump data spans too few operating points (rank %d of %d); fitting a constant",
            rank,
            basis.shape[1],
        )
        coef = np.zeros(basis.shape[1])
        coef[0] = y.mean()
    residual = basis @ coef - y
    positive = np.abs(y) > 0
    mape = float(np.mean(np.abs(residual[positive]) / np.abs(y[positive]))) if positive.any() else 0.0
    fit = HeatPumpFit(
        coef=coef,
        ambient_breaks=tuple(config.hp_ambient_breakpoints),
        midpoint_breaks=tuple(config.hp_midpoint_breakpoints),
        mae_wh=float(np.mean(np.abs(residual))),
        mape=mape,
        n_samples=len(y),
        rank_deficient=bool(rank_deficient),
        mse=float(np.mean(residual**2)),
    )
    logger.info("Heat pump fit on %d periods: MAE %.1f Wh, MAPE %.2f %%", len(y), fit.mae_wh, 100 * mape)
    return fit


def fit_heat_pump(experiences: Sequence[Experience], config: EnsembleConfig) -> HeatPumpFit:
    """Fit on single-period charging experiences."""
    rows = [e for e in experiences if e.action.reheat == 1 and e.duration_periods == 1]
    return fit_heat_pump_arrays(
        np.array([e.features.ambient_c for e in rows]),
        np.array([e.features.midpoint_c for e in rows]),
        np.array([e.electric_wh for e in rows]),
        config,
    )


# ── Reheat duration ──


@dataclass(frozen=True)
class CycleRecord:
    """One completed reheat."""

    start_midpoint_c: float
    target_c: float
    draw_since_reheat_l: float
    hours_since_reheat: float
    ambient_c: float
    periods: int
    electric_wh: float


@dataclass(frozen=True)
class ReheatModel:
    """Charge duration in periods; ``coef`` empty means the rise-rate prior."""

    prior_rise_c_per_period: float
    coef: tuple[float, ...] = field(default_factory=tuple)
    n_cycles: int = 0

    def _design(self, start_midpoint_c, target_c, draw_since_reheat_l, hours_since_reheat, ambient_c):
        rise = np.maximum(np.asarray(target_c, float) - np.asarray(start_midpoint_c, float), 0.0)
        if len(self.coef) <= 1:
            return np.atleast_2d(rise).reshape(-1, 1)
        return np.column_stack(
            np.broadcast_arrays(
                np.ones_like(rise),
                rise,
                np.asarray(draw_since_reheat_l, float),
                np.asarray(hours_since_reheat, float),
                np.asarray(ambient_c, float),
            )
        )

    def predict_periods(
        self, start_midpoint_c, target_c, draw_since_reheat_l=0.0, hours_since_reheat=0.0, ambient_c=10.0
    ) -> np.ndarray:
        """Whole periods needed (>= 1) for the mid-point to reach ``target_c``."""
        design = self._design(start_midpoint_c, target_c, draw_since_reheat_l, hours_since_reheat, ambient_c)
        if not self.coef:
            raw = design[:, 0] / self.prior_rise_c_per_period
        else:
            raw = design @ np.asarray(self.coef)
        return np.clip(np.ceil(raw - 1e-9), 1, MAX_REHEAT_PERIODS).astype(int)

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "reheat",
            "prior_rise_c_per_period": self.prior_rise_c_per_period,
            "coef": list(self.coef),
            "n_cycles": self.n_cycles,
        }

    @classmethod
    def from_json_dict(cls, d: dict[str, Any]) -> ReheatModel:
        if d.get("kind") != "reheat" or d.get("format_version") != FORMAT_VERSION:
            raise ValueError("Unsupported reheat checkpoint")
        return cls(float(d["prior_rise_c_per_period"]), tuple(d["coef"]), int(d["n_cycles"]))


def fit_reheat_cycles(cycles: Sequence[CycleRecord], config: EnsembleConfig) -> ReheatModel:
    prior = ReheatModel(config.prior_rise_c_per_period, n_cycles=len(cycles))
    if len(cycles) < config.min_cycles:
        return prior
    rise = np.array([max(c.target_c - c.start_midpoint_c, 0.0) for c in cycles])
    periods = np.array([c.periods for c in cycles], dtype=float)
    full = np.column_stack(
        (
            np.ones_like(rise),
            rise,
            [c.draw_since_reheat_l for c in cycles],
            [c.hours_since_reheat for c in cycles],
            [c.ambient_c for c in cycles],
        )
    )
    if len(cycles) > full.shape[1]:
        coef, _, rank, _ = np.linalg.lstsq(full, periods, rcond=None)
        if rank == full.shape[1]:
            return ReheatModel(config.prior_rise_c_per_period, tuple(float(c) for c in coef), len(cycles))
    # Too few or collinear cycles: periods proportional to the rise.
    denom = float(rise @ rise)
    if denom <= 0:
        return prior
    slope = float(rise @ periods) / denom
    return ReheatModel(config.prior_rise_c_per_period, (slope,), len(cycles))
