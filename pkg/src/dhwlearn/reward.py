"""Composite reward stream and horizon return.

The per-period reward combines lost comfort, energy use and exploration:

    r_t = -A * c_t + B * o_t / 1000 + C * e_t

with c_t in liters below the comfort threshold, o_t the negative electric
energy in Wh (B is expressed per kWh) and e_t the information gain in bits.
A is finite but large enough that any comfort loss outweighs the energy
of a plausible episode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

COMFORT_THRESHOLD_C = 45.0


@dataclass(frozen=True)
class RewardWeights:
    """Weights A (comfort, per liter), B (efficiency, per kWh), C (exploration, per bit)."""

    comfort: float = 1e6
    efficiency: float = 1.0
    exploration: float = 0.1

    def __post_init__(self) -> None:
        for name in ("comfort", "efficiency", "exploration"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"reward weight '{name}' must be finite and >= 0, got {value}")

    def dominates(self, max_episode_kwh: float) -> bool:
        """True if one liter of lost comfort costs more than the whole episode's energy."""
        return self.comfort > self.efficiency * max_episode_kwh


@dataclass(frozen=True)
class StepReward:
    c_t: float
    o_t: float
    e_t: float
    r_t: float


def comfort_loss(
    segments: Iterable[tuple[float, float]],
    threshold: float = COMFORT_THRESHOLD_C,
) -> float:
    """Liters delivered below ``threshold``.

    ``segments`` are (volume_l, outflow_temp_c) pieces of water leaving the
    vessel, e.g. from ``simcore.outflow_segments``.
    """
    return float(sum(volume for volume, temp in segments if temp < threshold))


def combine(c_t, o_t, e_t, weights: RewardWeights):
    """Per-period reward on scalars or numpy arrays."""
    return -weights.comfort * c_t + weights.efficiency * (o_t / 1000.0) + weights.exploration * e_t


def step_reward(c_t: float, o_t: float, e_t: float, weights: RewardWeights) -> StepReward:
    if c_t < 0:
        raise ValueError(f"c_t must be >= 0, got {c_t}")
    if e_t < 0:
        raise ValueError(f"e_t must be >= 0, got {e_t}")
    return StepReward(c_t=c_t, o_t=o_t, e_t=e_t, r_t=float(combine(c_t, o_t, e_t, weights)))


def rollout_rewards(
    comfort_l: np.ndarray,
    electric_wh: np.ndarray,
    info_bits: np.ndarray,
    weights: RewardWeights,
) -> np.ndarray:
    """Vectorised step rewards for planner batches (o_t = -electric_wh)."""
    return combine(comfort_l, -electric_wh, info_bits, weights)


def episode_return(step_rewards: Sequence[float | StepReward], T: int) -> float:
    """Undiscounted mean reward over a horizon of T periods."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if len(step_rewards) != T:
        raise ValueError(f"expected {T} step rewards, got {len(step_rewards)}")
    values = [r.r_t if isinstance(r, StepReward) else float(r) for r in step_rewards]
    # fsum is exactly rounded, so the mean does not depend on reward order.
    return math.fsum(values) / T
