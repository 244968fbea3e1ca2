"""Policy search over the learned dynamics.

The baseline is the hysteresis thermostat. The optimiser maximises the mean
predicted reward over the horizon subject to never holding less predicted hot
water than the baseline would (wherever the baseline holds any). Short
horizons are solved exactly by enumeration; long ones by a staged beam search
over reheat start times and targets. The baseline itself is always the first
candidate, so the search can never return something it predicts to be worse.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from dhwlearn.config import PlannerConfig
from dhwlearn.dynamics.experience import Action, StateFeatures
from dhwlearn.dynamics.rollout import LearnedDynamics, Trajectory, rollout
from dhwlearn.forecastio.base import AmbientForecast
from dhwlearn.occupant import DrawForecast
from dhwlearn.reward import RewardWeights, episode_return, rollout_rewards
from dhwlearn.simcore import Observation

logger = logging.getLogger(__name__)


class PolicySpaceTooLarge(ValueError):
    """Exhaustive enumeration requested beyond the configured cap."""


@dataclass(frozen=True)
class PolicyMatrix:
    """[T x 2] plan: per period (reheat on/off, target °C); idle periods carry target 0."""

    reheat: tuple[int, ...]
    target: tuple[float, ...]

    def __post_init__(self) -> None:
        reheat = tuple(int(r) for r in self.reheat)
        if len(reheat) != len(self.target):
            raise ValueError("PolicyMatrix reheat and target lengths differ")
        if any(r not in (0, 1) for r in reheat):
            raise ValueError("PolicyMatrix reheat entries must be 0 or 1")
        target = tuple(float(g) if r else 0.0 for r, g in zip(reheat, self.target))
        object.__setattr__(self, "reheat", reheat)
        object.__setattr__(self, "target", target)

    @property
    def T(self) -> int:
        return len(self.reheat)

    @classmethod
    def idle(cls, T: int) -> PolicyMatrix:
        return cls((0,) * T, (0.0,) * T)

    def as_array(self) -> np.ndarray:
        return np.column_stack((self.reheat, self.target)) if self.T else np.empty((0, 2))

    def first_action(self, default_target_c: float) -> Action:
        if self.T == 0 or not self.reheat[0]:
            return Action(0, default_target_c)
        return Action(1, self.target[0])


@dataclass(frozen=True)
class PlanResult:
    policy: PolicyMatrix
    predicted_return: float
    predicted_hw_trajectory: np.ndarray
    feasible: bool
    fallback: str | None = None
    default_return: float = float("nan")
    evaluated: int = 0
    predicted_midpoint: np.ndarray | None = None


@dataclass(frozen=True)
class CandidateBatch:
    reheat: np.ndarray
    target: np.ndarray
    returns: np.ndarray
    hot_water_l: np.ndarray
    feasible: np.ndarray
    trajectory: Trajectory


# ── Baseline and safety ──


def default_policy(sensor_temp: float, T_tg: float, delta: float, prev_mode: int) -> int:
    """Hysteresis thermostat: on below T_tg - delta, off at T_tg, otherwise unchanged."""
    if delta <= 0:
        raise ValueError(f"delta must be > 0, got {delta}")
    if sensor_temp < T_tg - delta:
        return 1
    if sensor_temp >= T_tg:
        return 0
    return 1 if prev_mode else 0


def backup_controller(
    observation: Observation, hw_estimate_l: float, reserve_l: float, hard_floor_c: float = 42.0
) -> int:
    """1 forces a reheat regardless of the plan."""
    if reserve_l < 0:
        raise ValueError(f"reserve_l must be >= 0, got {reserve_l}")
    return int(hw_estimate_l < reserve_l or observation.midpoint_temp < hard_floor_c)


# ── Enumeration ──


def _options(targets_grid: Sequence[float]) -> list[tuple[int, float]]:
    return [(0, 0.0)] + [(1, float(g)) for g in targets_grid]


def policy_space_size(T: int, targets_grid: Sequence[float]) -> int:
    return (1 + len(targets_grid)) ** T


def enumerate_policies(
    T: int, targets_grid: Sequence[float], cap: int = 2**20
) -> Iterator[PolicyMatrix]:
    """Every distinct policy of length T, idle-first lexicographic order."""
    if T < 0:
        raise ValueError(f"T must be >= 0, got {T}")
    size = policy_space_size(T, targets_grid)
    if size > cap:
        raise PolicySpaceTooLarge(
            f"(1 + {len(targets_grid)})^{T} = {size} policies exceeds the cap of {cap}; "
            "use heuristic_search"
        )
    for combo in itertools.product(_options(targets_grid), repeat=T):
        yield PolicyMatrix(tuple(r for r, _ in combo), tuple(g for _, g in combo))


def _stack(policies: Sequence[PolicyMatrix], T: int) -> tuple[np.ndarray, np.ndarray]:
    if not policies:
        return np.zeros((0, T), dtype=int), np.zeros((0, T))
    return (
        np.array([p.reheat for p in policies], dtype=int).reshape(len(policies), T),
        np.array([p.target for p in policies], dtype=float).reshape(len(policies), T),
    )


# ── Evaluation ──


def _forecast_arrays(
    draw_forecast: DrawForecast, ambient_forecast: AmbientForecast | np.ndarray, T: int, risk_k: float
) -> tuple[np.ndarray, np.ndarray]:
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    ambient = np.asarray(
        ambient_forecast.temps if isinstance(ambient_forecast, AmbientForecast) else ambient_forecast,
        dtype=float,
    )
    if draw_forecast.horizon < T or ambient.size < T:
        raise ValueError(
            f"forecasts cover {draw_forecast.horizon} / {ambient.size} periods, planning needs {T}"
        )
    return draw_forecast.risk_adjusted(risk_k)[:T], ambient[:T]


def _returns(trajectory: Trajectory, weights: RewardWeights) -> np.ndarray:
    rewards = rollout_rewards(trajectory.comfort_l, trajectory.electric_wh, trajectory.info_bits, weights)
    T = rewards.shape[1]
    return np.array([episode_return(row, T) for row in rewards])


def _feasible(hot_water: np.ndarray, default_hw: np.ndarray, tolerance: float) -> np.ndarray:
    return np.all((default_hw <= 0) | (hot_water >= default_hw - tolerance), axis=1)


def evaluate_candidates(
    model: LearnedDynamics,
    initial: StateFeatures,
    reheat: np.ndarray,
    target: np.ndarray,
    draws_l: np.ndarray,
    ambient_c: np.ndarray,
    weights: RewardWeights,
    default_hw: np.ndarray,
    tolerance: float = 1e-6,
) -> CandidateBatch:
    trajectory = rollout(model, initial, (reheat, target), draws_l, ambient_c)
    return CandidateBatch(
        reheat=reheat,
        target=target,
        returns=_returns(trajectory, weights),
        hot_water_l=trajectory.hot_water_l,
        feasible=_feasible(trajectory.hot_water_l, default_hw, tolerance),
        trajectory=trajectory,
    )


def default_rollout(
    model: LearnedDynamics,
    initial: StateFeatures,
    draws_l: np.ndarray,
    ambient_c: np.ndarray,
    config: PlannerConfig,
    prev_mode: int = 0,
) -> Trajectory:
    """The baseline thermostat acting on predicted mid-point temperatures."""
    T_tg, delta = config.default_target_c, config.default_delta_c

    def thermostat(mid: np.ndarray, t: int) -> tuple[np.ndarray, np.ndarray]:
        # Outside a charge the mode is off, except for the mode carried in at t = 0.
        prev = prev_mode if t == 0 else 0
        want = np.where(mid < T_tg - delta, 1, np.where(mid >= T_tg, 0, prev))
        return want, np.full(mid.shape, T_tg)

    return rollout(model, initial, thermostat, draws_l, ambient_c, n_candidates=1)


def _trajectory_policy(trajectory: Trajectory, row: int = 0) -> PolicyMatrix:
    reheat = trajectory.reheat[row]
    return PolicyMatrix(tuple(reheat), tuple(np.where(reheat == 1, trajectory.target_c[row], 0.0)))


@dataclass
class _Best:
    policy: PolicyMatrix
    value: float
    hot_water: np.ndarray
    midpoint: np.ndarray

    def offer(self, batch: CandidateBatch) -> None:
        values = np.where(batch.feasible, batch.returns, -np.inf)
        if values.size == 0:
            return
        i = int(np.argmax(values))
        if values[i] > self.value:
            self.value = float(values[i])
            self.policy = PolicyMatrix(tuple(batch.reheat[i]), tuple(batch.target[i]))
            self.hot_water = batch.hot_water_l[i]
            self.midpoint = batch.trajectory.midpoint_c[i]


def _cold_start(current: StateFeatures, T: int, config: PlannerConfig, prev_mode: int) -> PlanResult:
    first = default_policy(current.midpoint_c, config.default_target_c, config.default_delta_c, prev_mode)
    reheat = (first,) + (0,) * (T - 1)
    target = (config.default_target_c,) + (0.0,) * (T - 1)
    return PlanResult(
        policy=PolicyMatrix(reheat, target),
        predicted_return=float("nan"),
        predicted_hw_trajectory=np.zeros(T),
        feasible=False,
        fallback="cold_start",
    )


def _baseline(
    model: LearnedDynamics,
    current: StateFeatures,
    draws: np.ndarray,
    ambient: np.ndarray,
    weights: RewardWeights,
    config: PlannerConfig,
    prev_mode: int,
) -> tuple[Trajectory, _Best]:
    trajectory = default_rollout(model, current, draws, ambient, config, prev_mode)
    value = float(_returns(trajectory, weights)[0])
    best = _Best(
        _trajectory_policy(trajectory), value, trajectory.hot_water_l[0], trajectory.midpoint_c[0]
    )
    return trajectory, best


def _result(best: _Best, default_value: float, evaluated: int) -> PlanResult:
    return PlanResult(
        policy=best.policy,
        predicted_return=best.value,
        predicted_hw_trajectory=best.hot_water,
        feasible=True,
        default_return=default_value,
        evaluated=evaluated,
        predicted_midpoint=best.midpoint,
    )


def heuristic_search(
    model: LearnedDynamics | None,
    current_features: StateFeatures,
    draw_forecast: DrawForecast,
    ambient_forecast: AmbientForecast | np.ndarray,
    weights: RewardWeights,
    T: int,
    budget: int,
    *,
    config: PlannerConfig | None = None,
    prev_mode: int = 0,
) -> PlanResult:
    """Staged beam search over reheat start times and targets.

    Stage 0 is the baseline and the all-idle plan, stage 1 every single reheat,
    and each later stage adds one reheat after the last charge of each beam
    member. A stage is built only from a fully evaluated predecessor and is
    evaluated in order until the budget runs out, so a larger budget always
    evaluates a superset of what a smaller one did.
    """
    config = config or PlannerConfig()
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    if model is None:
        return _cold_start(current_features, T, config, prev_mode)
    draws, ambient = _forecast_arrays(draw_forecast, ambient_forecast, T, config.risk_k)
    baseline, best = _baseline(model, current_features, draws, ambient, weights, config, prev_mode)
    default_hw = baseline.hot_water_l[0]
    default_value = best.value
    evaluated = 1

    def run(policies: list[PolicyMatrix]) -> CandidateBatch | None:
        nonlocal evaluated
        remaining = budget - evaluated
        if remaining <= 0 or not policies:
            return None
        take = policies[:remaining]
        reheat, target = _stack(take, T)
        batch = evaluate_candidates(
            model, current_features, reheat, target, draws, ambient, weights, default_hw, config.hw_tolerance_l
        )
        evaluated += len(take)
        best.offer(batch)
        return batch if len(take) == len(policies) else None

    grid = config.targets
    run([PolicyMatrix.idle(T)])
    singles = []
    for start in range(0, T, config.start_stride):
        for g in grid:
            reheat = [0] * T
            target = [0.0] * T
            reheat[start], target[start] = 1, g
            singles.append(PolicyMatrix(tuple(reheat), tuple(target)))
    stage = run(singles)

    for _ in range(config.max_reheats - 1):
        if stage is None:
            break
        order = sorted(
            range(len(stage.returns)),
            key=lambda i: (not stage.feasible[i], -stage.returns[i], i),
        )[: config.beam_width]
        extended = []
        for i in order:
            charging = np.flatnonzero(stage.trajectory.target_c[i] > 0)
            free_from = int(charging[-1]) + 1 if charging.size else 0
            first_free = free_from + (-free_from) % config.start_stride
            for start in range(first_free, T, config.start_stride):
                for g in grid:
                    reheat = stage.reheat[i].copy()
                    target = stage.target[i].copy()
                    reheat[start], target[start] = 1, g
                    extended.append(PolicyMatrix(tuple(reheat), tuple(target)))
        if not extended:
            break
        stage = run(extended)

    logger.debug(
        "Beam search: %d evaluations, best %.4f vs baseline %.4f", evaluated, best.value, default_value
    )
    return _result(best, default_value, evaluated)


def plan(
    model: LearnedDynamics | None,
    current_features: StateFeatures,
    draw_forecast: DrawForecast,
    ambient_forecast: AmbientForecast | np.ndarray,
    weights: RewardWeights,
    T: int,
    *,
    config: PlannerConfig | None = None,
    prev_mode: int = 0,
) -> PlanResult:
    """Best feasible plan; exact for small policy spaces, beam search otherwise."""
    config = config or PlannerConfig()
    if model is None:
        logger.debug("No trained model yet; planning with the baseline thermostat")
        return _cold_start(current_features, T, config, prev_mode)
    if policy_space_size(T, config.targets) > config.exact_plan_limit:
        return heuristic_search(
            model,
            current_features,
            draw_forecast,
            ambient_forecast,
            weights,
            T,
            config.budget,
            config=config,
            prev_mode=prev_mode,
        )

    draws, ambient = _forecast_arrays(draw_forecast, ambient_forecast, T, config.risk_k)
    baseline, best = _baseline(model, current_features, draws, ambient, weights, config, prev_mode)
    policies = list(enumerate_policies(T, config.targets, config.enumeration_cap))
    reheat, target = _stack(policies, T)
    batch = evaluate_candidates(
        model,
        current_features,
        reheat,
        target,
        draws,
        ambient,
        weights,
        baseline.hot_water_l[0],
        config.hw_tolerance_l,
    )
    default_value = best.value
    best.offer(batch)
    return _result(best, default_value, 1 + len(policies))
