"""Shared test fixtures."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from dhwlearn.config import (
    AgentConfig,
    EnsembleConfig,
    PlannerConfig,
    WorkbenchConfig,
)
from dhwlearn.dynamics.ensemble import EnsembleModel
from dhwlearn.dynamics.heatpump_fit import ReheatModel
from dhwlearn.dynamics.rollout import LearnedDynamics
from dhwlearn.store.file_store import FileStore


class ConstantModel:
    """Transition stub: every discharge period changes the mid-point by ``delta``."""

    def __init__(self, delta: float = -0.5, electric_wh: float = 0.0, variance: float = 0.0) -> None:
        self.delta = delta
        self.electric_wh = electric_wh
        self.variance = variance

    def predict_batch(self, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = len(inputs)
        mean = np.column_stack((np.full(n, self.delta), np.full(n, self.electric_wh)))
        return mean, np.full((n, 2), self.variance)


class DrawModel:
    """Transition stub: the mid-point drops ``per_liter`` °C per liter drawn (input column 4)."""

    def __init__(self, per_liter: float = 0.1, idle_delta: float = -0.05) -> None:
        self.per_liter = per_liter
        self.idle_delta = idle_delta

    def predict_batch(self, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = len(inputs)
        delta = self.idle_delta - self.per_liter * inputs[:, 4]
        return np.column_stack((delta, np.zeros(n))), np.zeros((n, 2))


def make_ensemble(
    offsets: tuple[float, ...] = (1.0, -1.0),
    y_mean: tuple[float, float] = (0.5, 100.0),
    y_std: tuple[float, float] = (2.0, 10.0),
) -> EnsembleModel:
    """Hand-built ensemble ignoring its inputs.

    Member m predicts a mid-point change of y_mean[0] + offsets[m] * y_std[0]
    and a constant y_mean[1] Wh.
    """
    n = len(offsets)
    last = np.zeros((n, 2))
    last[:, 0] = offsets
    return EnsembleModel(
        [np.zeros((n, 7, 1)), np.zeros((n, 1, 2))],
        [np.zeros((n, 1)), last],
        np.zeros(7),
        np.ones(7),
        np.array(y_mean),
        np.array(y_std),
    )


@pytest.fixture
def config(tmp_path):
    """Default config writing into a temp directory."""
    return WorkbenchConfig(out_dir=tmp_path)


@pytest.fixture
def fast_config(tmp_path):
    """Small, quick agent: tiny ensemble, short warm-up and horizon."""
    return WorkbenchConfig(
        out_dir=tmp_path,
        days=4,
        agent=AgentConfig(
            warmup_days=1,
            min_train_experiences=48,
            n_probes=16,
            planner=PlannerConfig(horizon=8, budget=40, beam_width=2, max_reheats=2),
            ensemble=EnsembleConfig(
                n_members=2,
                hidden_layers=(8,),
                max_epochs=20,
                min_experiences=48,
                max_train_samples=500,
            ),
        ),
    )


@pytest.fixture
def store(tmp_path):
    """Fresh FileStore using a temp directory."""
    return FileStore(tmp_path)


@pytest.fixture
def stub_dynamics():
    def _make(model=None, **kwargs) -> LearnedDynamics:
        defaults = dict(
            transition=model or ConstantModel(),
            reheat=ReheatModel(prior_rise_c_per_period=2.0),
            volume_l=200.0,
            hw_threshold_c=45.0,
            knee_band_c=10.0,
            noise_std=0.25,
            period_min=15,
        )
        return LearnedDynamics(**(defaults | kwargs))

    return _make


def with_agent(config: WorkbenchConfig, **agent_fields) -> WorkbenchConfig:
    return replace(config, agent=replace(config.agent, **agent_fields))
