"""Learned transition and reward-relevant models."""

from __future__ import annotations

from dhwlearn.dynamics.ensemble import (
    EnsembleModel,
    EnsemblePrediction,
    ModelNotTrainedError,
    expected_information_gain,
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
from dhwlearn.dynamics.rollout import (
    LearnedDynamics,
    TransitionModel,
    Trajectory,
    estimate_hot_water,
    rollout,
)

__all__ = [
    "Action",
    "CycleRecord",
    "EnsembleModel",
    "EnsemblePrediction",
    "Experience",
    "HeatPumpFit",
    "LearnedDynamics",
    "ModelNotTrainedError",
    "ReheatModel",
    "StateFeatures",
    "TransitionModel",
    "Trajectory",
    "estimate_hot_water",
    "expected_information_gain",
    "fit_heat_pump",
    "fit_reheat_cycles",
    "information_gain",
    "predict",
    "probe_grid",
    "residual_excess",
    "rollout",
    "train_ensemble",
    "variance_snapshot",
]
