"""Tests for hot-water estimation and multi-step rollouts."""

from __future__ import annotations

import json

import numpy as np
import pytest
from conftest import ConstantModel, DrawModel, make_ensemble

from dhwlearn.config import EnsembleConfig
from dhwlearn.dynamics import LearnedDynamics, StateFeatures, estimate_hot_water, rollout
from dhwlearn.dynamics.heatpump_fit import fit_heat_pump_arrays
from dhwlearn.dynamics.rollout import DEFAULT_CHARGE_WH


def start(midpoint_c: float = 50.0, draw_since: float = 0.0) -> StateFeatures:
    return StateFeatures(midpoint_c, 60.0, draw_since, 8.0, 0)


def idle_plan(n: int, T: int) -> tuple[np.ndarray, np.ndarray]:
    return np.zeros((n, T), dtype=int), np.zeros((n, T))


class TestEstimateHotWater:
    def test_full_tank_after_reheat(self):
        assert estimate_hot_water(55.0, 0.0, 200.0) == 200.0

    def test_displacement_by_draws(self):
        assert estimate_hot_water(50.0, 150.0, 200.0) == 50.0

    def test_knee_below_threshold(self):
        assert estimate_hot_water(40.0, 0.0, 200.0) == 50.0
        assert estimate_hot_water(35.0, 0.0, 200.0) == 0.0
        assert estimate_hot_water(44.999, 0.0, 200.0) < 100.0

    def test_arrays(self):
        out = estimate_hot_water(np.array([55.0, 40.0]), np.array([250.0, 0.0]), 200.0)
        np.testing.assert_allclose(out, [0.0, 50.0])


class TestRollout:
    def test_discharge_only(self, stub_dynamics):
        traj = rollout(stub_dynamics(), start(), idle_plan(1, 4), np.zeros(4), np.full(4, 8.0))
        np.testing.assert_allclose(traj.midpoint_c[0], [49.5, 49.0, 48.5, 48.0])
        assert traj.electric_wh.sum() == 0.0
        assert traj.reheat.sum() == 0
        assert not traj.clamped

    def test_reheat_runs_to_completion(self, stub_dynamics):
        reheat = np.array([[1, 0, 0, 0]])
        target = np.full((1, 4), 55.0)
        traj = rollout(stub_dynamics(), start(), (reheat, target), np.zeros(4), np.full(4, 8.0))
        # 5 °C at the 2 °C/period prior takes three periods.
        assert traj.midpoint_c[0, 2] == pytest.approx(55.0)
        assert traj.midpoint_c[0, 3] == pytest.approx(54.5)
        np.testing.assert_allclose(traj.electric_wh[0], [DEFAULT_CHARGE_WH] * 3 + [0.0])
        assert traj.reheat[0].tolist() == [1, 0, 0, 0]
        assert traj.target_c[0].tolist() == [55.0, 55.0, 55.0, 0.0]

    def test_actions_during_charge_are_ignored(self, stub_dynamics):
        reheat = np.array([[1, 1, 1, 0]])
        target = np.array([[55.0, 60.0, 60.0, 0.0]])
        traj = rollout(stub_dynamics(), start(), (reheat, target), np.zeros(4), np.full(4, 8.0))
        assert traj.reheat[0].tolist() == [1, 0, 0, 0]
        assert traj.midpoint_c[0, 2] == pytest.approx(55.0)

    def test_comfort_counts_shortfall(self, stub_dynamics):
        model = stub_dynamics(ConstantModel(delta=0.0))
        traj = rollout(model, start(40.0), idle_plan(1, 2), np.array([80.0, 0.0]), np.full(2, 8.0))
        assert traj.comfort_l[0].tolist() == [30.0, 0.0]

    def test_hot_water_tracks_draws(self, stub_dynamics):
        model = stub_dynamics(DrawModel(per_liter=0.0, idle_delta=0.0))
        traj = rollout(model, start(50.0), idle_plan(1, 3), np.array([50.0, 50.0, 50.0]), np.zeros(3))
        np.testing.assert_allclose(traj.hot_water_l[0], [150.0, 100.0, 50.0])

    def test_batch_of_candidates(self, stub_dynamics):
        reheat = np.array([[0, 0], [1, 0]])
        target = np.full((2, 2), 52.0)
        traj = rollout(stub_dynamics(), start(), (reheat, target), np.zeros(2), np.zeros(2))
        assert traj.n_candidates == 2
        assert traj.horizon == 2
        assert traj.midpoint_c[0, 0] == pytest.approx(49.5)
        assert traj.midpoint_c[1, 0] == pytest.approx(52.0)

    def test_callback_policy(self, stub_dynamics):
        calls = []

        def policy(mid, t):
            calls.append(t)
            want = (mid < 49.0).astype(int)
            return want, np.full(mid.shape, 51.0)

        traj = rollout(stub_dynamics(), start(), policy, np.zeros(6), np.zeros(6), n_candidates=3)
        assert traj.n_candidates == 3
        assert calls == list(range(6))
        # 49.5, 49.0, 48.5 -> reheat to 51 (two periods), then discharge again.
        assert traj.reheat[0].tolist() == [0, 0, 0, 1, 0, 0]
        assert traj.midpoint_c[0, 4] == pytest.approx(51.0)

    def test_clamped_to_physical_range(self, stub_dynamics, caplog):
        traj = rollout(stub_dynamics(ConstantModel(delta=-60.0)), start(), idle_plan(1, 2), np.zeros(2), np.zeros(2))
        assert traj.clamped
        assert traj.midpoint_c[0].tolist() == [0.0, 0.0]
        assert "clamping" in caplog.text

    def test_expected_information_from_variance(self, stub_dynamics):
        model = stub_dynamics(ConstantModel(variance=0.0625))
        traj = rollout(model, start(), idle_plan(1, 3), np.zeros(3), np.zeros(3))
        np.testing.assert_allclose(traj.info_bits[0], 0.5)
        assert len(traj.predictions()) == 3
        assert traj.predictions()[0].midpoint_var == pytest.approx(0.0625)

    def test_horizon_mismatch(self, stub_dynamics):
        with pytest.raises(ValueError, match="horizons differ"):
            rollout(stub_dynamics(), start(), idle_plan(1, 3), np.zeros(3), np.zeros(2))
        with pytest.raises(ValueError, match="action horizon"):
            rollout(stub_dynamics(), start(), idle_plan(1, 2), np.zeros(3), np.zeros(3))


class TestLearnedDynamics:
    def test_charge_cost_from_heat_pump_fit(self, stub_dynamics):
        rng = np.random.default_rng(0)
        a = rng.uniform(-5.0, 25.0, 40)
        m = rng.uniform(30.0, 60.0, 40)
        fit = fit_heat_pump_arrays(a, m, 300.0 + 2.0 * m, EnsembleConfig())
        model = stub_dynamics(heat_pump=fit)
        np.testing.assert_allclose(model.charge_wh(np.array([5.0]), np.array([40.0])), [380.0])
        assert stub_dynamics().charge_wh(np.zeros(2), np.zeros(2)).tolist() == [DEFAULT_CHARGE_WH] * 2

    def test_stub_transition_cannot_be_checkpointed(self, stub_dynamics):
        with pytest.raises(ValueError, match="ConstantModel"):
            stub_dynamics().to_json_dict()

    def test_json_round_trip(self, stub_dynamics):
        model = stub_dynamics(make_ensemble(), noise_std=0.3)
        restored = LearnedDynamics.from_json_dict(json.loads(json.dumps(model.to_json_dict())))
        assert restored.noise_std == 0.3
        assert restored.reheat == model.reheat
        plan = (np.array([[0, 1, 0]]), np.full((1, 3), 55.0))
        a = rollout(model, start(), plan, np.ones(3), np.zeros(3))
        b = rollout(restored, start(), plan, np.ones(3), np.zeros(3))
        np.testing.assert_allclose(a.midpoint_c, b.midpoint_c)

    def test_wrong_kind(self):
        with pytest.raises(ValueError, match="Not a dynamics checkpoint"):
            LearnedDynamics.from_json_dict({"kind": "ensemble"})
