"""Tests for the controllers, retraining gate and episode runner."""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest
from conftest import with_agent

from dhwlearn.agent import (
    RUN_COLUMNS,
    Decision,
    DefaultController,
    EfficiencyAgent,
    EpisodeRunner,
    RunLog,
    make_controller,
    run_episode,
    should_retrain,
)
from dhwlearn.dynamics import Action
from dhwlearn.forecastio import get_ambient_source
from dhwlearn.simcore import Observation


def test_should_retrain():
    prev = np.array([1.0, 2.0, 3.0])
    assert should_retrain(prev, prev + 0.5, 0.4)
    assert not should_retrain(prev, prev + 0.5, 0.5)
    assert not should_retrain(prev, prev, 0.0)
    with pytest.raises(ValueError, match="same probes"):
        should_retrain(prev, np.zeros(2), 0.1)


def test_decision_override_validated():
    with pytest.raises(ValueError, match="Unknown override"):
        Decision(Action(0, 50.0), "panic")


class TestControllerBookkeeping:
    def obs(self, config, t: int, midpoint_c: float, flow_l: float = 0.0) -> Observation:
        return Observation(midpoint_c, flow_l, 0.0, 5.0, config.start_minute + t * config.period_min)

    def test_legionella_then_hold_then_baseline(self, config):
        ctl = DefaultController(config, config.start_minute)
        first = ctl.act(self.obs(config, 0, 50.0))
        assert first.override == "legionella"
        assert first.action == Action(1, 65.0)

        held = ctl.act(self.obs(config, 1, 60.0, flow_l=5.0))
        assert held.override == "hold"
        assert held.action.target_c == 65.0

        done = ctl.act(self.obs(config, 2, 66.0, flow_l=5.0))
        assert done.diagnostics["reheat_completed"]
        assert done.diagnostics["legionella_completed"]
        assert done.override == "none"
        assert done.action.reheat == 0
        assert ctl.minutes_since_reheat == 0.0
        assert ctl.draw_since_reheat == 0.0

    def test_thermostat_reheat_and_accumulators(self, config):
        ctl = DefaultController(config, config.start_minute)
        ctl.act(self.obs(config, 0, 50.0))
        ctl.act(self.obs(config, 1, 66.0))
        ctl.act(self.obs(config, 2, 60.0, flow_l=20.0))
        assert ctl.minutes_since_reheat == 15.0
        assert ctl.draw_since_reheat == 20.0
        cold = ctl.act(self.obs(config, 3, 46.0, flow_l=30.0))
        assert cold.action == Action(1, 52.5)
        assert cold.override == "none"
        assert ctl.act(self.obs(config, 4, 50.0)).override == "hold"

    def test_failed_legionella_is_retried(self, config, caplog):
        config = with_agent(config, max_charge_periods=2)
        ctl = DefaultController(config, config.start_minute)
        ctl.act(self.obs(config, 0, 50.0))
        assert ctl.act(self.obs(config, 1, 60.0)).override == "hold"
        retry = ctl.act(self.obs(config, 2, 60.0))
        assert retry.override == "legionella"
        assert "releasing hold" in caplog.text

    def test_legionella_every_period_days(self, config):
        config = with_agent(config, legionella_period_days=1)
        ctl = DefaultController(config, config.start_minute)
        overrides = []
        for t in range(2 * config.periods_per_day):
            overrides.append(ctl.act(self.obs(config, t, 70.0)).override)
        assert overrides.count("legionella") == 2
        assert overrides[config.periods_per_day] == "legionella"

    def test_observations_must_be_consecutive(self, config):
        ctl = DefaultController(config, config.start_minute)
        ctl.act(self.obs(config, 0, 50.0))
        with pytest.raises(ValueError, match="one period"):
            ctl.act(self.obs(config, 3, 50.0))


def test_make_controller(config):
    ambient = get_ambient_source(config, 0, 200)
    assert isinstance(make_controller("default", config, config.start_minute, ambient, 0), DefaultController)
    assert isinstance(make_controller("efficiency", config, config.start_minute, ambient, 0), EfficiencyAgent)
    with pytest.raises(ValueError, match="Invalid controller"):
        make_controller("greedy", config, config.start_minute, ambient, 0)


class TestDefaultRun:
    def test_log_shape_and_content(self, config):
        log = EpisodeRunner(config, "default", 2, seed=3).run()
        frame = log.to_frame()
        assert list(frame.columns) == list(RUN_COLUMNS)
        assert len(frame) == 2 * 96
        assert frame["override"].iloc[0] == "legionella"
        assert frame["day"].iloc[-1] == 1
        assert (frame["electric_wh"] >= 0).all()
        assert (frame["c_t"] >= 0).all()
        assert frame["e_t"].eq(0.0).all()
        w = config.agent.weights
        expected = -w.comfort * frame["c_t"] - w.efficiency * frame["electric_wh"] / 1000.0
        np.testing.assert_allclose(frame["r_t"], expected)

    def test_deterministic_per_seed(self, config):
        a = run_episode(config, None, 2, 5, controller="default").to_frame()
        b = run_episode(config, None, 2, 5, controller="default").to_frame()
        pd.testing.assert_frame_equal(a, b)
        c = run_episode(config, None, 2, 6, controller="default").to_frame()
        assert not a["draw_l"].equals(c["draw_l"])

    def test_no_draws_no_comfort_loss(self, config):
        log = EpisodeRunner(config, "default", 1, seed=0).run(np.zeros(96))
        frame = log.to_frame()
        assert frame["comfort_loss_l"].sum() == 0.0
        assert frame["outflow_min_c"].isna().all()

    def test_draws_length_checked(self, config):
        with pytest.raises(ValueError, match="per-period draws"):
            EpisodeRunner(config, "default", 1, seed=0).run(np.zeros(10))

    def test_days_must_be_positive(self, config):
        with pytest.raises(ValueError, match="n_days"):
            EpisodeRunner(config, "default", 0, seed=0)


class TestEfficiencyRun:
    def test_learns_and_plans(self, fast_config):
        runner = EpisodeRunner(fast_config, "efficiency", 3, seed=1)
        log = runner.run()
        frame = log.to_frame()
        agent = runner.controller
        assert isinstance(agent, EfficiencyAgent)
        assert agent.retrain_count >= 1
        assert agent.dynamics is not None
        assert log.warmup_periods == 96

        warmup = frame.iloc[:96]
        assert set(warmup["override"]) <= {"warmup", "legionella", "hold"}
        later = frame.iloc[96:]
        assert set(later["override"]) <= {"none", "hold", "backup"}
        assert frame["retrained"].any()

        predicted = frame["pred_midpoint_c"].notna()
        assert predicted.any()
        assert (frame.loc[predicted, "pred_std_c"] >= fast_config.vessel.sensor_noise_std - 1e-12).all()
        assert (frame["e_t"] >= 0).all()
        assert frame["probe_variance"].notna().any()

    def test_deterministic_per_seed(self, fast_config):
        a = run_episode(fast_config, None, 2, 7).to_frame()
        b = run_episode(fast_config, None, 2, 7).to_frame()
        pd.testing.assert_frame_equal(a, b)

    def test_agent_config_override(self, fast_config):
        log = run_episode(fast_config, replace(fast_config.agent, warmup_days=0), 1, 2)
        assert log.warmup_periods == 0


class TestRunLog:
    def test_frame_round_trip(self, config):
        log = EpisodeRunner(config, "default", 1, seed=4).run()
        frame = log.to_frame()
        restored = RunLog.from_frame(frame, **log.metadata())
        assert restored.metadata() == log.metadata()
        pd.testing.assert_frame_equal(restored.to_frame(), frame)

    def test_missing_columns(self):
        with pytest.raises(ValueError, match="missing column"):
            RunLog.from_frame(
                pd.DataFrame({"period": [0]}),
                run_id="x",
                controller="default",
                seed=0,
                demand_class="medium",
                start_minute=0,
                period_min=15,
            )

    def test_nan_target_when_idle(self, config):
        frame = EpisodeRunner(config, "default", 1, seed=4).run().to_frame()
        idle = frame["reheat"] == 0
        assert frame.loc[idle, "target_c"].isna().all()
        assert not math.isnan(frame["target_c"].iloc[0])
