"""Tests for the benchmark, validation scenarios and plot exports."""

from __future__ import annotations

import json
import math

import numpy as np
import pandas as pd
import pytest
from conftest import ConstantModel, make_ensemble

from dhwlearn.agent import EpisodeRunner
from dhwlearn.clock import MINUTES_PER_DAY
from dhwlearn.config import AgentConfig, EnsembleConfig, WorkbenchConfig
from dhwlearn.dynamics import train_ensemble
from dhwlearn.dynamics.experience import experience_arrays
from dhwlearn.harness import (
    EXPORT_KEYS,
    BenchmarkReport,
    ExperimentSpec,
    build_manifest,
    build_table,
    export_plot_data,
    run_benchmark,
    run_offline_validation,
    run_online_validation,
    simulate,
    summarize_run,
)
from dhwlearn.harness.benchmark import summarize_group
from dhwlearn.harness.validation import knee_volume, online_metrics, scenario_draws, simulate_scenario
from dhwlearn.store import CheckpointError


@pytest.fixture
def default_log(config):
    return EpisodeRunner(config, "default", 2, seed=3).run()


class TestExperimentSpec:
    def test_needs_a_house(self):
        with pytest.raises(ValueError, match="at least one house"):
            ExperimentSpec(0, 0)

    def test_unknown_demand_class(self):
        with pytest.raises(ValueError, match="Invalid demand class 'huge'"):
            ExperimentSpec(1, 1, demand_classes=("huge",))

    def test_seed_count(self):
        with pytest.raises(ValueError, match="need 3 seeds"):
            ExperimentSpec(3, 2, seeds=(1, 2))

    def test_days(self):
        with pytest.raises(ValueError, match="n_days"):
            ExperimentSpec(1, 1, n_days=0)

    def test_houses_are_matched_pairs(self):
        spec = ExperimentSpec(3, 2, demand_classes=("low", "high"), seeds=(10, 11, 12))
        houses = spec.houses()
        assert [h.controller for h in houses] == ["default"] * 3 + ["efficiency"] * 2
        default = {h.index: h for h in houses if h.controller == "default"}
        for h in houses:
            if h.controller == "efficiency":
                assert (h.seed, h.demand_class) == (default[h.index].seed, default[h.index].demand_class)
        assert houses[1].demand_class == "high"
        assert houses[0].run_id == "default-00-low-s10"

    def test_from_config(self, config):
        spec = ExperimentSpec.from_config(config, n_days=5)
        assert spec.n_days == 5
        assert spec.seeds == tuple(range(10))
        assert spec.out_dir == config.out_dir


class TestSummaries:
    def test_accounting_splits_totals(self, default_log):
        frame = default_log.to_frame()
        s = summarize_run(default_log, accounting_start=48)
        assert s["electric_kwh_counted"] == pytest.approx(frame.loc[frame["period"] >= 48, "electric_wh"].sum() / 1000)
        assert s["electric_kwh"] == pytest.approx(frame["electric_wh"].sum() / 1000)
        assert s["draw_l"] == pytest.approx(frame["draw_l"].sum())
        assert s["n_days"] == 2
        assert s["kwh_per_100l"] == pytest.approx(100 * s["electric_kwh_counted"] / s["draw_l_counted"])

    def test_default_accounting_is_warmup(self, default_log):
        assert summarize_run(default_log)["accounting_start_period"] == 0

    def test_counts(self, default_log):
        s = summarize_run(default_log)
        frame = default_log.to_frame()
        assert s["n_reheats"] >= 1
        assert s["min_sensor_c"] == pytest.approx(frame["sensor_c"].min())
        assert s["backup_overrides"] == 0

    def test_group_sums(self, default_log):
        s = summarize_run(default_log)
        group = summarize_group([s, s])
        assert group["n_houses"] == 2
        assert group["electric_kwh"] == pytest.approx(2 * s["electric_kwh"])
        assert group["n_reheats"] == 2 * s["n_reheats"]
        assert group["kwh_per_100l"] == pytest.approx(s["kwh_per_100l"])

    def test_savings_need_both_groups(self, default_log):
        report = BenchmarkReport.from_logs([default_log], 0)
        assert report.savings() == {}
        assert set(report.groups) == {"default"}


def test_manifest_has_no_output_location(config):
    manifest = build_manifest(config, seed=4)
    assert manifest["config"]["out_dir"] is None
    assert manifest["config_hash"] == config.config_hash()
    assert manifest["seed"] == 4
    assert "numpy" in manifest["versions"]


class TestBenchmark:
    async def test_matched_pair_run(self, fast_config, store, tmp_path):
        spec = ExperimentSpec(1, 1, n_days=2, seeds=(5,), out_dir=tmp_path)
        report = await run_benchmark(spec, fast_config, store, workers=1)

        runs = await store.list_runs()
        assert runs == ["default-00-medium-s5", "efficiency-00-medium-s5"]
        default = (await store.load_run_log(runs[0])).to_frame()
        efficiency = (await store.load_run_log(runs[1])).to_frame()
        np.testing.assert_array_equal(default["draw_l"], efficiency["draw_l"])
        np.testing.assert_array_equal(default["ambient_c"], efficiency["ambient_c"])

        saved = json.loads((tmp_path / "reports" / "benchmark.json").read_text())
        assert saved["manifest"]["accounting_start_period"] == 96
        assert set(saved["groups"]) == {"default", "efficiency"}
        assert set(report.savings()) == {"counted_pct", "including_warmup_pct", "kwh_per_100l_pct"}
        assert (tmp_path / "tables" / "benchmark-houses.csv").exists()

        manifest = json.loads((tmp_path / "runs" / "efficiency-00-medium-s5.manifest.json").read_text())
        assert manifest["pair"] == 0
        assert manifest["seed"] == 5


class TestScenarios:
    def test_tap_profile_empties_tank(self, config):
        draws = scenario_draws("tap_after_reheat", config)
        assert draws.tolist() == [10.0] * 20

    def test_intermittent_profile(self, config):
        draws = scenario_draws("intermittent_then_tap", config)
        assert draws.size == 24 + 20
        assert draws[0] == pytest.approx(2.0)
        assert draws.sum() == pytest.approx(24 * 2.0 + 200.0)

    def test_unknown_scenario(self, config):
        with pytest.raises(ValueError, match="Unknown scenario"):
            scenario_draws("shower", config)

    def test_simulation_starts_reheated_and_cools(self, config):
        run = simulate_scenario("tap_after_reheat", config)
        assert run.initial_midpoint_c >= config.agent.planner.default_target_c
        assert run.true_midpoint_c[-1] < config.vessel.hw_threshold_c
        assert run.sensor_c.shape == run.true_midpoint_c.shape


class TestKneeVolume:
    def test_interpolates_crossing(self):
        volume, crossed = knee_volume(np.array([50.0, 48.0, 44.0, 40.0]), np.array([10.0, 20.0, 30.0, 40.0]), 45.0)
        assert crossed
        assert volume == pytest.approx(27.5)

    def test_never_crosses(self):
        assert knee_volume(np.array([50.0, 49.0]), np.array([10.0, 20.0]), 45.0) == (20.0, False)

    def test_first_point_below(self):
        assert knee_volume(np.array([40.0, 39.0]), np.array([10.0, 20.0]), 45.0) == (10.0, True)


class TestOfflineValidation:
    async def test_oracle_has_zero_error(self, config, store, tmp_path):
        report = await run_offline_validation("tap_after_reheat", config, store, oracle=True)
        assert report["model"] == "oracle"
        assert report["max_abs_error_c"] == pytest.approx(0.0, abs=1e-9)
        assert report["knee_error_l"] == pytest.approx(0.0, abs=1e-6)
        assert not report["knee_censored"]
        assert (tmp_path / "reports" / "offline-tap_after_reheat.json").exists()
        table = pd.read_csv(tmp_path / "tables" / "offline-tap_after_reheat.csv")
        assert list(table.columns) == ["step", "cumulative_draw_l", "true_c", "sensor_c", "model_c", "model_std_c"]

    async def test_missing_checkpoint(self, config, store):
        with pytest.raises(CheckpointError):
            await run_offline_validation("tap_after_reheat", config, store)

    async def test_supplied_model_is_scored(self, config, store, stub_dynamics):
        report = await run_offline_validation(
            "intermittent_then_tap", config, store, model=stub_dynamics(ConstantModel(delta=0.0))
        )
        assert report["max_abs_error_c"] > 0
        assert report["n_points"] == 44
        assert 0.0 <= report["coverage_1std"] <= 1.0

    async def test_wide_bands_flag(self, config, store, stub_dynamics):
        report = await run_offline_validation(
            "tap_after_reheat", config, store, model=stub_dynamics(make_ensemble())
        )
        assert report["mean_band_std_c"] == pytest.approx(2.0)
        assert report["wide_bands"]


class TestOnlineValidation:
    async def test_trains_scores_and_checkpoints(self, fast_config, store, tmp_path):
        report = await run_online_validation(fast_config, 2, 3, store)
        assert report["run_id"] == "online-s3"
        assert report["checkpoint"] == "model"
        assert report["retrain_count"] >= 1
        assert report["n_predictions"] > 0
        assert 0.0 <= report["coverage_1std"] <= 1.0
        assert (tmp_path / "models" / "model.json").exists()
        assert await store.list_runs() == ["online-s3"]

        offline = await run_offline_validation("tap_after_reheat", fast_config, store)
        assert offline["model"] == "model"
        assert math.isfinite(offline["knee_error_l"])


LEARNING_DAYS = 30
LEARNING_ENSEMBLE = EnsembleConfig(n_members=5, hidden_layers=(16, 16), max_epochs=200)


@pytest.fixture(scope="module")
def learning_run(tmp_path_factory):
    """A learning house kept on the thermostat: it trains and scores predictions but never plans.

    Only data-growth retrains happen, so the run stays quick.
    """
    config = WorkbenchConfig(
        out_dir=tmp_path_factory.mktemp("learning"),
        agent=AgentConfig(
            warmup_days=LEARNING_DAYS,
            transition_threshold=1e9,
            ensemble=LEARNING_ENSEMBLE,
        ),
    )
    runner = EpisodeRunner(config, "efficiency", LEARNING_DAYS, seed=11)
    log = runner.run()
    return runner.controller, online_metrics(log)


class TestLearningProgress:
    def test_one_step_error_after_four_weeks(self, learning_run):
        _, metrics = learning_run
        assert metrics["median_error_days_21_28_c"] <= 1.0

    def test_one_std_coverage(self, learning_run):
        _, metrics = learning_run
        assert metrics["coverage_1std"] >= 0.6

    def test_information_gain_tapers(self, learning_run):
        _, metrics = learning_run
        windows = metrics["info_gain_per_2_days"]
        assert len(windows) == LEARNING_DAYS // 2
        assert np.median(windows[10:13]) < np.median(windows[1:4])

    def test_model_variance_decays(self, learning_run):
        agent, _ = learning_run

        def up_to(day: int) -> list:
            return [e for e in agent.experiences if e.timestamp < agent.start_minute + day * MINUTES_PER_DAY]

        held_out, _ = experience_arrays(
            [e for e in agent.experiences if e.timestamp >= agent.start_minute + 28 * MINUTES_PER_DAY]
        )
        _, early, _ = train_ensemble(up_to(2), LEARNING_ENSEMBLE, seed=0).predict_components(held_out)
        _, late, _ = train_ensemble(up_to(28), LEARNING_ENSEMBLE, seed=0).predict_components(held_out)
        assert late[:, 0].mean() < 0.5 * early[:, 0].mean()


class TestSimulate:
    async def test_default_run_saved_without_checkpoint(self, config, store, tmp_path):
        log = await simulate(config, "default", 1, 2, store)
        assert await store.list_runs() == [log.run_id]
        assert not (tmp_path / "models").exists()


class TestExport:
    def test_unknown_key(self, default_log):
        with pytest.raises(ValueError, match="Unknown figure key 'fig5'. Valid keys: fig2, fig3"):
            build_table([default_log], "fig5")

    def test_representation_needs_model(self):
        with pytest.raises(ValueError, match="checkpoint"):
            build_table([], "fig2")

    def test_no_logs(self):
        with pytest.raises(ValueError, match="No run logs"):
            build_table([], "fig8")

    def test_every_key_exports(self, default_log, stub_dynamics):
        dynamics = stub_dynamics(make_ensemble())
        for key in EXPORT_KEYS:
            table = build_table([default_log], key, dynamics=dynamics)
            assert isinstance(table, pd.DataFrame)

    def test_representation_curves(self, stub_dynamics):
        table = build_table([], "fig2", dynamics=stub_dynamics())
        assert sorted(table["idle_h"].unique()) == [0, 12, 24]
        assert len(table) == 3 * 20
        first = table[table["idle_h"] == 0]
        assert first["cumulative_draw_l"].iloc[-1] == pytest.approx(100.0)

    def test_daily_consumption(self, default_log):
        table = build_table([default_log], "fig8")
        frame = default_log.to_frame()
        assert table["day"].tolist() == [0, 1]
        assert table["draw_l"].sum() == pytest.approx(frame["draw_l"].sum())
        assert table["electric_kwh"].sum() == pytest.approx(frame["electric_wh"].sum() / 1000)

    def test_weekly_cumulative(self, default_log):
        table = build_table([default_log], "fig7")
        assert table["cumulative_draw_l"].iloc[-1] == pytest.approx(table["draw_l"].sum())

    def test_default_logs_have_no_learning_curves(self, default_log):
        assert build_table([default_log], "fig3").empty
        assert build_table([default_log], "fig4").empty

    def test_outflow_quantiles_ordered(self, default_log):
        row = build_table([default_log], "fig10").iloc[0]
        assert row["min_c"] <= row["median_c"] <= row["max_c"]

    def test_episodes_start_at_completion(self, default_log):
        table = build_table([default_log], "fig9")
        assert (table["episode"] >= 1).all()

    async def test_export_writes_table(self, default_log, store, tmp_path):
        where = await export_plot_data([default_log], "fig8", store)
        assert where.endswith("fig8.csv")
        assert (tmp_path / "tables" / "fig8.csv").exists()
