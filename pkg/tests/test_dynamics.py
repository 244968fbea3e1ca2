"""Tests for experiences and the bootstrap ensemble."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest
from conftest import make_ensemble
from scipy.special import digamma

from dhwlearn.config import EnsembleConfig
from dhwlearn.dynamics import (
    Action,
    EnsembleModel,
    Experience,
    ModelNotTrainedError,
    StateFeatures,
    expected_information_gain,
    information_gain,
    predict,
    probe_grid,
    residual_excess,
    train_ensemble,
    variance_snapshot,
)
from dhwlearn.dynamics.ensemble import PROBE_BOX, fit_ensemble
from dhwlearn.dynamics.experience import experience_arrays, read_experiences, write_experiences

SMALL = EnsembleConfig(n_members=2, hidden_layers=(4,), max_epochs=20, min_experiences=10)
UNCERTAIN = EnsembleConfig(n_members=6, hidden_layers=(8,), max_epochs=200, min_experiences=10)


def features(midpoint_c: float = 50.0, period_of_day: int = 0) -> StateFeatures:
    return StateFeatures(midpoint_c, 120.0, 30.0, 8.0, period_of_day)


def discharge(midpoint_c: float, next_midpoint_c: float, draw_l: float = 5.0, ts: int = 0) -> Experience:
    return Experience(features(midpoint_c), Action(0, 52.5), next_midpoint_c, 2.0, ts, draw_l=draw_l)


def synthetic_experiences(n: int, seed: int = 0, noise_std: float = 0.0) -> list[Experience]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        mid = float(rng.uniform(40.0, 60.0))
        draw = float(rng.uniform(0.0, 20.0))
        out.append(
            Experience(
                StateFeatures(mid, float(rng.uniform(0, 600)), float(rng.uniform(0, 150)), 8.0, i % 96),
                Action(0, 52.5),
                mid - 0.05 - 0.1 * draw + (float(rng.normal(0.0, noise_std)) if noise_std else 0.0),
                2.0,
                15 * i,
                draw_l=draw,
            )
        )
    return out


class TestExperience:
    def test_non_finite_features_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            StateFeatures(float("nan"), 0.0, 0.0, 0.0, 0)

    def test_period_of_day_range(self):
        with pytest.raises(ValueError, match="period_of_day"):
            StateFeatures(50.0, 0.0, 0.0, 0.0, 96)

    def test_action_reheat_binary(self):
        with pytest.raises(ValueError, match="reheat"):
            Action(2, 50.0)

    def test_negative_draw_rejected(self):
        with pytest.raises(ValueError, match="draw_l"):
            Experience(features(), Action(0, 50.0), 49.0, 0.0, 0, draw_l=-1.0)

    def test_arrays_keep_discharge_rows_only(self):
        charge = Experience(features(), Action(1, 55.0), 52.0, 500.0, 0)
        macro = Experience(features(), Action(0, 55.0), 52.0, 500.0, 0, duration_periods=3)
        x, y = experience_arrays([charge, discharge(50.0, 49.5), macro])
        assert x.shape == (1, 7)
        assert y.tolist() == [[-0.5, 2.0]]
        # Hours since reheat, cyclic time of day.
        assert x[0, 1] == 2.0
        assert x[0, 5] == pytest.approx(0.0)
        assert x[0, 6] == pytest.approx(1.0)

    def test_csv_round_trip(self, tmp_path):
        rows = [discharge(50.5, 49.25, draw_l=3.5, ts=900), Experience(features(), Action(1, 55.0), 52.0, 500.0, 915)]
        path = tmp_path / "buffer.csv"
        write_experiences(path, rows)
        assert read_experiences(path) == rows


class TestHandBuiltEnsemble:
    def test_mean_and_variance(self):
        mean, var = make_ensemble().predict_batch(np.zeros((3, 7)))
        np.testing.assert_allclose(mean, [[0.5, 100.0]] * 3)
        np.testing.assert_allclose(var, [[4.0, 0.0]] * 3)

    def test_noise_head_adds_member_noise(self):
        base = make_ensemble()
        noise_last = np.zeros((2, 2))
        noise_last[:, 0] = math.log(0.25) + digamma(0.5) + math.log(2.0)
        model = EnsembleModel(
            base.coefs,
            base.intercepts,
            base.x_mean,
            base.x_std,
            base.y_mean,
            base.y_std,
            noise_coefs=[np.zeros((2, 7, 1)), np.zeros((2, 1, 2))],
            noise_intercepts=[np.zeros((2, 1)), noise_last],
            noise_outputs=[True, False],
        )
        mean, epistemic, aleatoric = model.predict_components(np.zeros((3, 7)))
        np.testing.assert_allclose(epistemic, [[4.0, 0.0]] * 3)
        np.testing.assert_allclose(aleatoric, [[1.0, 0.0]] * 3)
        np.testing.assert_allclose(model.predict_batch(np.zeros((3, 7)))[1], [[5.0, 0.0]] * 3)
        np.testing.assert_allclose(variance_snapshot(model, np.zeros((2, 7))), [4.0, 4.0])

    def test_noise_head_needs_both_parts(self):
        base = make_ensemble()
        with pytest.raises(ValueError, match="noise head"):
            EnsembleModel(
                base.coefs, base.intercepts, base.x_mean, base.x_std, base.y_mean, base.y_std,
                noise_coefs=[np.zeros((2, 7, 1)), np.zeros((2, 1, 2))],
            )

    def test_predict_returns_next_midpoint(self):
        p = predict(make_ensemble(), features(50.0), Action(0, 52.5))
        assert p.midpoint_c == pytest.approx(50.5)
        assert p.electric_wh == pytest.approx(100.0)
        assert p.midpoint_var == pytest.approx(4.0)

    def test_predict_rejects_reheat(self):
        with pytest.raises(ValueError, match="reheat"):
            predict(make_ensemble(), features(), Action(1, 55.0))

    def test_missing_model(self):
        with pytest.raises(ModelNotTrainedError):
            predict(None, features(), Action(0, 50.0))
        with pytest.raises(ModelNotTrainedError):
            variance_snapshot(None, np.zeros((2, 7)))

    def test_needs_two_members(self):
        with pytest.raises(ValueError, match="2 members"):
            make_ensemble(offsets=(0.0,))

    def test_json_round_trip(self):
        model = make_ensemble()
        restored = EnsembleModel.from_json_dict(json.loads(json.dumps(model.to_json_dict())))
        x = np.random.default_rng(1).normal(size=(5, 7))
        np.testing.assert_allclose(restored.predict_batch(x)[0], model.predict_batch(x)[0])

    def test_unsupported_checkpoint(self):
        payload = make_ensemble().to_json_dict() | {"format_version": 99}
        with pytest.raises(ValueError, match="Unsupported"):
            EnsembleModel.from_json_dict(payload)


class TestInformationGain:
    def test_exact_hit_by_certain_model_is_zero(self):
        model = make_ensemble(offsets=(0.0, 0.0))
        assert information_gain(model, discharge(50.0, 50.5)) == pytest.approx(0.0, abs=1e-12)

    def test_uncertain_model_exact_hit(self):
        # Variance 4 against a 0.25 °C sensor: 0.5 * log2(64) bits.
        assert information_gain(make_ensemble(), discharge(50.0, 50.5)) == pytest.approx(3.0)

    def test_miss_adds_surprisal(self):
        model = make_ensemble()
        hit = information_gain(model, discharge(50.0, 50.5))
        miss = information_gain(model, discharge(50.0, 52.5))
        assert miss == pytest.approx(hit + 4.0 / (8.0 * math.log(2.0)))

    def test_never_negative(self):
        model = make_ensemble(offsets=(0.1, -0.1))
        for next_mid in np.linspace(45.0, 55.0, 21):
            assert information_gain(model, discharge(50.0, float(next_mid))) >= 0.0

    def test_expected_gain_grows_with_variance(self):
        gains = expected_information_gain(np.array([0.0, 0.0625, 1.0]))
        assert gains[0] == 0.0
        assert gains[1] == pytest.approx(0.5)
        assert gains[2] > gains[1]


class TestProbes:
    def test_shape_and_bounds(self):
        probes = probe_grid(10, seed=0)
        assert probes.shape == (10, 7)
        lo, hi = PROBE_BOX["midpoint_c"]
        assert np.all((probes[:, 0] >= lo) & (probes[:, 0] <= hi))
        np.testing.assert_allclose(probes[:, 5] ** 2 + probes[:, 6] ** 2, 1.0)

    def test_deterministic(self):
        np.testing.assert_array_equal(probe_grid(16, seed=3), probe_grid(16, seed=3))

    def test_invalid_size(self):
        with pytest.raises(ValueError):
            probe_grid(0)

    def test_residual_excess_counts_unexplained_error(self):
        model = make_ensemble()
        probes = probe_grid(4, seed=0)
        explained = residual_excess(model, [discharge(50.0, 50.5)], probes)
        assert explained.tolist() == [0.0] * 4
        surprising = residual_excess(model, [discharge(50.0, 60.5)], probes)
        assert surprising.sum() == pytest.approx(100.0 - 4.0 - 2 * 0.25**2)
        assert np.count_nonzero(surprising) == 1

    def test_snapshot_adds_excess(self):
        probes = probe_grid(4, seed=0)
        snapshot = variance_snapshot(make_ensemble(), probes, np.array([0.0, 1.0, 0.0, 2.0]))
        np.testing.assert_allclose(snapshot, [4.0, 5.0, 4.0, 6.0])


class TestTraining:
    def test_train_on_discharge_experiences(self):
        model = train_ensemble(synthetic_experiences(120), SMALL, seed=1)
        assert model.n_members == 2
        assert model.n_train == 120
        _, var = model.predict_batch(probe_grid(8))
        assert np.all(var >= 0)

    def test_same_seed_same_model(self):
        data = synthetic_experiences(80)
        a = train_ensemble(data, SMALL, seed=5)
        b = train_ensemble(data, SMALL, seed=5)
        x = probe_grid(8)
        np.testing.assert_array_equal(a.predict_batch(x)[0], b.predict_batch(x)[0])

    def test_too_few_experiences(self):
        with pytest.raises(ValueError, match="need >= 10"):
            train_ensemble(synthetic_experiences(5), SMALL, seed=0)

    def test_charging_rows_do_not_count(self):
        charges = [Experience(features(), Action(1, 55.0), 52.0, 500.0, i) for i in range(20)]
        with pytest.raises(ValueError, match="discharge"):
            train_ensemble(charges + synthetic_experiences(5), SMALL, seed=0)

    def test_constant_target_is_reproduced(self, caplog):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(60, 7))
        y = np.column_stack((x[:, 0] * 0.3, np.full(60, 7.0)))
        model = fit_ensemble(x, y, SMALL, seed=0, output_names=["delta", "wh"])
        assert model.degenerate_outputs == ("wh",)
        mean, var = model.predict_batch(x[:5])
        np.testing.assert_allclose(mean[:, 1], 7.0)
        np.testing.assert_allclose(var[:, 1], 0.0)
        assert "Zero-variance" in caplog.text

    def test_sample_cap_keeps_most_recent(self):
        config = EnsembleConfig(n_members=2, hidden_layers=(4,), max_epochs=5, min_experiences=10, max_train_samples=30)
        assert train_ensemble(synthetic_experiences(100), config, seed=0).n_train == 30


class TestUncertainty:
    def test_linear_data_is_reproduced(self):
        rng = np.random.default_rng(4)
        x = rng.uniform(-1.0, 1.0, size=(400, 1))
        model = fit_ensemble(x, 2.0 * x[:, 0], EnsembleConfig(), seed=0)
        assert not model.has_noise_head
        query = rng.uniform(-1.0, 1.0, size=(200, 1))
        mean, var = model.predict_batch(query)
        relative = np.abs(mean[:, 0] - 2.0 * query[:, 0]) / np.abs(2.0 * query[:, 0])
        assert np.median(relative) < 0.01
        assert var.max() < 1e-6

    def test_noisy_region_has_larger_variance(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(-1.0, 1.0, size=(800, 1))
        y = np.where(x[:, 0] < 0.0, 0.0, rng.normal(0.0, 1.0, size=800))
        model = fit_ensemble(x, y, EnsembleConfig(), seed=0)
        query = np.linspace(-1.0, 1.0, 401)[:, None]
        _, var = model.predict_batch(query)
        quiet = var[query[:, 0] < 0.0, 0].mean()
        noisy = var[query[:, 0] >= 0.0, 0].mean()
        assert noisy >= 5.0 * quiet

    def test_variance_splits_into_spread_and_noise(self):
        model = fit_ensemble(*experience_arrays(synthetic_experiences(200, noise_std=0.3)), UNCERTAIN, seed=2)
        mean, epistemic, aleatoric = model.predict_components(probe_grid(16))
        total_mean, total = model.predict_batch(probe_grid(16))
        np.testing.assert_allclose(total, epistemic + aleatoric)
        np.testing.assert_allclose(total_mean, mean)
        assert np.all(aleatoric[:, 0] > 0)

    def test_far_query_is_less_certain(self):
        model = train_ensemble(synthetic_experiences(300, noise_std=0.3), UNCERTAIN, seed=1)
        near = predict(model, features(50.0), Action(0, 52.5), draw_l=10.0)
        far = predict(model, StateFeatures(95.0, 1440.0, 600.0, 8.0, 0), Action(0, 52.5), draw_l=200.0)
        assert far.midpoint_var > near.midpoint_var

    def test_repeated_experience_is_less_surprising(self):
        base = synthetic_experiences(16)
        surprise = Experience(features(50.0), Action(0, 52.5), 50.0 - 0.05 - 1.0 - 2.0, 2.0, 15 * 16, draw_l=10.0)
        first = information_gain(train_ensemble(base, UNCERTAIN, seed=3), surprise)
        second = information_gain(train_ensemble(base + [surprise], UNCERTAIN, seed=3), surprise)
        assert first == pytest.approx(4.0 / (2 * 0.25**2 * math.log(2.0)), rel=1e-6)
        assert second <= first

    def test_trained_model_round_trips(self):
        model = train_ensemble(synthetic_experiences(120, noise_std=0.3), UNCERTAIN, seed=6)
        assert model.has_noise_head
        restored = EnsembleModel.from_json_dict(json.loads(json.dumps(model.to_json_dict())))
        x = probe_grid(8)
        np.testing.assert_allclose(restored.predict_batch(x)[1], model.predict_batch(x)[1])
