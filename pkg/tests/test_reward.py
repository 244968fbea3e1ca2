"""Tests for the reward stream."""

from __future__ import annotations

import numpy as np
import pytest

from dhwlearn.reward import (
    RewardWeights,
    StepReward,
    combine,
    comfort_loss,
    episode_return,
    rollout_rewards,
    step_reward,
)


def test_comfort_loss_counts_only_cold_water():
    segments = [(20.0, 55.0), (20.0, 46.0), (5.0, 44.9)]
    assert comfort_loss(segments) == 5.0
    assert comfort_loss(segments, threshold=50.0) == 25.0
    assert comfort_loss([]) == 0.0


def test_step_reward_arithmetic():
    w = RewardWeights(comfort=10.0, efficiency=2.0, exploration=0.5)
    r = step_reward(1.0, -500.0, 4.0, w)
    assert r.r_t == pytest.approx(-10.0 - 1.0 + 2.0)


def test_step_reward_rejects_negative_terms():
    w = RewardWeights()
    with pytest.raises(ValueError, match="c_t"):
        step_reward(-1.0, 0.0, 0.0, w)
    with pytest.raises(ValueError, match="e_t"):
        step_reward(0.0, 0.0, -0.1, w)


def test_comfort_dominates_energy():
    w = RewardWeights()
    assert w.dominates(max_episode_kwh=100.0)
    # One liter of cold water is worse than any plausible energy saving.
    cold = step_reward(1.0, 0.0, 0.0, w).r_t
    expensive = step_reward(0.0, -100_000.0, 0.0, w).r_t
    assert cold < expensive


def test_weights_validation():
    with pytest.raises(ValueError, match="comfort"):
        RewardWeights(comfort=-1.0)
    with pytest.raises(ValueError, match="exploration"):
        RewardWeights(exploration=float("inf"))


def test_rollout_rewards_match_step_reward():
    w = RewardWeights(comfort=3.0, efficiency=1.5, exploration=0.2)
    comfort = np.array([[0.0, 2.0], [1.0, 0.0]])
    electric = np.array([[100.0, 0.0], [250.0, 30.0]])
    info = np.array([[0.1, 0.0], [0.5, 2.0]])
    batch = rollout_rewards(comfort, electric, info, w)
    for i in range(2):
        for t in range(2):
            expected = step_reward(comfort[i, t], -electric[i, t], info[i, t], w).r_t
            assert batch[i, t] == pytest.approx(expected)


def test_combine_broadcasts():
    w = RewardWeights(comfort=1.0, efficiency=1.0, exploration=1.0)
    out = combine(np.zeros(3), np.array([-1000.0, 0.0, 1000.0]), 0.0, w)
    assert out.tolist() == [-1.0, 0.0, 1.0]


class TestEpisodeReturn:
    def test_mean_of_rewards(self):
        assert episode_return([1.0, 2.0, 3.0], 3) == pytest.approx(2.0)

    def test_accepts_step_rewards(self):
        rewards = [StepReward(0, 0, 0, 4.0), StepReward(0, 0, 0, -2.0)]
        assert episode_return(rewards, 2) == pytest.approx(1.0)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="expected 3"):
            episode_return([1.0], 3)

    def test_horizon_must_be_positive(self):
        with pytest.raises(ValueError, match="T must be"):
            episode_return([], 0)

    def test_order_independent(self):
        values = [1e16, 1.0, -1e16, 3.0]
        assert episode_return(values, 4) == episode_return(values[::-1], 4)
