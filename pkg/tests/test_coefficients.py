"""Tests for zsnpg.coefficients module."""

from __future__ import annotations

import json

import numpy as np
import pytest

from zsnpg.coefficients import (
    c_lkd_truncated,
    c_prime_truncated,
    concentrability,
    default_depth,
    enumerated_value,
    mismatch_coefficient,
    sampled_concentrability,
)
from zsnpg.errors import BudgetError, GameValidationError
from zsnpg.game import MarkovGame, TabularPolicy, uniform_dist
from zsnpg.generators import MATCHING_PENNIES, random_game, single_state


def _collapsing_game(n_states: int) -> MarkovGame:
    transition = np.zeros((n_states, 2, 2, n_states))
    transition[..., 0] = 1.0
    reward = np.random.default_rng(0).uniform(size=(n_states, 2, 2))
    return MarkovGame(transition=transition, reward=reward, gamma=0.9)


def _absorbing_game() -> MarkovGame:
    transition = np.zeros((2, 2, 2, 2))
    transition[0, :, :, 0] = 1.0
    transition[1] = 0.5
    reward = np.random.default_rng(1).uniform(size=(2, 2, 2))
    return MarkovGame(transition=transition, reward=reward, gamma=0.9)


# ---------------------------------------------------------------------------
# Exact coefficients
# ---------------------------------------------------------------------------


class TestConcentrabilityValues:
    def test_matching_start_gives_unit_c0(self):
        game = random_game(3, 2, 0.9, seed=0)
        report = concentrability(game, uniform_dist(3), uniform_dist(3), 2)
        assert report.c_values[0] == pytest.approx(1.0)
        assert len(report.c_values) == 3

    def test_collapsing_transitions(self):
        report = concentrability(_collapsing_game(4), uniform_dist(4), uniform_dist(4), 3)
        assert np.allclose(report.c_values, [1.0, 4.0, 4.0, 4.0])

    def test_dp_matches_enumeration(self):
        for seed in range(5):
            game = random_game(2, 2, 0.9, seed=seed)
            rng = np.random.default_rng(seed)
            rho, sigma = rng.dirichlet(np.ones(2)), rng.dirichlet(np.ones(2))
            dp = concentrability(game, rho, sigma, 4, method="dp")
            enumerated = concentrability(game, rho, sigma, 4, method="enumerate")
            assert np.allclose(dp.c_values, enumerated.c_values, rtol=1e-12)
            assert enumerated.method == "enumerate"

    def test_dp_bounds_random_policies(self):
        game = random_game(3, 2, 0.9, seed=3)
        rho, sigma = uniform_dist(3), np.array([0.6, 0.3, 0.1])
        report = concentrability(game, rho, sigma, 3)
        rng = np.random.default_rng(3)
        for j in range(4):
            sampled = sampled_concentrability(game, rho, sigma, j, 500, rng)
            assert sampled <= report.c_values[j] + 1e-12

    def test_enumeration_returns_maximizing_sequence(self):
        game = random_game(2, 2, 0.9, seed=4)
        value, sequence = enumerated_value(game, uniform_dist(2), np.array([0.8, 0.2]), 2)
        assert len(sequence) == 2
        assert all(0 <= i < 16 for i in sequence)
        assert value >= 1.0
        assert enumerated_value(game, uniform_dist(2), uniform_dist(2), 0) == (1.0, ())

    def test_enumeration_budget(self):
        game = random_game(3, 3, 0.9, seed=5)
        with pytest.raises(BudgetError, match="sampled_concentrability"):
            enumerated_value(game, uniform_dist(3), uniform_dist(3), 3)

    def test_unknown_method(self):
        game = random_game(2, 2, 0.9, seed=5)
        with pytest.raises(ValueError, match="Unknown concentrability method"):
            concentrability(game, uniform_dist(2), uniform_dist(2), 1, method="guess")

    def test_negative_depth(self):
        game = random_game(2, 2, 0.9, seed=5)
        with pytest.raises(ValueError, match="J must be"):
            concentrability(game, uniform_dist(2), uniform_dist(2), -1)


class TestUnboundedRatios:
    def test_unreachable_zero_mass_is_finite(self):
        one_hot = np.array([1.0, 0.0])
        report = concentrability(_absorbing_game(), one_hot, one_hot, 5)
        assert np.allclose(report.c_values, 1.0)

    def test_reachable_zero_mass_is_infinite(self):
        report = concentrability(_absorbing_game(), uniform_dist(2), np.array([1.0, 0.0]), 3)
        assert np.isinf(report.c_values[0])
        data = report.to_dict()
        assert data["c"]["0"] == "inf"
        assert data["c_prime"] == "inf"
        json.dumps(data)


# ---------------------------------------------------------------------------
# Truncated weighted sums
# ---------------------------------------------------------------------------


class TestTruncation:
    def test_default_depth(self):
        assert default_depth(0.0) == 1
        for gamma in (0.5, 0.9, 0.99):
            J = default_depth(gamma)
            assert gamma**J <= 1e-6 * (1 - gamma)
            assert gamma ** (J - 1) > 1e-6 * (1 - gamma)

    def test_c_prime_of_constant_sequence(self):
        # (1-gamma)^2 sum_m m gamma^(m-1) = 1, so a constant c gives C' -> c
        c_values = np.full(default_depth(0.5) + 1, 3.0)
        head, tail = c_prime_truncated(c_values, 0.5, 3.0)
        assert head == pytest.approx(3.0, abs=1e-5)
        assert head + tail == pytest.approx(3.0)

    def test_c_prime_truncation_is_honest(self):
        game = random_game(3, 2, 0.8, seed=6)
        rho, sigma = uniform_dist(3), np.array([0.5, 0.3, 0.2])
        for J in (1, 3, 6):
            short = concentrability(game, rho, sigma, J)
            longer = concentrability(game, rho, sigma, J + 1)
            assert short.c_prime <= longer.c_prime + 1e-12
            assert longer.c_prime <= short.c_prime + short.tail_bound + 1e-12
            for key, (value, tail) in short.c_lkd.items():
                longer_value = longer.c_lkd[key][0]
                assert value <= longer_value + 1e-12
                assert longer_value <= value + tail + 1e-12

    def test_lkd_rejects_bad_indices(self):
        with pytest.raises(ValueError, match="0 <= l < k"):
            c_lkd_truncated(np.ones(3), 0.9, 1.0, 1, 1, 0)

    def test_lkd_skipped_when_undefined(self):
        game = random_game(2, 2, 0.0, seed=7)
        report = concentrability(game, uniform_dist(2), uniform_dist(2))
        assert set(report.c_lkd) == {(0, 1, 0), (0, 1, 1)}
        assert report.J == 1


# ---------------------------------------------------------------------------
# Distribution mismatch
# ---------------------------------------------------------------------------


class TestMismatch:
    def test_bounded_by_concentrability(self):
        for seed in range(5):
            game = random_game(3, 2, 0.8, seed=seed)
            sigma = np.random.default_rng(seed).dirichlet(np.ones(3))
            pi1 = TabularPolicy(probs=np.random.default_rng(seed + 10).dirichlet(np.ones(2), size=3))
            report = concentrability(game, sigma, sigma)
            mismatch = mismatch_coefficient(game, pi1, sigma)
            assert mismatch <= (report.c_prime + report.tail_bound) / (1 - game.gamma) + 1e-9

    def test_gamma_zero_is_one(self):
        game = random_game(3, 2, 0.0, seed=8)
        assert mismatch_coefficient(game, TabularPolicy.uniform(3, 2), uniform_dist(3)) == pytest.approx(1.0)

    def test_single_state_is_one(self):
        game = single_state(MATCHING_PENNIES, 0.9)
        assert mismatch_coefficient(game, TabularPolicy.uniform(1, 2), np.ones(1)) == pytest.approx(1.0)

    def test_needs_full_support(self):
        game = random_game(2, 2, 0.9, seed=9)
        with pytest.raises(GameValidationError, match="positive mass"):
            mismatch_coefficient(game, TabularPolicy.uniform(2, 2), np.array([1.0, 0.0]))
