"""Tests for zsnpg.greedy module."""

from __future__ import annotations

import numpy as np
import pytest

from zsnpg.errors import GameValidationError
from zsnpg.generators import MATCHING_PENNIES, random_game, single_state
from zsnpg.greedy import (
    DIAGNOSTIC_COLUMNS,
    OmdState,
    adaptive_step,
    build_greedy_matrices,
    omd_round,
    run_greedy,
    run_greedy_matrices,
    sandwich_bounds,
    step_cap,
)
from zsnpg.oracle import matrix_game_solve


def _random_value(game, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).uniform(0, game.value_bound, game.n_states)


# ---------------------------------------------------------------------------
# Matrix construction
# ---------------------------------------------------------------------------


class TestBuildGreedyMatrices:
    def test_matrices_are_one_step_backups(self):
        game = random_game(3, 2, 0.9, seed=1)
        v = _random_value(game, 1)
        matrix_set = build_greedy_matrices(game, v)
        assert matrix_set.matrices.shape == (3, 2, 2)
        expected = game.reward[1, 0, 1] + 0.9 * game.transition[1, 0, 1] @ v
        assert matrix_set.matrices[1, 0, 1] == pytest.approx(expected)

    @pytest.mark.parametrize("bad", [-0.5, 20.0])
    def test_value_outside_range_rejected(self, bad):
        game = random_game(2, 2, 0.9, seed=1)
        with pytest.raises(GameValidationError, match="v_prev must lie in"):
            build_greedy_matrices(game, np.array([0.0, bad]))

    def test_value_shape_checked(self):
        game = random_game(2, 2, 0.9, seed=1)
        with pytest.raises(GameValidationError, match="v_prev"):
            build_greedy_matrices(game, np.zeros(3))


# ---------------------------------------------------------------------------
# Step sizes
# ---------------------------------------------------------------------------


class TestAdaptiveStep:
    def test_first_round_uses_cap(self):
        history = np.array([[0.2, 0.7]])
        assert adaptive_step(history, 1, 0.9, 100) == pytest.approx(step_cap(0.9))

    def test_cap_value(self):
        assert step_cap(0.0) == pytest.approx(1 / 11)
        assert step_cap(0.9) == pytest.approx(1 / 1001)

    def test_large_changes_go_below_cap(self):
        history = np.array([[0.0, 0.0], [100.0, 0.0], [100.0, 100.0]])
        expected = np.log(2 * 10**2) / (np.sqrt(2e4) + 100.0)
        assert adaptive_step(history, 3, 0.0, 10) == pytest.approx(expected)

    def test_only_first_t_rows_are_used(self):
        history = np.array([[0.0, 0.0], [100.0, 0.0], [100.0, 100.0], [0.0, 0.0]])
        assert adaptive_step(history, 3, 0.0, 10) == adaptive_step(history[:3], 3, 0.0, 10)

    def test_batched_over_states(self):
        history = np.zeros((3, 2, 2))
        history[1, 0] = [100.0, 0.0]
        steps = adaptive_step(history, 3, 0.0, 10)
        assert steps.shape == (2,)
        assert steps[1] == pytest.approx(step_cap(0.0))
        assert steps[0] < steps[1]

    def test_bad_round_rejected(self):
        with pytest.raises(ValueError, match="t must be"):
            adaptive_step(np.zeros((2, 2)), 0, 0.5, 10)
        with pytest.raises(ValueError, match="history holds"):
            adaptive_step(np.zeros((2, 2)), 3, 0.5, 10)

    def test_rounds_track_history_formula(self):
        game = random_game(3, 3, 0.5, seed=4)
        matrix_set = build_greedy_matrices(game, _random_value(game, 4))
        horizon = 30
        state = OmdState.initial(matrix_set, horizon)
        history_x, history_f = [state.payoff_x], [state.payoff_f]
        for t in range(1, horizon + 1):
            state = omd_round(state, matrix_set, t)
            history_x.append(state.payoff_x)
            history_f.append(state.payoff_f)
            assert np.allclose(state.eta_x, adaptive_step(np.array(history_x), t, 0.5, horizon))
            assert np.allclose(state.eta_f, adaptive_step(np.array(history_f), t, 0.5, horizon))


# ---------------------------------------------------------------------------
# OMD rounds
# ---------------------------------------------------------------------------


class TestOmdRound:
    def test_initial_state_is_uniform(self):
        game = random_game(2, 4, 0.5, seed=2)
        state = OmdState.initial(build_greedy_matrices(game, np.zeros(2)), 50)
        assert np.allclose(state.x, 0.25)
        assert state.beta == pytest.approx(1 / 2500)

    def test_rounds_must_be_sequential(self):
        game = random_game(2, 2, 0.5, seed=2)
        matrix_set = build_greedy_matrices(game, np.zeros(2))
        state = OmdState.initial(matrix_set, 5)
        with pytest.raises(ValueError, match="round 2 cannot follow round 0"):
            omd_round(state, matrix_set, 2)

    def test_horizon_must_be_positive(self):
        game = random_game(2, 2, 0.5, seed=2)
        with pytest.raises(ValueError, match="T'"):
            OmdState.initial(build_greedy_matrices(game, np.zeros(2)), 0)

    def test_strategies_stay_on_simplex(self):
        game = random_game(3, 3, 0.9, seed=6)
        matrix_set = build_greedy_matrices(game, _random_value(game, 6))
        state = OmdState.initial(matrix_set, 200)
        for t in range(1, 201):
            state = omd_round(state, matrix_set, t)
        for strategy in (state.x, state.f, state.y_prime, state.g_prime):
            assert np.allclose(strategy.sum(axis=1), 1.0)
            assert np.all(strategy > 0)

    def test_three_rounds_match_scripted_reference(self):
        matrix = np.array([[0.9, 0.1], [0.3, 0.6]])
        game = single_state(matrix, 0.0)
        matrix_set = build_greedy_matrices(game, np.zeros(1))
        state = OmdState.initial(matrix_set, 3)

        eta, beta = 0.1, 1 / 9
        x = f = y_prime = g_prime = np.array([0.5, 0.5])
        for t in range(1, 4):
            state = omd_round(state, matrix_set, t, step=eta)
            loss, gain = x @ matrix, matrix @ f
            g = g_prime * np.exp(-eta * loss)
            g_prime = (1 - beta) * g / g.sum() + beta / 2
            y = y_prime * np.exp(eta * gain)
            y_prime = (1 - beta) * y / y.sum() + beta / 2
            f_next = g_prime * np.exp(-eta * loss)
            x_next = y_prime * np.exp(eta * gain)
            x, f = x_next / x_next.sum(), f_next / f_next.sum()
            assert np.allclose(state.x[0], x, atol=1e-10)
            assert np.allclose(state.f[0], f, atol=1e-10)

    def test_zero_step_keeps_uniform(self):
        game = random_game(2, 3, 0.5, seed=5)
        matrix_set = build_greedy_matrices(game, np.zeros(2))
        state = OmdState.initial(matrix_set, 10)
        for t in range(1, 11):
            state = omd_round(state, matrix_set, t, step=0.0)
        assert np.allclose(state.x, 1 / 3)
        assert np.allclose(state.f, 1 / 3)

    def test_secondary_sequences_respect_mixing_floor(self):
        game = single_state(np.array([[0.3, 0.5], [0.2, 0.4]]), 0.0)
        matrix_set = build_greedy_matrices(game, np.zeros(1))
        state = OmdState.initial(matrix_set, 20)
        for t in range(1, 21):
            state = omd_round(state, matrix_set, t, step=5.0)
        assert state.y_prime.min() >= state.beta / 2 - 1e-15
        assert state.g_prime.min() >= state.beta / 2 - 1e-15

    def test_constant_step_override(self):
        game = random_game(2, 2, 0.5, seed=2)
        matrix_set = build_greedy_matrices(game, np.zeros(2))
        state = omd_round(OmdState.initial(matrix_set, 5), matrix_set, 1, step=0.3)
        assert np.allclose(state.eta_x, 0.3)
        assert np.allclose(state.eta_f, 0.3)


# ---------------------------------------------------------------------------
# Full greedy step
# ---------------------------------------------------------------------------


class TestRunGreedy:
    def test_one_by_one_game(self):
        game = single_state(np.array([[0.3]]), 0.5)
        result = run_greedy(game, np.zeros(1), 10)
        assert result.x_bar.probs.tolist() == [[1.0]]
        assert result.max_gap == pytest.approx(0.0, abs=1e-15)

    def test_diagnostics_at_powers_of_two_and_horizon(self):
        game = random_game(2, 2, 0.5, seed=3)
        result = run_greedy(game, np.zeros(2), 20)
        assert list(result.diagnostics.columns) == DIAGNOSTIC_COLUMNS
        assert sorted(set(result.diagnostics["t"])) == [1, 2, 4, 8, 16, 20]
        assert len(result.final_gaps) == 2

    def test_single_round_returns_initial_strategies(self):
        game = random_game(3, 3, 0.8, seed=8)
        result = run_greedy(game, _random_value(game, 8), 1)
        assert np.allclose(result.x_bar.probs, 1 / 3)
        assert np.allclose(result.f_bar.probs, 1 / 3)

    def test_gap_equals_regret_sum(self):
        game = random_game(3, 2, 0.8, seed=10)
        result = run_greedy(game, _random_value(game, 10), 64)
        final = result.diagnostics[result.diagnostics["t"] == 64]
        assert np.allclose(final["gap"], (final["regret_x"] + final["regret_f"]) / 64, atol=1e-10)

    def test_matching_pennies_converges(self):
        game = single_state(MATCHING_PENNIES, 0.0)
        result = run_greedy(game, np.zeros(1), 2000)
        assert np.allclose(result.x_bar.probs, 0.5, atol=0.05)
        assert result.max_gap <= 0.05

    def test_pure_saddle(self):
        game = single_state(np.array([[0.3, 0.5], [0.2, 0.4]]), 0.0)
        result = run_greedy(game, np.zeros(1), 4000)
        assert result.x_bar.probs[0, 0] >= 0.95
        assert result.f_bar.probs[0, 0] >= 0.95
        assert result.max_gap <= 1e-2

    def test_sandwich_holds(self):
        for seed in range(5):
            game = random_game(3, 3, 0.8, seed=seed)
            matrix_set = build_greedy_matrices(game, _random_value(game, seed))
            result = run_greedy_matrices(matrix_set, 300)
            bounds = sandwich_bounds(matrix_set, result)
            slack = bounds["oracle_gap"] + 1e-9
            assert (bounds["lower"] <= bounds["value"] + slack).all()
            assert (bounds["value"] <= bounds["upper"] + slack).all()
            assert np.allclose(bounds["upper"] - bounds["lower"], result.final_gaps)

    def test_averaged_strategies_certify_matrix_value(self):
        matrix = np.random.default_rng(9).uniform(size=(3, 3))
        game = single_state(matrix, 0.0)
        result = run_greedy(game, np.zeros(1), 2000)
        value = matrix_game_solve(matrix).value
        lower = np.min(result.x_bar.probs[0] @ matrix)
        assert value - result.max_gap - 1e-9 <= lower <= value + 1e-9

    def test_gap_shrinks_with_horizon(self):
        ratios = []
        for seed in range(5):
            game = random_game(2 + seed % 2, 2, 0.5, seed=seed)
            matrix_set = build_greedy_matrices(game, _random_value(game, seed))
            short = run_greedy_matrices(matrix_set, 1000).max_gap
            long = run_greedy_matrices(matrix_set, 4000).max_gap
            ratios.append(long / short if short > 1e-12 else 0.0)
        assert np.median(ratios) <= 0.6

    @pytest.mark.slow
    def test_gap_shrinks_with_horizon_many_games(self):
        ratios = []
        for seed in range(20):
            game = random_game(3, 3, 0.5 + 0.4 * (seed % 2), seed=seed)
            matrix_set = build_greedy_matrices(game, _random_value(game, seed))
            short = run_greedy_matrices(matrix_set, 1000).max_gap
            long = run_greedy_matrices(matrix_set, 4000).max_gap
            ratios.append(long / short if short > 1e-12 else 0.0)
        assert np.median(ratios) <= 0.6
