"""Tests for zsnpg.generators module."""

from __future__ import annotations

import numpy as np
import pytest

from zsnpg.generators import (
    MATCHING_PENNIES,
    generate_game,
    matching_pennies_chain,
    random_game,
    single_state,
)
from zsnpg.oracle import shapley_value_iteration


class TestRandomGame:
    def test_same_seed_same_game(self):
        first = random_game(3, 2, 0.9, seed=11)
        second = random_game(3, 2, 0.9, seed=11)
        assert np.array_equal(first.transition, second.transition)
        assert np.array_equal(first.reward, second.reward)

    def test_different_seeds_differ(self):
        assert not np.array_equal(random_game(3, 2, 0.9, seed=1).reward, random_game(3, 2, 0.9, seed=2).reward)

    def test_shapes_and_ranges(self):
        game = random_game(4, 3, 0.7, seed=0)
        assert game.transition.shape == (4, 3, 3, 4)
        assert np.allclose(game.transition.sum(axis=-1), 1.0)
        assert game.reward.min() >= 0.0
        assert game.reward.max() <= 1.0

    def test_bad_sizes(self):
        with pytest.raises(ValueError, match="n_states, n_actions >= 1"):
            random_game(0, 2, 0.9, seed=0)


class TestKnownValues:
    def test_single_state_matching_pennies(self):
        certificate = shapley_value_iteration(single_state(MATCHING_PENNIES, 0.9), 1e-10)
        assert certificate.v_star[0] == pytest.approx(5.0, abs=1e-6)

    def test_chain_value_is_uniform(self):
        game = matching_pennies_chain(3, 0.9)
        certificate = shapley_value_iteration(game, 1e-10)
        assert np.allclose(certificate.v_star, 5.0, atol=1e-6)

    def test_chain_moves_on_match(self):
        game = matching_pennies_chain(3, 0.5)
        assert game.transition[2, 1, 1, 0] == 1.0
        assert game.transition[2, 0, 1, 2] == 1.0

    def test_single_state_needs_square_matrix(self):
        with pytest.raises(ValueError, match="square"):
            single_state(np.ones((1, 2)), 0.5)


class TestGenerateGame:
    def test_random_by_name(self):
        game = generate_game("random", {"n_states": 2, "n_actions": 3, "gamma": 0.5}, seed=4)
        assert game.gamma == 0.5
        assert np.array_equal(game.reward, random_game(2, 3, 0.5, seed=4).reward)

    def test_default_gamma(self):
        assert generate_game("matching_pennies_chain", {}).gamma == 0.9

    def test_matrix_parameter(self):
        game = generate_game("single_state", {"matrix": [[0.2, 0.8], [0.6, 0.4]], "gamma": 0.0})
        assert game.reward[0, 0, 1] == 0.8

    def test_params_are_not_mutated(self):
        params = {"n_states": 2, "n_actions": 2}
        generate_game("random", params, seed=0)
        assert params == {"n_states": 2, "n_actions": 2}

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="Unknown generator"):
            generate_game("grid", {})

    def test_missing_parameter(self):
        with pytest.raises(ValueError, match="missing parameter 'n_actions'"):
            generate_game("random", {"n_states": 2})

    def test_unexpected_parameter(self):
        with pytest.raises(ValueError, match="unexpected parameter"):
            generate_game("matching_pennies_chain", {"n_states": 2, "size": 4})
