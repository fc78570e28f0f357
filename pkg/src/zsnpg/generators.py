"""Seeded game generators used by the CLI, the harness and the tests."""

from __future__ import annotations

from typing import Any

import numpy as np

from .game import MarkovGame

GENERATORS = ("random", "matching_pennies_chain", "single_state")

MATCHING_PENNIES = np.array([[1.0, 0.0], [0.0, 1.0]])


def random_game(n_states: int, n_actions: int, gamma: float, seed: int) -> MarkovGame:
    """Transition rows from a symmetric Dirichlet(1), rewards uniform on [0, 1]."""
    if n_states < 1 or n_actions < 1:
        raise ValueError(f"need n_states, n_actions >= 1, got {n_states}, {n_actions}")
    rng = np.random.default_rng(seed)
    transition = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions, n_actions))
    # rows must sum to one within the validator's tolerance
    transition /= transition.sum(axis=-1, keepdims=True)
    reward = rng.uniform(0.0, 1.0, size=(n_states, n_actions, n_actions))
    return MarkovGame(transition=transition, reward=reward, gamma=gamma)


def matching_pennies_chain(n_states: int, gamma: float) -> MarkovGame:
    """Matching pennies at every state of a ring.

    Matching actions advance to the next state, mismatched actions stay.
    Every state is the same game, so V* = 0.5 / (1 - gamma) everywhere.
    """
    if n_states < 1:
        raise ValueError(f"need n_states >= 1, got {n_states}")
    transition = np.zeros((n_states, 2, 2, n_states))
    for s in range(n_states):
        for a in range(2):
            for b in range(2):
                transition[s, a, b, (s + 1) % n_states if a == b else s] = 1.0
    reward = np.broadcast_to(MATCHING_PENNIES, (n_states, 2, 2)).copy()
    return MarkovGame(transition=transition, reward=reward, gamma=gamma)


def single_state(matrix: np.ndarray, gamma: float) -> MarkovGame:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"single_state needs a square payoff matrix, got shape {matrix.shape}")
    n = matrix.shape[0]
    return MarkovGame(transition=np.ones((1, n, n, 1)), reward=matrix[None], gamma=gamma)


def _build(kind: str, params: dict[str, Any], gamma: float, seed: int) -> MarkovGame:
    if kind == "random":
        return random_game(int(params.pop("n_states")), int(params.pop("n_actions")), gamma, seed)
    if kind == "matching_pennies_chain":
        return matching_pennies_chain(int(params.pop("n_states", 3)), gamma)
    if kind == "single_state":
        return single_state(params.pop("matrix"), gamma)
    raise ValueError(f"Unknown generator: {kind!r} (expected one of {', '.join(GENERATORS)})")


def generate_game(kind: str, params: dict[str, Any], seed: int = 0) -> MarkovGame:
    """Build a game by generator name; unknown kinds or parameters raise ValueError."""
    params = dict(params)
    gamma = float(params.pop("gamma", 0.9))
    try:
        game = _build(kind, params, gamma, seed)
    except KeyError as exc:
        raise ValueError(f"generator {kind!r} is missing parameter {exc.args[0]!r}") from exc
    if params:
        raise ValueError(f"generator {kind!r} got unexpected parameter(s): {', '.join(sorted(params))}")
    return game
