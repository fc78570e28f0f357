"""Tabular zero-sum Markov games: types, exact evaluation and Bellman operators."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import linalg
from scipy.special import logsumexp, softmax

from .errors import GameValidationError, NumericsError

logger = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-12
RESIDUAL_TOL = 1e-10
LOG_FLOOR = 1e-300
BELLMAN_SOLVER_TOL = 1e-9
MAX_REPORTED_PROBLEMS = 20

BellmanMode = Literal["joint", "max_player_fixed", "full"]


def _collect(problems: list[str], message: str) -> None:
    if len(problems) < MAX_REPORTED_PROBLEMS:
        problems.append(message)


def validate_game_arrays(
    transition: np.ndarray, reward: np.ndarray, gamma: float
) -> list[str]:
    """Return a list of invariant violations (empty when the game is valid)."""
    problems: list[str] = []
    if reward.ndim != 3 or reward.shape[1] != reward.shape[2]:
        return [f"reward: expected shape [s][a][b] with a square action grid, got {reward.shape}"]
    n_states, n_actions, _ = reward.shape
    expected = (n_states, n_actions, n_actions, n_states)
    if transition.shape != expected:
        return [f"transition: expected shape {list(expected)}, got {list(transition.shape)}"]
    if n_states < 1 or n_actions < 1:
        return ["game must have at least one state and one action"]

    if not (0.0 <= gamma < 1.0):
        _collect(problems, f"gamma: must lie in [0, 1), got {gamma}")

    bad_reward = ~np.isfinite(reward) | (reward < 0.0) | (reward > 1.0)
    for s, a, b in zip(*np.nonzero(bad_reward)):
        _collect(problems, f"reward[{s}][{a}][{b}] = {float(reward[s, a, b])!r} outside [0, 1]")

    bad_entry = ~np.isfinite(transition) | (transition < 0.0)
    for s, a, b, t in zip(*np.nonzero(bad_entry)):
        _collect(problems, f"transition[{s}][{a}][{b}][{t}] = {float(transition[s, a, b, t])!r} is negative or not finite")

    sums = transition.sum(axis=-1)
    bad_sum = ~np.isfinite(sums) | (np.abs(sums - 1.0) > SIMPLEX_TOL)
    for s, a, b in zip(*np.nonzero(bad_sum)):
        _collect(problems, f"transition[{s}][{a}][{b}] sums to {float(sums[s, a, b])!r}, expected 1")
    return problems


@dataclass(frozen=True, eq=False)
class MarkovGame:
    """Full tabular description (S, A, P, r, gamma) of a zero-sum Markov game.

    Both players share the action set. `transition[s, a, b]` is the
    next-state distribution and `reward[s, a, b]` the max player's payoff.
    """

    transition: np.ndarray
    reward: np.ndarray
    gamma: float

    def __post_init__(self) -> None:
        transition = np.array(self.transition, dtype=float)
        reward = np.array(self.reward, dtype=float)
        gamma = float(self.gamma)
        problems = validate_game_arrays(transition, reward, gamma)
        if problems:
            raise GameValidationError("invalid Markov game", problems)
        transition.setflags(write=False)
        reward.setflags(write=False)
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "gamma", gamma)

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    @property
    def value_bound(self) -> float:
        """Upper end 1/(1-gamma) of the plain value range."""
        return 1.0 / (1.0 - self.gamma)

    def stage_matrices(self, v: np.ndarray) -> np.ndarray:
        """Per-state one-step backup r(s,a,b) + gamma * sum_s' P(s'|s,a,b) v(s')."""
        return self.reward + self.gamma * (self.transition @ v)


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    """Per-state action distributions, optionally softmax-parameterized."""

    probs: np.ndarray
    logits: np.ndarray | None = None

    def __post_init__(self) -> None:
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 2:
            raise GameValidationError(f"policy probs must be a [state][action] matrix, got shape {probs.shape}")
        problems = []
        if np.any(probs < 0.0) or not np.all(np.isfinite(probs)):
            problems.append("probs: entries must be finite and non-negative")
        sums = probs.sum(axis=1)
        for s in np.nonzero(np.abs(sums - 1.0) > SIMPLEX_TOL)[0]:
            problems.append(f"probs[{s}] sums to {float(sums[s])!r}, expected 1")
        logits = self.logits
        if logits is not None:
            logits = np.array(logits, dtype=float)
            if logits.shape != probs.shape:
                problems.append(f"logits shape {logits.shape} does not match probs shape {probs.shape}")
            elif np.max(np.abs(softmax(logits, axis=1) - probs)) > SIMPLEX_TOL:
                problems.append("probs are not the softmax of logits")
            logits.setflags(write=False)
        if problems:
            raise GameValidationError("invalid policy", problems)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "logits", logits)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> TabularPolicy:
        return cls.from_logits(np.zeros((n_states, n_actions)))

    @classmethod
    def from_logits(cls, logits: np.ndarray) -> TabularPolicy:
        """Build a softmax policy; logits are shift-normalized to per-state mean zero."""
        logits = np.asarray(logits, dtype=float)
        shifted = logits - logits.mean(axis=1, keepdims=True)
        return cls(probs=softmax(shifted, axis=1), logits=shifted)

    @classmethod
    def deterministic(cls, actions: np.ndarray, n_actions: int) -> TabularPolicy:
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((actions.size, n_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs=probs)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    def log_probs(self) -> np.ndarray:
        if self.logits is not None:
            return self.logits - logsumexp(self.logits, axis=1, keepdims=True)
        return np.log(np.maximum(self.probs, LOG_FLOOR))

    def with_logits(self) -> TabularPolicy:
        """Return a softmax-parameterized copy (log-probabilities as logits)."""
        if self.logits is not None:
            return self
        return TabularPolicy.from_logits(self.log_probs())

    def entropy(self) -> np.ndarray:
        """Per-state Shannon entropy -sum_b pi(b|s) log pi(b|s)."""
        return -np.sum(self.probs * self.log_probs(), axis=1)


@dataclass(frozen=True, eq=False)
class QTensor:
    """Q[s, a, b] together with the state values it was backed up from."""

    q: np.ndarray
    v: np.ndarray

    @property
    def advantage(self) -> np.ndarray:
        return self.q - self.v[:, None, None]

    def weighted(self, pi1: TabularPolicy, *, advantage: bool = True) -> np.ndarray:
        """Average out the max player's action: sum_a pi1(a|s) A(s,a,b) (or Q)."""
        target = self.advantage if advantage else self.q
        return np.einsum("sa,sab->sb", pi1.probs, target)


# ---------------------------------------------------------------------------
# Distributions and input checks
# ---------------------------------------------------------------------------


def uniform_dist(n_states: int) -> np.ndarray:
    return np.full(n_states, 1.0 / n_states)


def as_state_dist(weights, n_states: int, *, name: str = "distribution") -> np.ndarray:
    """Validate a distribution over states and return it as a float array."""
    dist = np.asarray(weights, dtype=float)
    if dist.shape != (n_states,):
        raise GameValidationError(f"{name}: expected {n_states} weights, got shape {dist.shape}")
    if np.any(dist < 0.0) or not np.all(np.isfinite(dist)):
        raise GameValidationError(f"{name}: weights must be finite and non-negative")
    if abs(dist.sum() - 1.0) > SIMPLEX_TOL:
        raise GameValidationError(f"{name}: weights sum to {float(dist.sum())!r}, expected 1")
    return dist


def check_policy(game: MarkovGame, policy: TabularPolicy, *, name: str = "policy") -> None:
    expected = (game.n_states, game.n_actions)
    if policy.probs.shape != expected:
        raise GameValidationError(f"{name}: shape {policy.probs.shape} does not match game dimensions {expected}")


def check_value(game: MarkovGame, v: np.ndarray, *, name: str = "value") -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (game.n_states,):
        raise GameValidationError(f"{name}: expected {game.n_states} entries, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise GameValidationError(f"{name}: entries must be finite")
    return v


# ---------------------------------------------------------------------------
# Exact evaluation
# ---------------------------------------------------------------------------


def policy_kernel(
    game: MarkovGame, pi1: TabularPolicy, pi2: TabularPolicy
) -> tuple[np.ndarray, np.ndarray]:
    """Expected stage reward r_pi[s] and state transition matrix P_pi[s, s']."""
    check_policy(game, pi1, name="pi1")
    check_policy(game, pi2, name="pi2")
    joint = pi1.probs[:, :, None] * pi2.probs[:, None, :]
    r_pi = np.einsum("sab,sab->s", joint, game.reward)
    p_pi = np.einsum("sab,sabt->st", joint, game.transition)
    return r_pi, p_pi


def _discounted_solve(
    gamma: float, p_pi: np.ndarray, rhs: np.ndarray, *, transpose: bool = False
) -> np.ndarray:
    """Solve (I - gamma P) x = rhs (or its transpose) by dense LU."""
    system = np.eye(p_pi.shape[0]) - gamma * p_pi
    try:
        lu = linalg.lu_factor(system)
        x = linalg.lu_solve(lu, rhs, trans=1 if transpose else 0)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericsError(f"discounted linear solve failed: {exc}") from exc
    matrix = system.T if transpose else system
    residual = np.max(np.abs(matrix @ x - rhs)) if x.size else 0.0
    if not np.all(np.isfinite(x)) or residual > RESIDUAL_TOL * max(1.0, float(np.max(np.abs(x)))):
        raise NumericsError(f"discounted linear solve residual {residual:.3e} exceeds tolerance")
    return x


def evaluate_value(game: MarkovGame, pi1: TabularPolicy, pi2: TabularPolicy) -> np.ndarray:
    """Exact V^{pi1,pi2}: the solution of V = r_pi + gamma P_pi V."""
    r_pi, p_pi = policy_kernel(game, pi1, pi2)
    return _discounted_solve(game.gamma, p_pi, r_pi)


def evaluate_regularized_value(
    game: MarkovGame, pi1: TabularPolicy, pi2: TabularPolicy, tau: float
) -> np.ndarray:
    """Entropy-regularized V_tau^{pi1,pi2} = V - tau * H for the min player, per state.

    Equivalent to evaluating the stage cost r_pi(s) + tau * sum_b pi2(b|s) log pi2(b|s).
    """
    r_pi, p_pi = policy_kernel(game, pi1, pi2)
    return _discounted_solve(game.gamma, p_pi, r_pi - tau * pi2.entropy())


def entropy_term(
    game: MarkovGame, pi1: TabularPolicy, pi2: TabularPolicy, sigma: np.ndarray
) -> float:
    """H(sigma, pi2) = 1/(1-gamma) E_{s~d_sigma} E_{b~pi2} log 1/pi2(b|s)."""
    sigma = as_state_dist(sigma, game.n_states, name="sigma")
    _, p_pi = policy_kernel(game, pi1, pi2)
    return float(sigma @ _discounted_solve(game.gamma, p_pi, pi2.entropy()))


def q_and_advantage(game: MarkovGame, pi1: TabularPolicy, pi2: TabularPolicy) -> QTensor:
    v = evaluate_value(game, pi1, pi2)
    return QTensor(q=game.stage_matrices(v), v=v)


def regularized_q(
    game: MarkovGame, pi1: TabularPolicy, pi2: TabularPolicy, tau: float
) -> QTensor:
    """Q_tau(s,a,b) = r(s,a,b) + gamma E_{s'} V_tau(s')."""
    v_tau = evaluate_regularized_value(game, pi1, pi2, tau)
    return QTensor(q=game.stage_matrices(v_tau), v=v_tau)


def visitation(
    game: MarkovGame, pi1: TabularPolicy, pi2: TabularPolicy, start: np.ndarray
) -> np.ndarray:
    """Discounted state occupancy d = (1-gamma) sum_t gamma^t start P_pi^t."""
    start = as_state_dist(start, game.n_states, name="start")
    _, p_pi = policy_kernel(game, pi1, pi2)
    d = _discounted_solve(game.gamma, p_pi, (1.0 - game.gamma) * start, transpose=True)
    if np.min(d) < -RESIDUAL_TOL or abs(d.sum() - 1.0) > RESIDUAL_TOL:
        raise NumericsError(f"visitation left the simplex (min {np.min(d):.3e}, sum {d.sum():.12f})")
    return np.clip(d, 0.0, None)


# ---------------------------------------------------------------------------
# Bellman operators
# ---------------------------------------------------------------------------


def bellman_apply(
    game: MarkovGame,
    v: np.ndarray,
    mode: BellmanMode,
    pi1: TabularPolicy | None = None,
    pi2: TabularPolicy | None = None,
) -> np.ndarray:
    """Apply T_{pi1,pi2} ("joint"), T_{pi1} ("max_player_fixed") or T ("full") to v."""
    v = check_value(game, v)
    stage = game.stage_matrices(v)
    if mode == "joint":
        if pi1 is None or pi2 is None:
            raise ValueError("joint Bellman operator needs both policies")
        check_policy(game, pi1, name="pi1")
        check_policy(game, pi2, name="pi2")
        return np.einsum("sa,sab,sb->s", pi1.probs, stage, pi2.probs)
    if mode == "max_player_fixed":
        if pi1 is None:
            raise ValueError("max_player_fixed Bellman operator needs pi1")
        check_policy(game, pi1, name="pi1")
        # inf over pi2 is attained at a pure column
        return np.einsum("sa,sab->sb", pi1.probs, stage).min(axis=1)
    if mode == "full":
        from .oracle import matrix_game_solve

        return np.array([matrix_game_solve(m, BELLMAN_SOLVER_TOL).value for m in stage])
    raise ValueError(f"Unknown Bellman mode: {mode!r}")


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------


def _require_logits(pi2: TabularPolicy) -> None:
    if pi2.logits is None:
        raise GameValidationError("pi2 must be softmax-parameterized (logits missing)")


def policy_gradient_min(
    game: MarkovGame,
    pi1: TabularPolicy,
    pi2: TabularPolicy,
    sigma: np.ndarray,
    *,
    baseline: bool = True,
) -> np.ndarray:
    """Exact gradient of V^{pi1,pi2}(sigma) with respect to the min player's logits.

    Returns the flattened [state][action] gradient
    1/(1-gamma) E_{s~d_sigma} E_a E_b grad log pi2(b|s) * A(s,a,b); with
    ``baseline=False`` Q replaces A, which gives the same vector.
    """
    _require_logits(pi2)
    qt = q_and_advantage(game, pi1, pi2)
    weighted = qt.weighted(pi1, advantage=baseline)
    d = visitation(game, pi1, pi2, sigma)
    p = pi2.probs
    # d/d theta[s, c] of log pi(b|s) = 1[b = c] - pi(c|s)
    score_weighted = p * weighted - p * np.sum(p * weighted, axis=1, keepdims=True)
    return (d[:, None] * score_weighted / (1.0 - game.gamma)).ravel()


def fisher_matrix(
    game: MarkovGame, pi1: TabularPolicy, pi2: TabularPolicy, sigma: np.ndarray
) -> np.ndarray:
    """F_sigma = E_{s~d_sigma} E_{b~pi2} score score^T over the flattened logits."""
    _require_logits(pi2)
    d = visitation(game, pi1, pi2, sigma)
    p = pi2.probs
    blocks = [d[s] * (np.diag(p[s]) - np.outer(p[s], p[s])) for s in range(game.n_states)]
    return linalg.block_diag(*blocks)
