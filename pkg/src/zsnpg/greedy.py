"""Greedy step: per-state matrix games against a frozen value function.

Each state's game A_s(a, b) = r(s,a,b) + gamma * sum_s' P(s'|s,a,b) V_prev(s')
is played by two optimistic mirror descent learners (negative-entropy mirror
map, secondary sequences mixed with the uniform distribution, adaptive step
sizes). All states run in lockstep as one batched array computation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .errors import GameValidationError
from .game import MarkovGame, TabularPolicy, check_value

logger = logging.getLogger(__name__)

RANGE_TOL = 1e-9
DIAGNOSTIC_COLUMNS = ["state", "t", "gap", "regret_x", "regret_f", "eta_x", "eta_f"]


@dataclass(frozen=True, eq=False)
class GreedyMatrixSet:
    """Matrices A_s built from V_prev, stacked as [state][a][b]."""

    matrices: np.ndarray
    v_prev: np.ndarray
    gamma: float

    @property
    def n_states(self) -> int:
        return self.matrices.shape[0]

    @property
    def n_actions(self) -> int:
        return self.matrices.shape[1]


def build_greedy_matrices(game: MarkovGame, v_prev: np.ndarray) -> GreedyMatrixSet:
    v = check_value(game, v_prev, name="v_prev")
    if np.min(v) < -RANGE_TOL or np.max(v) > game.value_bound + RANGE_TOL:
        raise GameValidationError(
            f"v_prev must lie in [0, {game.value_bound:g}], got range [{np.min(v):g}, {np.max(v):g}]"
        )
    return GreedyMatrixSet(matrices=game.stage_matrices(v), v_prev=v, gamma=game.gamma)


def step_cap(gamma: float) -> float:
    return 1.0 / (1.0 + 10.0 / (1.0 - gamma) ** 2)


def _step_from_sums(s1: np.ndarray, s2: np.ndarray, numer: float, cap: float) -> np.ndarray:
    denom = np.sqrt(s1) + np.sqrt(s2)
    safe = np.where(denom > 0, denom, 1.0)
    return np.where(denom > 0, np.minimum(numer / safe, cap), cap)


def adaptive_step(history: np.ndarray, t: int, gamma: float, horizon: int) -> float | np.ndarray:
    """Adaptive OMD step size eta_t from the opponent-generated payoff vectors.

    `history[i]` is the payoff vector observed against the opponent's play
    at round i (row 0 is the initial play). With Delta_i = history[i] -
    history[i-1] and the dual norm taken as the max norm,

        eta_t = min(log(|A| T'^2) / (sqrt(sum_{i<=t-1} |Delta_i|^2)
                                     + sqrt(sum_{i<=t-2} |Delta_i|^2)),
                    1 / (1 + 10 / (1-gamma)^2)).

    Extra leading axes (e.g. one per state) are carried through.
    """
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    history = np.asarray(history, dtype=float)
    if history.shape[0] < t:
        raise ValueError(f"history holds {history.shape[0]} payoff vectors, need {t}")
    sq = np.max(np.abs(np.diff(history[:t], axis=0)), axis=-1) ** 2
    numer = np.log(history.shape[-1] * float(horizon) ** 2)
    eta = _step_from_sums(sq.sum(axis=0), sq[:-1].sum(axis=0), numer, step_cap(gamma))
    return float(eta) if eta.ndim == 0 else eta


@dataclass(frozen=True, eq=False)
class OmdState:
    """Both players' OMD sequences for every state after `t` completed rounds.

    `x`/`f` are the strategies to play in round t+1, `y_prime`/`g_prime` the
    mixed secondary sequences y'_t/g'_t. `payoff_x` = A_s f_t and
    `payoff_f` = A_s^T x_t are the latest observed payoff vectors;
    `sq_x`/`sq_f` hold the running sums of squared max-norm payoff changes
    through round t and through round t-1, which is all the adaptive step
    sizes need.
    """

    x: np.ndarray
    f: np.ndarray
    y_prime: np.ndarray
    g_prime: np.ndarray
    payoff_x: np.ndarray
    payoff_f: np.ndarray
    sq_x: tuple[np.ndarray, np.ndarray]
    sq_f: tuple[np.ndarray, np.ndarray]
    beta: float
    horizon: int
    t: int
    sum_x: np.ndarray
    sum_f: np.ndarray
    cum_gain_x: np.ndarray
    cum_loss_f: np.ndarray
    cum_value: np.ndarray
    eta_x: np.ndarray
    eta_f: np.ndarray

    @classmethod
    def initial(cls, matrix_set: GreedyMatrixSet, horizon: int) -> OmdState:
        if horizon < 1:
            raise ValueError(f"T' must be >= 1, got {horizon}")
        n_states, n_actions = matrix_set.n_states, matrix_set.n_actions
        uniform = np.full((n_states, n_actions), 1.0 / n_actions)
        zeros = np.zeros((n_states, n_actions))
        no_changes = (np.zeros(n_states), np.zeros(n_states))
        return cls(
            x=uniform,
            f=uniform,
            y_prime=uniform,
            g_prime=uniform,
            payoff_x=np.einsum("sab,sb->sa", matrix_set.matrices, uniform),
            payoff_f=np.einsum("sa,sab->sb", uniform, matrix_set.matrices),
            sq_x=no_changes,
            sq_f=no_changes,
            beta=1.0 / horizon**2,
            horizon=horizon,
            t=0,
            sum_x=zeros,
            sum_f=zeros,
            cum_gain_x=zeros,
            cum_loss_f=zeros,
            cum_value=np.zeros(n_states),
            eta_x=np.zeros(n_states),
            eta_f=np.zeros(n_states),
        )


def _exp_weights(base: np.ndarray, exponent: np.ndarray) -> np.ndarray:
    shifted = exponent - exponent.max(axis=1, keepdims=True)
    weights = base * np.exp(shifted)
    return weights / weights.sum(axis=1, keepdims=True)


def _advance(
    sums: tuple[np.ndarray, np.ndarray], previous: np.ndarray, current: np.ndarray, numer: float, cap: float
) -> tuple[np.ndarray, np.ndarray, tuple[np.ndarray, np.ndarray]]:
    """eta_t, eta_{t+1} and the updated running sums after observing round t's payoff."""
    through_prev, through_prev2 = sums
    eta_now = _step_from_sums(through_prev, through_prev2, numer, cap)
    through_now = through_prev + np.max(np.abs(current - previous), axis=-1) ** 2
    eta_next = _step_from_sums(through_now, through_prev, numer, cap)
    return eta_now, eta_next, (through_now, through_prev)


def omd_round(
    state: OmdState, matrix_set: GreedyMatrixSet, t: int, *, step: float | None = None
) -> OmdState:
    """Play round t of optimistic mirror descent for both players in every state.

    Passing `step` replaces both adaptive step-size sequences by a constant.
    """
    if t != state.t + 1 or t > state.horizon:
        raise ValueError(f"round {t} cannot follow round {state.t} with horizon {state.horizon}")
    A = matrix_set.matrices
    n_actions = matrix_set.n_actions
    gain = np.einsum("sab,sb->sa", A, state.f)
    loss = np.einsum("sa,sab->sb", state.x, A)

    numer = np.log(n_actions * float(state.horizon) ** 2)
    cap = step_cap(matrix_set.gamma)
    eta_f, eta_f_next, sq_f = _advance(state.sq_f, state.payoff_f, loss, numer, cap)
    eta_x, eta_x_next, sq_x = _advance(state.sq_x, state.payoff_x, gain, numer, cap)
    if step is not None:
        eta_f = eta_f_next = eta_x = eta_x_next = np.full(matrix_set.n_states, float(step))

    beta = state.beta
    g = _exp_weights(state.g_prime, -eta_f[:, None] * loss)
    g_prime = (1.0 - beta) * g + beta / n_actions
    f_next = _exp_weights(g_prime, -eta_f_next[:, None] * loss)

    y = _exp_weights(state.y_prime, eta_x[:, None] * gain)
    y_prime = (1.0 - beta) * y + beta / n_actions
    x_next = _exp_weights(y_prime, eta_x_next[:, None] * gain)

    return replace(
        state,
        x=x_next,
        f=f_next,
        y_prime=y_prime,
        g_prime=g_prime,
        payoff_x=gain,
        payoff_f=loss,
        sq_x=sq_x,
        sq_f=sq_f,
        t=t,
        sum_x=state.sum_x + state.x,
        sum_f=state.sum_f + state.f,
        cum_gain_x=state.cum_gain_x + gain,
        cum_loss_f=state.cum_loss_f + loss,
        cum_value=state.cum_value + np.einsum("sa,sa->s", state.x, gain),
        eta_x=eta_x,
        eta_f=eta_f,
    )


@dataclass(frozen=True, eq=False)
class GreedyResult:
    x_bar: TabularPolicy
    f_bar: TabularPolicy
    diagnostics: pd.DataFrame
    state: OmdState

    @property
    def final_gaps(self) -> np.ndarray:
        final = self.diagnostics[self.diagnostics["t"] == self.state.t]
        return final.sort_values("state")["gap"].to_numpy()

    @property
    def max_gap(self) -> float:
        return float(self.final_gaps.max())


def _diagnostic_rows(state: OmdState) -> list[dict]:
    regret_f = state.cum_value - state.cum_loss_f.min(axis=1)
    regret_x = state.cum_gain_x.max(axis=1) - state.cum_value
    gap = (state.cum_gain_x.max(axis=1) - state.cum_loss_f.min(axis=1)) / state.t
    return [
        {
            "state": s,
            "t": state.t,
            "gap": float(gap[s]),
            "regret_x": float(regret_x[s]),
            "regret_f": float(regret_f[s]),
            "eta_x": float(state.eta_x[s]),
            "eta_f": float(state.eta_f[s]),
        }
        for s in range(len(gap))
    ]


def _averaged(total: np.ndarray) -> TabularPolicy:
    return TabularPolicy(probs=total / total.sum(axis=1, keepdims=True))


def run_greedy_matrices(
    matrix_set: GreedyMatrixSet, horizon: int, *, step: float | None = None
) -> GreedyResult:
    """Run T' OMD rounds; diagnostics are recorded at powers of two and at T'."""
    state = OmdState.initial(matrix_set, horizon)
    checkpoints = {2**i for i in range(horizon.bit_length())} | {horizon}
    rows: list[dict] = []
    for t in range(1, horizon + 1):
        state = omd_round(state, matrix_set, t, step=step)
        if t in checkpoints:
            rows.extend(_diagnostic_rows(state))
    return GreedyResult(
        x_bar=_averaged(state.sum_x),
        f_bar=_averaged(state.sum_f),
        diagnostics=pd.DataFrame(rows, columns=DIAGNOSTIC_COLUMNS),
        state=state,
    )


def run_greedy(game: MarkovGame, v_prev: np.ndarray, horizon: int) -> GreedyResult:
    """Greedy step of the population algorithm: averaged OMD strategies against V_prev."""
    result = run_greedy_matrices(build_greedy_matrices(game, v_prev), horizon)
    logger.debug("greedy step T'=%d: max gap %.3e", horizon, result.max_gap)
    return result


def sandwich_bounds(matrix_set: GreedyMatrixSet, result: GreedyResult) -> pd.DataFrame:
    """Per-state inf_f phi(f, x_bar) <= matrix value <= sup_x phi(f_bar, x).

    The matrix value comes from the certified oracle; `oracle_gap` is its
    certificate, the slack allowed when checking the chain.
    """
    from .oracle import matrix_game_solve

    rows = []
    for s, matrix in enumerate(matrix_set.matrices):
        solution = matrix_game_solve(matrix)
        lower = float(np.min(result.x_bar.probs[s] @ matrix))
        upper = float(np.max(matrix @ result.f_bar.probs[s]))
        rows.append(
            {
                "state": s,
                "lower": lower,
                "value": solution.value,
                "upper": upper,
                "oracle_gap": solution.duality_gap,
            }
        )
    return pd.DataFrame(rows)
