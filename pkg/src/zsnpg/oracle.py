"""Ground-truth solvers used to validate the learning algorithms.

Everything here is exact (or certified to a stated tolerance) and shares no
code with the mirror-descent subroutine under test: matrix games are solved
by multiplicative-weights self-play with Shapley-Snow kernel polishing, the
minimax value function by Shapley value iteration, and the min player's best
response by value iteration followed by policy iteration.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import BudgetError, NumericsError, OracleError
from .game import (
    MarkovGame,
    TabularPolicy,
    as_state_dist,
    check_policy,
    evaluate_regularized_value,
    evaluate_value,
)

logger = logging.getLogger(__name__)

MATRIX_SOLVER_TOL = 1e-9
BEST_RESPONSE_TOL = 1e-10
MAX_KERNEL_ACTIONS = 8
MAX_ENUMERATION = 4096
SUPPORT_THRESHOLDS = (0.1, 0.01, 1e-3, 1e-5)


@dataclass(frozen=True, eq=False)
class MatrixGameSolution:
    """Mixed strategies for max_x min_f x^T A f with an exact duality-gap certificate."""

    row_strategy: np.ndarray
    col_strategy: np.ndarray
    value: float
    duality_gap: float
    iterations: int = 0

    def to_dict(self) -> dict:
        return {
            "row_strategy": self.row_strategy.tolist(),
            "col_strategy": self.col_strategy.tolist(),
            "value": self.value,
            "duality_gap": self.duality_gap,
            "iterations": self.iterations,
        }


@dataclass(frozen=True, eq=False)
class NashCertificate:
    """V* with per-state equilibrium strategies and its Bellman residual."""

    v_star: np.ndarray
    pi1_star: TabularPolicy
    pi2_star: TabularPolicy
    residual: float
    tol: float
    sweeps: int

    def value_at(self, rho: np.ndarray) -> float:
        return float(np.dot(rho, self.v_star))

    def to_dict(self) -> dict:
        return {
            "v_star": self.v_star.tolist(),
            "pi1_star": self.pi1_star.probs.tolist(),
            "pi2_star": self.pi2_star.probs.tolist(),
            "residual": self.residual,
            "tol": self.tol,
            "sweeps": self.sweeps,
        }


# ---------------------------------------------------------------------------
# Matrix games
# ---------------------------------------------------------------------------


def duality_gap(matrix: np.ndarray, x: np.ndarray, f: np.ndarray) -> float:
    """max_a (A f)_a - min_b (x^T A)_b, computed from pure best responses."""
    return float(np.max(matrix @ f) - np.min(x @ matrix))


def _certify(matrix: np.ndarray, x: np.ndarray, f: np.ndarray, iterations: int) -> MatrixGameSolution:
    upper = float(np.max(matrix @ f))
    lower = float(np.min(x @ matrix))
    return MatrixGameSolution(
        row_strategy=x,
        col_strategy=f,
        value=0.5 * (upper + lower),
        duality_gap=max(upper - lower, 0.0),
        iterations=iterations,
    )


def _equalizer(sub: np.ndarray) -> np.ndarray | None:
    """Solve y^T sub = v 1^T, sum(y) = 1 on a square kernel; None if singular or infeasible."""
    k = sub.shape[0]
    system = np.zeros((k + 1, k + 1))
    system[:k, :k] = sub.T
    system[:k, k] = -1.0
    system[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    try:
        solution = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError:
        return None
    y = solution[:k]
    if not np.all(np.isfinite(y)) or np.min(y) < -1e-12:
        return None
    y = np.clip(y, 0.0, None)
    return y / y.sum()


def _kernel_solution(
    matrix: np.ndarray, rows: tuple[int, ...], cols: tuple[int, ...], iterations: int
) -> MatrixGameSolution | None:
    sub = matrix[np.ix_(rows, cols)]
    x_sub = _equalizer(sub)
    f_sub = _equalizer(sub.T)
    if x_sub is None or f_sub is None:
        return None
    x = np.zeros(matrix.shape[0])
    f = np.zeros(matrix.shape[1])
    x[list(rows)] = x_sub
    f[list(cols)] = f_sub
    return _certify(matrix, x, f, iterations)


def _polish(
    matrix: np.ndarray, x_bar: np.ndarray, f_bar: np.ndarray, tol: float, iterations: int
) -> MatrixGameSolution | None:
    """Try the square equalizer system on the supports of the averaged iterates."""
    for threshold in SUPPORT_THRESHOLDS:
        rows = np.flatnonzero(x_bar >= threshold * x_bar.max())
        cols = np.flatnonzero(f_bar >= threshold * f_bar.max())
        k = min(rows.size, cols.size)
        rows = np.sort(rows[np.argsort(-x_bar[rows], kind="stable")[:k]])
        cols = np.sort(cols[np.argsort(-f_bar[cols], kind="stable")[:k]])
        candidate = _kernel_solution(matrix, tuple(rows), tuple(cols), iterations)
        if candidate is not None and candidate.duality_gap <= tol:
            return candidate
    return None


def _pure_saddle(matrix: np.ndarray) -> MatrixGameSolution:
    row = int(np.argmax(matrix.min(axis=1)))
    col = int(np.argmin(matrix.max(axis=0)))
    x = np.zeros(matrix.shape[0])
    f = np.zeros(matrix.shape[1])
    x[row] = 1.0
    f[col] = 1.0
    return _certify(matrix, x, f, 0)


def matrix_game_solve(
    matrix: np.ndarray,
    tol: float = MATRIX_SOLVER_TOL,
    *,
    max_iter: int = 4096,
    block: int = 64,
) -> MatrixGameSolution:
    """Solve max_x min_f x^T A f to a certified duality gap <= tol.

    Runs symmetric multiplicative-weights self-play and checks the averaged
    iterates every `block` rounds. Ties in pure responses resolve to the
    lowest action index. Raises OracleError if no certificate passes.
    """
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.size == 0 or not np.all(np.isfinite(A)):
        raise ValueError(f"matrix must be a finite non-empty 2-D array, got shape {A.shape}")
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")

    best = _pure_saddle(A)
    if best.duality_gap <= tol:
        return best

    n, m = A.shape
    # small games fall through to kernel enumeration after one block
    stop_after = block if min(n, m) <= MAX_KERNEL_ACTIONS else max_iter
    scale = float(np.ptp(A)) or 1.0
    eta = np.sqrt(8.0 * np.log(max(n, m, 2)) / max_iter)
    x = np.full(n, 1.0 / n)
    f = np.full(m, 1.0 / m)
    sum_x = np.zeros(n)
    sum_f = np.zeros(m)
    for it in range(1, max_iter + 1):
        sum_x += x
        sum_f += f
        gain = (A @ f) / scale
        loss = (x @ A) / scale
        x = x * np.exp(eta * (gain - gain.max()))
        x /= x.sum()
        f = f * np.exp(-eta * (loss - loss.min()))
        f /= f.sum()
        if it % block:
            continue
        x_bar, f_bar = sum_x / it, sum_f / it
        averaged = _certify(A, x_bar, f_bar, it)
        if averaged.duality_gap < best.duality_gap:
            best = averaged
        if averaged.duality_gap <= tol:
            return averaged
        polished = _polish(A, x_bar, f_bar, tol, it)
        if polished is not None:
            return polished
        if it >= stop_after:
            break

    if min(n, m) <= MAX_KERNEL_ACTIONS:
        logger.debug("self-play budget spent (gap %.3e); enumerating kernels", best.duality_gap)
        for k in range(1, min(n, m) + 1):
            for rows in itertools.combinations(range(n), k):
                for cols in itertools.combinations(range(m), k):
                    candidate = _kernel_solution(A, rows, cols, max_iter)
                    if candidate is None:
                        continue
                    if candidate.duality_gap <= tol:
                        return candidate
                    if candidate.duality_gap < best.duality_gap:
                        best = candidate
    raise OracleError("matrix game solver exhausted its iteration budget", best.duality_gap)


# ---------------------------------------------------------------------------
# Shapley value iteration
# ---------------------------------------------------------------------------


def _shapley_backup(
    game: MarkovGame, v: np.ndarray, solver_tol: float
) -> tuple[np.ndarray, list[MatrixGameSolution]]:
    solutions = [matrix_game_solve(m, solver_tol) for m in game.stage_matrices(v)]
    return np.array([sol.value for sol in solutions]), solutions


def shapley_value_iteration(
    game: MarkovGame, tol: float = 1e-8, *, max_sweeps: int = 100_000
) -> NashCertificate:
    """Iterate V <- T V until the certified value error is at most `tol`.

    The stopping threshold on ||V_k - V_{k-1}|| is tightened beyond
    tol (1-gamma) / (2 gamma) so that the greedy equilibrium strategies of
    the final matrix games are themselves within tol/2 of V*.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    gamma = game.gamma
    threshold = np.inf if gamma == 0 else tol * (1.0 - gamma) ** 2 / (4.0 * gamma**2)
    solver_tol = min(MATRIX_SOLVER_TOL, tol * (1.0 - gamma) / 4.0)

    v = np.zeros(game.n_states)
    for sweep in range(1, max_sweeps + 1):
        v_next, _ = _shapley_backup(game, v, solver_tol)
        step = float(np.max(np.abs(v_next - v)))
        v = v_next
        if step <= threshold:
            break
    else:
        raise NumericsError(f"Shapley iteration did not converge in {max_sweeps} sweeps")

    tv, solutions = _shapley_backup(game, v, solver_tol)
    residual = float(np.max(np.abs(tv - v)))
    logger.debug("Shapley iteration converged after %d sweeps (residual %.3e)", sweep, residual)
    return NashCertificate(
        v_star=v,
        pi1_star=TabularPolicy(probs=np.array([sol.row_strategy for sol in solutions])),
        pi2_star=TabularPolicy(probs=np.array([sol.col_strategy for sol in solutions])),
        residual=residual,
        tol=tol,
        sweeps=sweep,
    )


# ---------------------------------------------------------------------------
# Best responses
# ---------------------------------------------------------------------------


def induced_min_mdp(game: MarkovGame, pi1: TabularPolicy) -> tuple[np.ndarray, np.ndarray]:
    """Stage cost r1[s, b] and transitions P1[s, b, s'] seen by the min player."""
    check_policy(game, pi1, name="pi1")
    r1 = np.einsum("sa,sab->sb", pi1.probs, game.reward)
    p1 = np.einsum("sa,sabt->sbt", pi1.probs, game.transition)
    return r1, p1


def best_response_min(
    game: MarkovGame, pi1: TabularPolicy, *, tol: float = BEST_RESPONSE_TOL
) -> tuple[TabularPolicy, np.ndarray]:
    """Deterministic min-player best response to pi1 and V^{pi1} = inf_pi2 V^{pi1,pi2}.

    Value iteration on T_{pi1} to residual <= tol, then the greedy policy is
    refined by exact policy iteration so the returned value is exact.
    """
    r1, p1 = induced_min_mdp(game, pi1)
    v = np.zeros(game.n_states)
    while True:
        q = r1 + game.gamma * (p1 @ v)
        v_next = q.min(axis=1)
        residual = float(np.max(np.abs(v_next - v)))
        v = v_next
        if residual <= tol or game.gamma == 0:
            break

    actions = np.argmin(q, axis=1)
    for _ in range(game.n_states * game.n_actions + 1):
        pi2 = TabularPolicy.deterministic(actions, game.n_actions)
        v = evaluate_value(game, pi1, pi2)
        q = r1 + game.gamma * (p1 @ v)
        current = q[np.arange(game.n_states), actions]
        improvable = current > q.min(axis=1) + 1e-12
        if not improvable.any():
            break
        actions = np.where(improvable, np.argmin(q, axis=1), actions)
    return pi2, v


def soft_best_response_min(
    game: MarkovGame, pi1: TabularPolicy, tau: float, *, tol: float = 1e-12
) -> tuple[TabularPolicy, np.ndarray]:
    """Entropy-regularized best response pi_tau^* and V_tau^* = min_pi2 V_tau^{pi1,pi2}."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    r1, p1 = induced_min_mdp(game, pi1)
    v = np.zeros(game.n_states)
    while True:
        q = r1 + game.gamma * (p1 @ v)
        v_next = -tau * logsumexp(-q / tau, axis=1)
        residual = float(np.max(np.abs(v_next - v)))
        v = v_next
        if residual <= tol or game.gamma == 0:
            break
    q = r1 + game.gamma * (p1 @ v)
    pi_tau = TabularPolicy.from_logits(-q / tau)
    return pi_tau, evaluate_regularized_value(game, pi1, pi_tau, tau)


def brute_force_min_value(game: MarkovGame, pi1: TabularPolicy) -> np.ndarray:
    """Elementwise min of V^{pi1,pi2} over every deterministic pi2 (test oracle)."""
    count = game.n_actions**game.n_states
    if count > MAX_ENUMERATION:
        raise BudgetError(f"{count} deterministic policies exceed the enumeration budget {MAX_ENUMERATION}")
    best = np.full(game.n_states, np.inf)
    for actions in itertools.product(range(game.n_actions), repeat=game.n_states):
        pi2 = TabularPolicy.deterministic(np.array(actions), game.n_actions)
        best = np.minimum(best, evaluate_value(game, pi1, pi2))
    return best


# ---------------------------------------------------------------------------
# Exploitability
# ---------------------------------------------------------------------------


def exploitability(
    game: MarkovGame,
    pi1: TabularPolicy,
    rho: np.ndarray,
    *,
    certificate: NashCertificate | None = None,
    tol: float = 1e-8,
) -> float:
    """V*(rho) - inf_pi2 V^{pi1,pi2}(rho), clipped at zero within the oracle tolerances."""
    rho = as_state_dist(rho, game.n_states, name="rho")
    if certificate is None:
        certificate = shapley_value_iteration(game, tol)
    _, v_br = best_response_min(game, pi1)
    value = certificate.value_at(rho) - float(rho @ v_br)
    floor = certificate.tol + BEST_RESPONSE_TOL
    if value < -floor:
        raise NumericsError(f"exploitability {value:.3e} is below the combined tolerance -{floor:.1e}")
    if value < 0.0:
        logger.warning("clipping exploitability %.3e to 0 (within tolerance %.1e)", value, floor)
        return 0.0
    return value
