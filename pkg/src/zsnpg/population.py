"""Population two-player NPG: exact greedy and iteration steps on tabular games."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import softmax

from .game import (
    MarkovGame,
    TabularPolicy,
    as_state_dist,
    check_policy,
    evaluate_regularized_value,
    evaluate_value,
    fisher_matrix,
    policy_gradient_min,
    q_and_advantage,
    regularized_q,
    uniform_dist,
    visitation,
)
from .greedy import run_greedy
from .oracle import NashCertificate, best_response_min, exploitability, shapley_value_iteration, soft_best_response_min

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["k", "exploitability_rho", "greedy_gap_max", "iter_subopt_sigma", "wallclock_ms"]
VISITATION_FLOOR = 1e-8
SUBOPT_FLOOR = -1e-8
MONOTONE_TOL = 1e-8
RATIO_TOL = 1e-12


def default_eta(game: MarkovGame) -> float:
    """(1-gamma)^2 log|A|, the smallest step the iteration-step rate allows."""
    if game.n_actions == 1:
        return 1.0
    return (1.0 - game.gamma) ** 2 * np.log(game.n_actions)


@dataclass(frozen=True, eq=False)
class PopulationConfig:
    K: int = 5
    T: int = 100
    T_prime: int = 100
    eta: float | None = None
    tau: float = 0.0
    sigma: np.ndarray | None = None
    rho: np.ndarray | None = None

    def __post_init__(self) -> None:
        for name in ("K", "T", "T_prime"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be an integer >= 1, got {value!r}")
        if self.eta is not None and not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta!r}")
        if not self.tau >= 0:
            raise ValueError(f"tau must be >= 0, got {self.tau!r}")

    def resolve(self, game: MarkovGame) -> tuple[float, np.ndarray, np.ndarray]:
        """Return (eta, sigma, rho) with defaults filled in and sigma checked strictly positive."""
        eta = self.eta if self.eta is not None else default_eta(game)
        sigma = uniform_dist(game.n_states) if self.sigma is None else as_state_dist(self.sigma, game.n_states, name="sigma")
        rho = uniform_dist(game.n_states) if self.rho is None else as_state_dist(self.rho, game.n_states, name="rho")
        if np.any(sigma <= 0):
            raise ValueError("sigma must put positive mass on every state")
        regularization_ratio(game, eta, self.tau)
        return eta, sigma, rho


# ---------------------------------------------------------------------------
# Inner updates
# ---------------------------------------------------------------------------


def npg_inner_update(game: MarkovGame, pi1: TabularPolicy, pi2: TabularPolicy, eta: float) -> TabularPolicy:
    """Closed-form softmax NPG step for the min player.

    pi2'(b|s) is proportional to pi2(b|s) exp(-(eta/(1-gamma)) sum_a pi1(a|s) A(s,a,b)).
    """
    pi2 = pi2.with_logits()
    weighted = q_and_advantage(game, pi1, pi2).weighted(pi1)
    return TabularPolicy.from_logits(pi2.logits - (eta / (1.0 - game.gamma)) * weighted)


def regularization_ratio(game: MarkovGame, eta: float, tau: float) -> float:
    """eta * tau / (1 - gamma), the weight the regularized update takes off the old log-policy."""
    ratio = eta * tau / (1.0 - game.gamma)
    if ratio > 1.0 + RATIO_TOL:
        raise ValueError(f"eta * tau / (1 - gamma) = {ratio:g} exceeds 1")
    return min(ratio, 1.0)


def regularized_update(
    game: MarkovGame, pi1: TabularPolicy, pi2: TabularPolicy, eta: float, tau: float
) -> TabularPolicy:
    ratio = regularization_ratio(game, eta, tau)
    weighted_q = regularized_q(game, pi1, pi2, tau).weighted(pi1, advantage=False)
    logits = (1.0 - ratio) * pi2.log_probs() - (eta / (1.0 - game.gamma)) * weighted_q
    return TabularPolicy.from_logits(logits)


@dataclass(frozen=True)
class FisherCheck:
    deviation: float
    excluded_states: tuple[int, ...]


def fisher_npg_update_check(
    game: MarkovGame, pi1: TabularPolicy, pi2: TabularPolicy, eta: float, sigma: np.ndarray
) -> FisherCheck:
    """Compare theta - eta F^+ grad V against the closed-form update.

    States whose visitation under sigma is at most 1e-8 are dropped from the
    Fisher system and from the comparison; they are listed in the result.
    """
    pi2 = pi2.with_logits()
    d = visitation(game, pi1, pi2, sigma)
    reachable = d > VISITATION_FLOOR
    idx = np.repeat(reachable, game.n_actions)

    fisher = fisher_matrix(game, pi1, pi2, sigma)
    grad = policy_gradient_min(game, pi1, pi2, sigma)
    direction = np.zeros(grad.size)
    if idx.any():
        sub = fisher[np.ix_(idx, idx)]
        direction[idx] = np.linalg.pinv(sub, rcond=1e-10, hermitian=True) @ grad[idx]

    theta = pi2.logits - eta * direction.reshape(game.n_states, game.n_actions)
    fisher_probs = softmax(theta, axis=1)
    closed = npg_inner_update(game, pi1, pi2, eta).probs
    deviation = float(np.max(np.abs(fisher_probs - closed)[reachable])) if reachable.any() else 0.0
    return FisherCheck(deviation=deviation, excluded_states=tuple(int(s) for s in np.flatnonzero(~reachable)))


# ---------------------------------------------------------------------------
# Iteration step
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class IterationResult:
    pi2: TabularPolicy
    value: np.ndarray
    suboptimality: float
    trajectory: tuple[TabularPolicy, ...] = field(default=())


def iteration_bound(game: MarkovGame, eta: float, T: int) -> float:
    """log|A|/(eta T) + 1/((1-gamma)^2 T)."""
    return np.log(game.n_actions) / (eta * T) + 1.0 / ((1.0 - game.gamma) ** 2 * T)


def iteration_step(
    game: MarkovGame,
    pi1: TabularPolicy,
    T: int,
    eta: float,
    tau: float = 0.0,
    sigma: np.ndarray | None = None,
    *,
    keep_trajectory: bool = False,
) -> IterationResult:
    """T inner NPG steps for the min player from the uniform policy.

    `value` is the unregularized V^{pi1,pi2_T} even when tau > 0. With
    `keep_trajectory` every iterate pi2^0..pi2^T is returned as well.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    regularization_ratio(game, eta, tau)
    check_policy(game, pi1, name="pi1")
    sigma = uniform_dist(game.n_states) if sigma is None else as_state_dist(sigma, game.n_states, name="sigma")

    pi2 = TabularPolicy.uniform(game.n_states, game.n_actions)
    trajectory = [pi2] if keep_trajectory else []
    for _ in range(T):
        pi2 = regularized_update(game, pi1, pi2, eta, tau) if tau > 0 else npg_inner_update(game, pi1, pi2, eta)
        if keep_trajectory:
            trajectory.append(pi2)

    value = evaluate_value(game, pi1, pi2)
    _, v_br = best_response_min(game, pi1)
    suboptimality = float(sigma @ value - sigma @ v_br)
    return IterationResult(pi2=pi2, value=value, suboptimality=suboptimality, trajectory=tuple(trajectory))


# ---------------------------------------------------------------------------
# Outer loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PopulationResult:
    pi1: TabularPolicy
    pi2: TabularPolicy
    value: np.ndarray
    trace: pd.DataFrame


def run_population_npg(
    game: MarkovGame, config: PopulationConfig, *, certificate: NashCertificate | None = None
) -> PopulationResult:
    """Alternate greedy and iteration steps K times starting from V_0 = 0."""
    eta, sigma, rho = config.resolve(game)
    if certificate is None:
        certificate = shapley_value_iteration(game)

    v = np.zeros(game.n_states)
    rows = []
    for k in range(1, config.K + 1):
        started = time.perf_counter()
        greedy = run_greedy(game, v, config.T_prime)
        pi1 = greedy.x_bar
        step = iteration_step(game, pi1, config.T, eta, config.tau, sigma)
        v = step.value
        expl = exploitability(game, pi1, rho, certificate=certificate)
        rows.append(
            {
                "k": k,
                "exploitability_rho": expl,
                "greedy_gap_max": greedy.max_gap,
                "iter_subopt_sigma": step.suboptimality,
                "wallclock_ms": (time.perf_counter() - started) * 1000.0,
            }
        )
        logger.debug("outer loop %d/%d: exploitability %.4e, subopt %.3e", k, config.K, expl, step.suboptimality)

    return PopulationResult(pi1=pi1, pi2=step.pi2, value=v, trace=pd.DataFrame(rows, columns=TRACE_COLUMNS))


# ---------------------------------------------------------------------------
# Regularized diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RegularizedReport:
    per_step: pd.DataFrame
    sandwich: dict[str, float]
    sandwich_holds: bool
    width: float
    width_bound: float

    @property
    def monotone(self) -> bool:
        return bool((self.per_step["improvement"].dropna() >= -MONOTONE_TOL).all())


def regularized_diagnostics(
    game: MarkovGame,
    pi1: TabularPolicy,
    trajectory: tuple[TabularPolicy, ...] | list[TabularPolicy],
    tau: float,
    sigma: np.ndarray,
    *,
    tol: float = 1e-8,
) -> RegularizedReport:
    """Per-step regularized improvement and the best-response sandwich.

    The sandwich chain is
    V^{pi1,pi_tau*} >= V^{pi1,pi2*} >= V_tau^{pi1,pi2*} >= V_tau^* >= V^{pi1,pi_tau*} - tau log|A|/(1-gamma),
    every value taken at sigma.
    """
    if tau <= 0:
        raise ValueError(f"regularized diagnostics need tau > 0, got {tau}")
    if not trajectory:
        raise ValueError("trajectory is empty")
    sigma = as_state_dist(sigma, game.n_states, name="sigma")

    values = np.array([sigma @ evaluate_regularized_value(game, pi1, p, tau) for p in trajectory])
    pi_tau, v_tau_star = soft_best_response_min(game, pi1, tau)
    pi2_star, _ = best_response_min(game, pi1)
    optimum = float(sigma @ v_tau_star)

    improvement = np.append(values[:-1] - values[1:], np.nan)
    per_step = pd.DataFrame(
        {
            "t": np.arange(len(values)),
            "regularized_value": values,
            "improvement": improvement,
            "gap": values - optimum,
        }
    )

    bound = tau * np.log(game.n_actions) / (1.0 - game.gamma)
    sandwich = {
        "plain_at_soft_response": float(sigma @ evaluate_value(game, pi1, pi_tau)),
        "plain_at_best_response": float(sigma @ evaluate_value(game, pi1, pi2_star)),
        "regularized_at_best_response": float(sigma @ evaluate_regularized_value(game, pi1, pi2_star, tau)),
        "regularized_optimum": optimum,
    }
    sandwich["lower_bound"] = sandwich["plain_at_soft_response"] - bound
    chain = list(sandwich.values())
    holds = all(upper >= lower - tol for upper, lower in zip(chain, chain[1:]))
    width = sandwich["plain_at_soft_response"] - optimum
    return RegularizedReport(per_step=per_step, sandwich=sandwich, sandwich_holds=holds, width=width, width_bound=bound)


def contraction_slope(gaps: np.ndarray, *, start_fraction: float = 0.5, floor: float = 1e-13) -> float:
    """Least-squares slope of log(gap) against t over the tail of a run.

    Gaps at or below `floor` are dropped (they are at round-off level); with
    fewer than two usable points the gap has already vanished and -inf is
    returned.
    """
    gaps = np.asarray(gaps, dtype=float)
    t = np.arange(gaps.size)
    tail = t >= int(start_fraction * (gaps.size - 1))
    usable = tail & (gaps > floor)
    if usable.sum() < 2:
        return float("-inf")
    slope, _ = np.polyfit(t[usable], np.log(gaps[usable]), 1)
    return float(slope)
