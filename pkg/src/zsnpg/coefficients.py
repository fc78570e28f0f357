"""Concentrability and distribution-mismatch coefficients for desk-scale games."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import BudgetError, GameValidationError
from .game import MarkovGame, TabularPolicy, as_state_dist, visitation
from .oracle import best_response_min

logger = logging.getLogger(__name__)

REPORT_TOL = 1e-6
ENUMERATION_BUDGET = 10**6
DEFAULT_LKD = ((0, 1, 0), (0, 1, 1), (1, 2, 0))

Method = Literal["dp", "enumerate"]


def default_depth(gamma: float, tol: float = REPORT_TOL) -> int:
    """J = ceil(log(tol (1-gamma)) / log gamma)."""
    if gamma == 0.0:
        return 1
    return max(1, math.ceil(math.log(tol * (1.0 - gamma)) / math.log(gamma)))


def _ratio(mass: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """mass/sigma with 0/0 = 0 and positive/0 = +inf."""
    out = np.zeros_like(mass, dtype=float)
    positive = sigma > 0
    out[..., positive] = mass[..., positive] / sigma[positive]
    out[..., ~positive] = np.where(mass[..., ~positive] > 0, np.inf, 0.0)
    return out


def _dp_values(game: MarkovGame, rho: np.ndarray, sigma: np.ndarray, depth: int) -> np.ndarray:
    """c(0..depth) by a backward max-product recursion.

    For a fixed target state u, (rho P_1 ... P_j)(u) is multilinear in the
    per-state policy probabilities of every step, so its sup is attained
    at a vertex: one joint action (a, b) per state and step. The choices at
    different states and steps decouple, so
    H_{i+1}[s, u] = max_{a,b} sum_t P(t|s,a,b) H_i[t, u] with H_0 = I
    gives c(j) = max_u (rho H_j)[u] / sigma[u].
    """
    n = game.n_states
    stacked = game.transition.reshape(n, -1, n)
    h = np.eye(n)
    values = [float(np.max(_ratio(rho, sigma)))]
    for _ in range(depth):
        h = np.einsum("sjt,tu->sju", stacked, h).max(axis=1)
        values.append(float(np.max(_ratio(rho @ h, sigma))))
    return np.array(values)


def _pair_kernels(game: MarkovGame) -> np.ndarray:
    """P_{pi1,pi2} for every pair of deterministic policies, shape [pair][s][s']."""
    n, m = game.n_states, game.n_actions
    grid = np.indices((m,) * n).reshape(n, -1).T
    kernels = []
    for a in grid:
        for b in grid:
            kernels.append(game.transition[np.arange(n), a, b])
    return np.array(kernels)


def enumerated_value(game: MarkovGame, rho: np.ndarray, sigma: np.ndarray, j: int) -> tuple[float, tuple[int, ...]]:
    """c(j) by explicit enumeration of deterministic policy-pair sequences.

    Returns the value and the maximizing sequence of pair indices (into the
    row-major (pi1, pi2) grid of deterministic policies).
    """
    per_step = (game.n_actions**game.n_states) ** 2
    if per_step**j > ENUMERATION_BUDGET:
        raise BudgetError(
            f"{per_step}^{j} policy-pair sequences exceed the enumeration budget {ENUMERATION_BUDGET}; "
            "use sampled_concentrability for a lower bound"
        )
    kernels = _pair_kernels(game)
    masses = rho[None, :]
    for _ in range(j):
        masses = np.einsum("ms,kst->mkt", masses, kernels).reshape(-1, game.n_states)
    ratios = _ratio(masses, sigma).max(axis=1)
    best = int(np.argmax(ratios))
    sequence = np.unravel_index(best, (len(kernels),) * j) if j else ()
    return float(ratios[best]), tuple(int(i) for i in sequence)


def sampled_concentrability(
    game: MarkovGame,
    rho: np.ndarray,
    sigma: np.ndarray,
    j: int,
    n_samples: int,
    rng: np.random.Generator,
) -> float:
    """Lower bound on c(j): max over random stochastic policy sequences (Dirichlet(1) rows)."""
    rho = as_state_dist(rho, game.n_states, name="rho")
    sigma = as_state_dist(sigma, game.n_states, name="sigma")
    n, m = game.n_states, game.n_actions
    masses = np.broadcast_to(rho, (n_samples, n))
    for _ in range(j):
        pi1 = rng.dirichlet(np.ones(m), size=(n_samples, n))
        pi2 = rng.dirichlet(np.ones(m), size=(n_samples, n))
        kernels = np.einsum("nsa,nsb,sabt->nst", pi1, pi2, game.transition)
        masses = np.einsum("ns,nst->nt", masses, kernels)
    return float(np.max(_ratio(masses, sigma)))


@dataclass(frozen=True, eq=False)
class ConcentrabilityReport:
    c_values: np.ndarray
    c_prime: float
    tail_bound: float
    c_lkd: dict[tuple[int, int, int], tuple[float, float]] = field(default_factory=dict)
    J: int = 0
    method: str = "dp"

    def to_dict(self) -> dict:
        return {
            "J": self.J,
            "method": self.method,
            "c": {str(j): _finite_or_sentinel(c) for j, c in enumerate(self.c_values)},
            "c_prime": _finite_or_sentinel(self.c_prime),
            "tail_bound": _finite_or_sentinel(self.tail_bound),
            "c_lkd": [
                {"l": l, "k": k, "d": d, "value": _finite_or_sentinel(v), "tail_bound": _finite_or_sentinel(t)}
                for (l, k, d), (v, t) in self.c_lkd.items()
            ],
        }


def _finite_or_sentinel(value: float) -> float | str:
    return float(value) if math.isfinite(value) else "inf"


def _weighted_sum(weights: np.ndarray, values: np.ndarray) -> float:
    used = weights > 0
    return float(np.sum(weights[used] * values[used]))


def c_prime_truncated(c_values: np.ndarray, gamma: float, c_max: float) -> tuple[float, float]:
    """(1-gamma)^2 sum_{m=1}^{J+1} m gamma^{m-1} c(m-1) and the bound on the dropped terms.

    The remainder uses c(j) <= max_s 1/sigma(s) and
    sum_{m>=M} m gamma^{m-1} = gamma^{M-1} (M - (M-1) gamma) / (1-gamma)^2.
    """
    depth = len(c_values) - 1
    m = np.arange(1, depth + 2)
    weights = (1.0 - gamma) ** 2 * m * gamma ** (m - 1.0)
    head = _weighted_sum(weights, c_values)
    M = depth + 2
    tail_mass = gamma ** (M - 1) * (M - (M - 1) * gamma)
    tail = c_max * tail_mass if tail_mass > 0 else 0.0
    return head, tail


def c_lkd_truncated(c_values: np.ndarray, gamma: float, c_max: float, l: int, k: int, d: int) -> tuple[float, float]:
    """(1-gamma)^2/(gamma^l - gamma^k) sum_{i=l}^{k-1} sum_{j>=i} gamma^j c(j+d), truncated at j+d <= J."""
    if not 0 <= l < k or d < 0:
        raise ValueError(f"need 0 <= l < k and d >= 0, got (l, k, d) = ({l}, {k}, {d})")
    scale = gamma**l - gamma**k
    if scale <= 0:
        raise ValueError(f"gamma^l - gamma^k vanishes for gamma={gamma}, (l, k) = ({l}, {k})")
    prefactor = (1.0 - gamma) ** 2 / scale
    depth = len(c_values) - 1
    j = np.arange(l, depth - d + 1)
    # each j >= l is counted once for every i in [l, min(j, k-1)]
    weights = prefactor * gamma ** j.astype(float) * (np.minimum(j, k - 1) - l + 1)
    head = _weighted_sum(weights, c_values[j + d]) if j.size else 0.0
    first_dropped = max(depth - d + 1, l)
    tail_mass = prefactor * (k - l) * gamma**first_dropped / (1.0 - gamma)
    tail = c_max * tail_mass if tail_mass > 0 else 0.0
    return head, tail


def concentrability(
    game: MarkovGame,
    rho: np.ndarray,
    sigma: np.ndarray,
    J: int | None = None,
    *,
    method: Method = "dp",
    lkd: tuple[tuple[int, int, int], ...] = DEFAULT_LKD,
) -> ConcentrabilityReport:
    """c(0..J) exactly, plus C' and C^{l,k,d} truncated at J with remainder bounds.

    σ with zero mass on a state that ρ-paths can reach gives +inf.
    """
    rho = as_state_dist(rho, game.n_states, name="rho")
    sigma = as_state_dist(sigma, game.n_states, name="sigma")
    J = default_depth(game.gamma) if J is None else J
    if J < 0:
        raise ValueError(f"J must be >= 0, got {J}")

    if method == "dp":
        c_values = _dp_values(game, rho, sigma, J)
    elif method == "enumerate":
        c_values = np.array([enumerated_value(game, rho, sigma, j)[0] for j in range(J + 1)])
    else:
        raise ValueError(f"Unknown concentrability method: {method!r}")

    c_max = float(np.max(_ratio(np.ones(game.n_states), sigma)))
    c_prime, tail = c_prime_truncated(c_values, game.gamma, c_max)
    c_lkd = {}
    for l, k, d in lkd:
        if game.gamma ** l - game.gamma ** k <= 0:
            logger.debug("skipping C^{%d,%d,%d}: undefined at gamma=%g", l, k, d, game.gamma)
            continue
        c_lkd[(l, k, d)] = c_lkd_truncated(c_values, game.gamma, c_max, l, k, d)
    return ConcentrabilityReport(c_values=c_values, c_prime=c_prime, tail_bound=tail, c_lkd=c_lkd, J=J, method=method)


def mismatch_coefficient(game: MarkovGame, pi1: TabularPolicy, sigma: np.ndarray) -> float:
    """|d_sigma^{pi1,pi2*} / sigma|_inf for the min player's best response pi2*."""
    sigma = as_state_dist(sigma, game.n_states, name="sigma")
    if np.any(sigma <= 0):
        raise GameValidationError("sigma must put positive mass on every state")
    pi2_star, _ = best_response_min(game, pi1)
    d = visitation(game, pi1, pi2_star, sigma)
    return float(np.max(d / sigma))
