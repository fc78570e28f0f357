"""Sample-based two-player NPG with log-linear policies.

Everything the population algorithm computes exactly is estimated here from
an episodic sampling oracle: state-action visitation draws, unbiased Q
rollouts, and projected-SGD fits of the compatible NPG direction. Exact
tabular quantities are only used for diagnostics (suboptimality,
exploitability, greedy gaps, the iota ratio) on desk-scale games.
"""

from __future__ import annotations

import logging
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import pandas as pd
from scipy.special import logsumexp, softmax

from .errors import GameValidationError
from .game import (
    SIMPLEX_TOL,
    MarkovGame,
    TabularPolicy,
    as_state_dist,
    check_value,
    evaluate_value,
    q_and_advantage,
    visitation,
)
from .greedy import build_greedy_matrices
from .oracle import NashCertificate, best_response_min, exploitability, matrix_game_solve, shapley_value_iteration

logger = logging.getLogger(__name__)

HORIZON_CAP_SCALE = 50.0
STREAMS = {"greedy": 1, "iteration": 2, "select": 3, "value": 4}
TRACE_COLUMNS = [
    "k",
    "t",
    "n_samples_used",
    "exploitability",
    "subopt_sigma",
    "greedy_gap",
    "seed",
    "iota",
    "max_grad_norm",
    "grad_excursions",
]


def stream(seed: int, name: str, k: int = 0, t: int = 0) -> np.random.Generator:
    """Independent generator for one (component, outer k, inner t) slot of a master seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(STREAMS[name], k, t)))


# ---------------------------------------------------------------------------
# Features and policies
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """phi[s][a] in R^d shared by both players."""

    phi: np.ndarray

    def __post_init__(self) -> None:
        phi = np.array(self.phi, dtype=float)
        if phi.ndim != 3:
            raise GameValidationError(f"features must be a [state][action][dim] array, got shape {phi.shape}")
        if not np.all(np.isfinite(phi)):
            raise GameValidationError("features must be finite")
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)

    @classmethod
    def tabular(cls, n_states: int, n_actions: int) -> FeatureMap:
        """Indicator features, d = |S||A|; log-linear policies are then exactly the softmax class."""
        return cls(np.eye(n_states * n_actions).reshape(n_states, n_actions, n_states * n_actions))

    @staticmethod
    def check_spec(spec: Any) -> None:
        """Reject feature specs that are not "tabular", {"random": d, "seed": s} or a nested list."""
        if spec == "tabular" or isinstance(spec, list):
            return
        if isinstance(spec, dict) and "random" in spec and set(spec) <= {"random", "seed"}:
            dim = spec["random"]
            if isinstance(dim, bool) or not isinstance(dim, int) or dim < 1:
                raise GameValidationError(f"features: 'random' must be an integer >= 1, got {dim!r}")
            return
        raise GameValidationError(
            f"features: expected 'tabular', {{'random': dim, 'seed': s}} or a [state][action][dim] list, got {spec!r}"
        )

    @classmethod
    def from_spec(cls, spec: Any, n_states: int, n_actions: int) -> FeatureMap:
        """Indicator features, seeded standard-normal features of a given dimension, or explicit phi."""
        cls.check_spec(spec)
        if spec == "tabular":
            return cls.tabular(n_states, n_actions)
        if isinstance(spec, dict):
            rng = np.random.default_rng(int(spec.get("seed", 0)))
            return cls(rng.normal(size=(n_states, n_actions, spec["random"])))
        try:
            phi = np.asarray(spec, dtype=float)
        except (TypeError, ValueError):
            raise GameValidationError("features: must be a rectangular [state][action][dim] list of numbers") from None
        features = cls(phi)
        if features.phi.shape[:2] != (n_states, n_actions):
            raise GameValidationError(
                f"features: shape {features.phi.shape} does not match the game's ({n_states}, {n_actions}, dim)"
            )
        return features

    @property
    def dim(self) -> int:
        return self.phi.shape[2]

    @property
    def norm_bound(self) -> float:
        """D = max_{s,a} |phi(s,a)|_2."""
        return float(np.max(np.linalg.norm(self.phi, axis=2)))

    @property
    def smoothness(self) -> float:
        return self.norm_bound**2

    @property
    def score_bound(self) -> float:
        return 2.0 * self.norm_bound


@dataclass(frozen=True, eq=False)
class LogLinearPolicy:
    """pi(a|s) proportional to exp(params . phi(s,a))."""

    params: np.ndarray
    features: FeatureMap
    logits: np.ndarray = field(init=False, repr=False)
    probs: np.ndarray = field(init=False, repr=False)
    mean_features: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        params = np.array(self.params, dtype=float)
        if params.shape != (self.features.dim,):
            raise GameValidationError(f"params: expected shape ({self.features.dim},), got {params.shape}")
        logits = self.features.phi @ params
        probs = softmax(logits, axis=1)
        for name, value in (
            ("params", params),
            ("logits", logits),
            ("probs", probs),
            ("mean_features", np.einsum("sa,sad->sd", probs, self.features.phi)),
        ):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @classmethod
    def zeros(cls, features: FeatureMap) -> LogLinearPolicy:
        return cls(np.zeros(features.dim), features)

    def log_prob(self, s: int, a: int) -> float:
        return float(self.logits[s, a] - logsumexp(self.logits[s]))

    def score(self, s: int, a: int) -> np.ndarray:
        """grad_params log pi(a|s) = phi(s,a) - E_{a'~pi} phi(s,a')."""
        return self.features.phi[s, a] - self.mean_features[s]

    def to_tabular(self) -> TabularPolicy:
        return TabularPolicy(probs=self.probs, logits=self.logits)


@dataclass(frozen=True, eq=False)
class MixturePolicy:
    """Uniform mixture of log-linear policies, played as its per-state mixed distribution."""

    components: tuple[LogLinearPolicy, ...]
    probs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not self.components:
            raise ValueError("a mixture needs at least one component")
        probs = np.mean([c.probs for c in self.components], axis=0)
        probs = probs / probs.sum(axis=1, keepdims=True)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    def to_tabular(self) -> TabularPolicy:
        return TabularPolicy(probs=self.probs)


Policy = TabularPolicy | LogLinearPolicy | MixturePolicy


def as_tabular(policy: Policy) -> TabularPolicy:
    return policy if isinstance(policy, TabularPolicy) else policy.to_tabular()


# ---------------------------------------------------------------------------
# Sampling oracle
# ---------------------------------------------------------------------------


def _draw(cdf_row: list[float], u: float) -> int:
    return min(bisect_right(cdf_row, u), len(cdf_row) - 1)


def _cdf(policy: Policy) -> list[list[float]]:
    return np.cumsum(policy.probs, axis=1).tolist()


@dataclass(eq=False)
class SamplingOracle:
    """Episodic access to a game: initial draws from nu0 and on-demand transitions.

    `samples` counts oracle calls (visitation draws, Q rollouts and
    next-state draws); `transitions` counts individual environment steps.
    """

    game: MarkovGame
    nu0: np.ndarray
    seed: int = 0
    samples: int = 0
    transitions: int = 0
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        game = self.game
        nu0 = np.asarray(self.nu0, dtype=float)
        shape = (game.n_states, game.n_actions, game.n_actions)
        if nu0.shape != shape:
            raise GameValidationError(f"nu0: expected shape {shape}, got {nu0.shape}")
        if np.any(nu0 < 0) or abs(nu0.sum() - 1.0) > SIMPLEX_TOL:
            raise GameValidationError("nu0 must be a distribution over (state, action, action)")
        self.nu0 = nu0
        self.rng = np.random.default_rng(self.seed)
        self.horizon_cap = math.ceil(HORIZON_CAP_SCALE / (1.0 - game.gamma))
        self._nu0_cdf = np.cumsum(nu0.ravel()).tolist()
        self._sigma_cdf = np.cumsum(nu0.sum(axis=(1, 2))).tolist()
        self._transition_cdf = np.cumsum(game.transition, axis=-1).tolist()
        self._reward = game.reward.tolist()

    @classmethod
    def from_sigma(cls, game: MarkovGame, sigma: np.ndarray | None = None, *, seed: int = 0) -> SamplingOracle:
        """nu0(s,a,b) = sigma(s)/|A|^2 (sigma defaults to uniform)."""
        if sigma is None:
            sigma = np.full(game.n_states, 1.0 / game.n_states)
        sigma = as_state_dist(sigma, game.n_states, name="sigma")
        nu0 = np.broadcast_to(sigma[:, None, None] / game.n_actions**2, (game.n_states, game.n_actions, game.n_actions))
        return cls(game, nu0.copy(), seed=seed)

    @property
    def sigma(self) -> np.ndarray:
        return self.nu0.sum(axis=(1, 2))

    def reseed(self, name: str, k: int = 0, t: int = 0) -> None:
        self.rng = stream(self.seed, name, k, t)

    def draw_initial(self) -> tuple[int, int, int]:
        idx = _draw(self._nu0_cdf, self.rng.random())
        s, rest = divmod(idx, self.game.n_actions**2)
        a, b = divmod(rest, self.game.n_actions)
        return s, a, b

    def draw_state(self) -> int:
        """s ~ sigma, the state marginal of nu0."""
        return _draw(self._sigma_cdf, self.rng.random())

    def next_state(self, s: int, a: int, b: int) -> int:
        self.transitions += 1
        return _draw(self._transition_cdf[s][a][b], self.rng.random())

    def reward(self, s: int, a: int, b: int) -> float:
        return self._reward[s][a][b]

    def _continues(self, steps: int) -> bool:
        return steps < self.horizon_cap and self.rng.random() < self.game.gamma


def _visitation_draw(oracle: SamplingOracle, cdf1: list, cdf2: list) -> tuple[int, int, int]:
    s, a, b = oracle.draw_initial()
    steps = 0
    while oracle._continues(steps):
        s = oracle.next_state(s, a, b)
        a = _draw(cdf1[s], oracle.rng.random())
        b = _draw(cdf2[s], oracle.rng.random())
        steps += 1
    return s, a, b


def _greedy_draw(oracle: SamplingOracle, cdf_x: list, cdf_f: list) -> tuple[int, int, int]:
    s = oracle.draw_state()
    return s, _draw(cdf_x[s], oracle.rng.random()), _draw(cdf_f[s], oracle.rng.random())


def _rollout(oracle: SamplingOracle, cdf1: list, cdf2: list, s: int, a: int, b: int) -> float:
    total = oracle.reward(s, a, b)
    steps = 0
    while oracle._continues(steps):
        s = oracle.next_state(s, a, b)
        a = _draw(cdf1[s], oracle.rng.random())
        b = _draw(cdf2[s], oracle.rng.random())
        total += oracle.reward(s, a, b)
        steps += 1
    return total


def sample_state_action_visitation(oracle: SamplingOracle, pi1: Policy, pi2: Policy) -> tuple[int, int, int]:
    """Exact draw from nu^{pi1,pi2}_{nu0}: stop with probability 1-gamma at every step."""
    oracle.samples += 1
    return _visitation_draw(oracle, _cdf(pi1), _cdf(pi2))


def sample_greedy_state_action(oracle: SamplingOracle, x: Policy, f: Policy) -> tuple[int, int, int]:
    """Draw s ~ sigma, a ~ x(.|s), b ~ f(.|s): the greedy-step regression distribution."""
    oracle.samples += 1
    return _greedy_draw(oracle, _cdf(x), _cdf(f))


def estimate_q(oracle: SamplingOracle, pi1: Policy, pi2: Policy, s: int, a: int, b: int) -> float:
    """Unbiased Q^{pi1,pi2}(s,a,b): undiscounted return of a geometrically stopped episode.

    Episodes are capped at ceil(50/(1-gamma)) steps; the truncation bias is
    at most gamma^cap/(1-gamma).
    """
    oracle.samples += 1
    return _rollout(oracle, _cdf(pi1), _cdf(pi2), s, a, b)


def monte_carlo_value(oracle: SamplingOracle, pi1: Policy, pi2: Policy, n_rollouts: int) -> np.ndarray:
    """Per-state V^{pi1,pi2} estimate, clipped to [0, 1/(1-gamma)]."""
    cdf1, cdf2 = _cdf(pi1), _cdf(pi2)
    game = oracle.game
    v = np.zeros(game.n_states)
    for s in range(game.n_states):
        total = 0.0
        for _ in range(n_rollouts):
            a = _draw(cdf1[s], oracle.rng.random())
            b = _draw(cdf2[s], oracle.rng.random())
            total += _rollout(oracle, cdf1, cdf2, s, a, b)
        v[s] = total / n_rollouts
    oracle.samples += game.n_states * n_rollouts
    return np.clip(v, 0.0, game.value_bound)


# ---------------------------------------------------------------------------
# Projected SGD for compatible directions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SgdConfig:
    W: float = 10.0
    N: int = 100
    N_prime: int = 100
    T: int = 50
    T_prime: int = 50
    eta: float | None = None
    eta_prime: float | None = None

    def __post_init__(self) -> None:
        if not self.W > 0:
            raise ValueError(f"W must be positive, got {self.W!r}")
        for name in ("N", "N_prime", "T", "T_prime"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be an integer >= 1, got {value!r}")
        for name in ("eta", "eta_prime"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ValueError(f"{name} must be positive, got {value!r}")

    def grad_bound(self, features: FeatureMap, gamma: float) -> float:
        """G = 2B(BW + 2/(1-gamma)) with B = 2D."""
        B = features.score_bound
        return 2.0 * B * (B * self.W + 2.0 / (1.0 - gamma))

    def sgd_step(self, features: FeatureMap, gamma: float, n_steps: int) -> float:
        """alpha = W / (G sqrt(n))."""
        G = self.grad_bound(features, gamma)
        return self.W / (G * math.sqrt(n_steps)) if G > 0 else 0.0

    def step_sizes(self, features: FeatureMap, n_actions: int) -> tuple[float, float]:
        """(eta, eta') = sqrt(2 log|A| / (beta W^2 T)) and the T' analogue unless overridden."""

        def default(horizon: int) -> float:
            denom = features.smoothness * self.W**2 * horizon
            return math.sqrt(2.0 * math.log(n_actions) / denom) if denom > 0 else 0.0

        eta = self.eta if self.eta is not None else default(self.T)
        eta_prime = self.eta_prime if self.eta_prime is not None else default(self.T_prime)
        return eta, eta_prime


@dataclass(frozen=True, eq=False)
class SgdFit:
    w_hat: np.ndarray
    max_grad_norm: float
    excursions: int
    grad_bound: float


def project_ball(w: np.ndarray, radius: float) -> np.ndarray:
    norm = float(np.linalg.norm(w))
    return w * (radius / norm) if norm > radius else w


def _projected_sgd(draw, dim: int, n_steps: int, alpha: float, radius: float, grad_bound: float) -> SgdFit:
    """Average of w_1..w_N for w_{n+1} = Proj[w_n - 2 alpha ((w_n . psi) psi - g_n)]."""
    w = np.zeros(dim)
    total = np.zeros(dim)
    max_norm = 0.0
    excursions = 0
    for _ in range(n_steps):
        psi, g = draw()
        grad = 2.0 * ((w @ psi) * psi - g)
        norm = float(np.linalg.norm(grad))
        max_norm = max(max_norm, norm)
        if norm > grad_bound:
            excursions += 1
        w = project_ball(w - alpha * grad, radius)
        total += w
    return SgdFit(
        w_hat=project_ball(total / n_steps, radius),
        max_grad_norm=max_norm,
        excursions=excursions,
        grad_bound=grad_bound,
    )


def sgd_npg_direction(
    oracle: SamplingOracle,
    pi1: Policy,
    pi2: LogLinearPolicy,
    cfg: SgdConfig,
    *,
    n_steps: int | None = None,
) -> SgdFit:
    """Fit the min player's compatible NPG direction with N projected-SGD steps.

    Each step draws (s,a,b) from nu^{pi1,pi2}, a rollout estimate of
    Q(s,a,b) and a fresh b' ~ pi2(.|s); the stochastic gradient target is
    Q_hat * (score(b) - score(b')).
    """
    n_steps = cfg.N if n_steps is None else n_steps
    features = pi2.features
    gamma = oracle.game.gamma
    cdf1, cdf2 = _cdf(pi1), _cdf(pi2)

    def draw() -> tuple[np.ndarray, np.ndarray]:
        s, a, b = _visitation_draw(oracle, cdf1, cdf2)
        q_hat = _rollout(oracle, cdf1, cdf2, s, a, b)
        b_prime = _draw(cdf2[s], oracle.rng.random())
        psi = pi2.score(s, b)
        oracle.samples += 2
        return psi, q_hat * (psi - pi2.score(s, b_prime))

    return _projected_sgd(
        draw,
        features.dim,
        n_steps,
        cfg.sgd_step(features, gamma, n_steps),
        cfg.W,
        cfg.grad_bound(features, gamma),
    )


def _greedy_fit(
    oracle: SamplingOracle,
    x: LogLinearPolicy,
    f: LogLinearPolicy,
    v_prev: np.ndarray,
    cfg: SgdConfig,
    *,
    max_player: bool,
) -> SgdFit:
    """Compatible fit against the one-step target r(s,a,b) + gamma V_prev(s').

    Each step draws s ~ sigma, a ~ x(.|s), b ~ f(.|s) (one oracle call) and
    s' ~ P(.|s,a,b) (a second call); no rollout is involved.
    """
    own = x if max_player else f
    features = own.features
    gamma = oracle.game.gamma
    cdf_x, cdf_f = _cdf(x), _cdf(f)
    own_cdf = cdf_x if max_player else cdf_f

    def draw() -> tuple[np.ndarray, np.ndarray]:
        s, a, b = _greedy_draw(oracle, cdf_x, cdf_f)
        target = oracle.reward(s, a, b) + gamma * v_prev[oracle.next_state(s, a, b)]
        played = a if max_player else b
        resampled = _draw(own_cdf[s], oracle.rng.random())
        psi = own.score(s, played)
        oracle.samples += 2
        return psi, target * (psi - own.score(s, resampled))

    return _projected_sgd(
        draw,
        features.dim,
        cfg.N_prime,
        cfg.sgd_step(features, gamma, cfg.N_prime),
        cfg.W,
        cfg.grad_bound(features, gamma),
    )


# ---------------------------------------------------------------------------
# Exact compatible-loss quantities (diagnostics and tests)
# ---------------------------------------------------------------------------


def exact_state_action_visitation(
    game: MarkovGame, nu0: np.ndarray, pi1: Policy, pi2: Policy
) -> np.ndarray:
    """nu(s,a,b) = (1-gamma) nu0 + gamma d_{mu1}(s) pi1(a|s) pi2(b|s), mu1 = nu0 pushed through P."""
    p1, p2 = as_tabular(pi1), as_tabular(pi2)
    mu1 = np.einsum("sab,sabt->t", nu0, game.transition)
    mu1 = mu1 / mu1.sum()
    d1 = visitation(game, p1, p2, mu1)
    on_policy = d1[:, None, None] * p1.probs[:, :, None] * p2.probs[:, None, :]
    return (1.0 - game.gamma) * nu0 + game.gamma * on_policy


def _compatible_terms(oracle: SamplingOracle, pi1: Policy, pi2: LogLinearPolicy):
    game = oracle.game
    nu = exact_state_action_visitation(game, oracle.nu0, pi1, pi2)
    q = q_and_advantage(game, as_tabular(pi1), pi2.to_tabular()).q
    psi = pi2.features.phi - pi2.mean_features[:, None, :]
    return nu, q, psi


def compatible_loss(oracle: SamplingOracle, pi1: Policy, pi2: LogLinearPolicy, w: np.ndarray) -> float:
    """L(w) = E_{nu}[(Q(s,a,b) - w . score(s,b))^2], whose gradient the SGD samples estimate."""
    nu, q, psi = _compatible_terms(oracle, pi1, pi2)
    err = (psi @ w)[:, None, :] - q
    return float(np.sum(nu * err**2))


def compatible_loss_gradient(oracle: SamplingOracle, pi1: Policy, pi2: LogLinearPolicy, w: np.ndarray) -> np.ndarray:
    nu, q, psi = _compatible_terms(oracle, pi1, pi2)
    err = (psi @ w)[:, None, :] - q
    return 2.0 * np.einsum("sab,sab,sbd->d", nu, err, psi)


def optimal_compatible_weights(
    oracle: SamplingOracle, pi1: Policy, pi2: LogLinearPolicy
) -> tuple[np.ndarray, float]:
    """Unconstrained weighted least-squares minimizer w* and L(w*)."""
    nu, q, psi = _compatible_terms(oracle, pi1, pi2)
    weights = np.sqrt(nu)
    design = (weights[:, :, :, None] * psi[:, None, :, :]).reshape(-1, psi.shape[2])
    target = (weights * q).ravel()
    w_star, *_ = np.linalg.lstsq(design, target, rcond=None)
    return w_star, compatible_loss(oracle, pi1, pi2, w_star)


# ---------------------------------------------------------------------------
# Iteration and greedy steps
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OnlineIterationResult:
    pi2: LogLinearPolicy
    index: int
    trajectory: tuple[LogLinearPolicy, ...]
    trace: pd.DataFrame


def online_iteration_step(
    oracle: SamplingOracle,
    pi1: Policy,
    features: FeatureMap,
    cfg: SgdConfig,
    *,
    k: int = 0,
    sigma: np.ndarray | None = None,
    track: bool = True,
) -> OnlineIterationResult:
    """T rounds of theta <- theta - eta w_hat from theta = 0; output a uniformly drawn pi2^t, t < T.

    With `track` the per-round exact suboptimality at sigma is recorded.
    """
    game = oracle.game
    eta, _ = cfg.step_sizes(features, game.n_actions)
    sigma = oracle.sigma if sigma is None else as_state_dist(sigma, game.n_states, name="sigma")
    pi1_tab = as_tabular(pi1)
    v_br = best_response_min(game, pi1_tab)[1] if track else None

    theta = np.zeros(features.dim)
    policies = []
    rows = []
    for t in range(cfg.T):
        pi2 = LogLinearPolicy(theta, features)
        policies.append(pi2)
        oracle.reseed("iteration", k, t)
        fit = sgd_npg_direction(oracle, pi1, pi2, cfg)
        row = {
            "t": t,
            "n_samples_used": oracle.samples,
            "max_grad_norm": fit.max_grad_norm,
            "grad_excursions": fit.excursions,
            "subopt_sigma": np.nan,
        }
        if track:
            row["subopt_sigma"] = float(sigma @ evaluate_value(game, pi1_tab, pi2.to_tabular()) - sigma @ v_br)
        rows.append(row)
        theta = theta - eta * fit.w_hat

    oracle.reseed("select", k)
    index = int(oracle.rng.integers(cfg.T))
    return OnlineIterationResult(
        pi2=policies[index], index=index, trajectory=tuple(policies), trace=pd.DataFrame(rows)
    )


@dataclass(frozen=True, eq=False)
class OnlineGreedyResult:
    x_bar: MixturePolicy
    f_bar: MixturePolicy
    gaps: np.ndarray | None
    iota: float
    max_grad_norm: float
    excursions: int

    @property
    def max_gap(self) -> float:
        return float(np.max(self.gaps)) if self.gaps is not None else float("nan")


def online_greedy_step(
    oracle: SamplingOracle,
    v_prev: np.ndarray,
    features: FeatureMap,
    cfg: SgdConfig,
    *,
    k: int = 0,
    track: bool = True,
) -> OnlineGreedyResult:
    """T' rounds of simultaneous compatible-direction play against V_prev.

    The min player descends (theta <- theta - eta' w) and the max player
    ascends (xi <- xi + eta' w); x_bar is the uniform mixture of the
    max player's T' policies. With `track` the per-state duality gaps of
    (x_bar, f_bar) and iota = sup_t sqrt(max(x*/x^t, f*/f^t)) are computed exactly.
    """
    game = oracle.game
    v_prev = check_value(game, v_prev, name="v_prev")
    _, eta_prime = cfg.step_sizes(features, game.n_actions)

    xi = np.zeros(features.dim)
    theta = np.zeros(features.dim)
    xs: list[LogLinearPolicy] = []
    fs: list[LogLinearPolicy] = []
    max_norm = 0.0
    excursions = 0
    for t in range(cfg.T_prime):
        x = LogLinearPolicy(xi, features)
        f = LogLinearPolicy(theta, features)
        xs.append(x)
        fs.append(f)
        oracle.reseed("greedy", k, t)
        fit_min = _greedy_fit(oracle, x, f, v_prev, cfg, max_player=False)
        fit_max = _greedy_fit(oracle, x, f, v_prev, cfg, max_player=True)
        max_norm = max(max_norm, fit_min.max_grad_norm, fit_max.max_grad_norm)
        excursions += fit_min.excursions + fit_max.excursions
        theta = theta - eta_prime * fit_min.w_hat
        xi = xi + eta_prime * fit_max.w_hat

    x_bar, f_bar = MixturePolicy(tuple(xs)), MixturePolicy(tuple(fs))
    gaps = None
    iota = float("nan")
    if track:
        matrices = build_greedy_matrices(game, v_prev).matrices
        upper = np.einsum("sab,sb->sa", matrices, f_bar.probs).max(axis=1)
        lower = np.einsum("sa,sab->sb", x_bar.probs, matrices).min(axis=1)
        gaps = upper - lower
        solutions = [matrix_game_solve(m) for m in matrices]
        x_star = np.array([sol.row_strategy for sol in solutions])
        f_star = np.array([sol.col_strategy for sol in solutions])
        ratio = max(
            max(float(np.max(x_star / x.probs)) for x in xs),
            max(float(np.max(f_star / f.probs)) for f in fs),
        )
        iota = math.sqrt(ratio)
        logger.debug("online greedy step k=%d: max gap %.3e, iota %.3f", k, float(gaps.max()), iota)
    return OnlineGreedyResult(
        x_bar=x_bar, f_bar=f_bar, gaps=gaps, iota=iota, max_grad_norm=max_norm, excursions=excursions
    )


# ---------------------------------------------------------------------------
# Outer loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OnlineResult:
    pi1: MixturePolicy
    pi2: LogLinearPolicy
    value: np.ndarray
    trace: pd.DataFrame
    iteration_traces: tuple[pd.DataFrame, ...]


def expected_samples(cfg: SgdConfig, K: int) -> int:
    """Oracle calls of run_online_npg in exact mode: K (2 T N + 4 T' N')."""
    return K * (2 * cfg.T * cfg.N + 4 * cfg.T_prime * cfg.N_prime)


def run_online_npg(
    oracle: SamplingOracle,
    features: FeatureMap,
    cfg: SgdConfig,
    K: int,
    *,
    rho: np.ndarray | None = None,
    exact: bool = True,
    certificate: NashCertificate | None = None,
    value_rollouts: int = 200,
) -> OnlineResult:
    """Online two-player NPG from V_0 = 0.

    In `exact` mode V_k is the exact value of (pi1^k, pi2^k) and
    exploitability is tracked against a Shapley certificate; otherwise
    V_k is a Monte Carlo estimate and exploitability is NaN.
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    game = oracle.game
    sigma = oracle.sigma
    rho = np.full(game.n_states, 1.0 / game.n_states) if rho is None else as_state_dist(rho, game.n_states, name="rho")
    if exact and certificate is None:
        certificate = shapley_value_iteration(game)

    v = np.zeros(game.n_states)
    rows = []
    iteration_traces = []
    for k in range(1, K + 1):
        greedy = online_greedy_step(oracle, v, features, cfg, k=k, track=exact)
        pi1 = greedy.x_bar
        step = online_iteration_step(oracle, pi1, features, cfg, k=k, sigma=sigma, track=exact)
        iteration_traces.append(step.trace)
        chosen = step.trace.iloc[step.index]
        if exact:
            v = evaluate_value(game, pi1.to_tabular(), step.pi2.to_tabular())
            expl = exploitability(game, pi1.to_tabular(), rho, certificate=certificate)
        else:
            oracle.reseed("value", k)
            v = monte_carlo_value(oracle, pi1, step.pi2, value_rollouts)
            expl = float("nan")
        rows.append(
            {
                "k": k,
                "t": cfg.T,
                "n_samples_used": oracle.samples,
                "exploitability": expl,
                "subopt_sigma": float(chosen["subopt_sigma"]),
                "greedy_gap": greedy.max_gap,
                "seed": oracle.seed,
                "iota": greedy.iota,
                "max_grad_norm": max(greedy.max_grad_norm, float(step.trace["max_grad_norm"].max())),
                "grad_excursions": greedy.excursions + int(step.trace["grad_excursions"].sum()),
            }
        )
        logger.debug("online outer loop %d/%d: exploitability %.4e, samples %d", k, K, expl, oracle.samples)

    trace = pd.DataFrame(rows, columns=TRACE_COLUMNS)
    if trace["grad_excursions"].sum() > 0:
        logger.warning(
            "%d sampled gradients exceeded the bound G (largest norm %.3f)",
            int(trace["grad_excursions"].sum()),
            float(trace["max_grad_norm"].max()),
        )
    return OnlineResult(
        pi1=pi1, pi2=step.pi2, value=v, trace=trace, iteration_traces=tuple(iteration_traces)
    )
