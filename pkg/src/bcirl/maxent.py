"""Single-reward maximum-entropy IRL by gradient ascent on the demo log-likelihood."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mdp import ConfigurationError, DemonstrationSet, FeatureMap, TabularMdp, check_theta, feature_expectation
from .solver import (
    DEFAULT_MAX_SWEEPS,
    DEFAULT_TOL,
    DemoIndex,
    SoftPolicy,
    soft_value_iteration,
    visitation_from_policy,
)


class DivergenceError(RuntimeError):
    """Reward weights became non-finite during gradient ascent."""

    def __init__(self, iteration: int, cluster: int | None = None):
        where = f" in cluster {cluster}" if cluster is not None else ""
        super().__init__(f"non-finite reward weights{where} at iteration {iteration}")
        self.iteration = iteration
        self.cluster = cluster


@dataclass
class IrlConfig:
    learning_rate: float = 0.05
    grad_tol: float = 1e-4
    max_iters: int = 500
    gamma: float | None = None  # None: use the MDP discount
    seed: int = 0
    horizon: int | None = None  # None: longest demonstration
    init_scale: float = 0.1
    vi_tol: float = DEFAULT_TOL
    vi_max_sweeps: int = DEFAULT_MAX_SWEEPS
    monotone_steps: bool = False  # halve steps that would lower the weighted demo log-likelihood
    max_halvings: int = 10

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        if not self.grad_tol > 0:
            raise ConfigurationError("grad_tol must be positive")
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")
        if self.horizon is not None and self.horizon < 1:
            raise ConfigurationError("horizon must be >= 1")
        if self.max_halvings < 0:
            raise ConfigurationError("max_halvings must be >= 0")


@dataclass
class IrlRecord:
    iteration: int
    log_likelihood: float
    grad_norm: float
    theta: np.ndarray
    wall_time: float
    feature_gap: float = 0.0  # mean squared expert-minus-policy feature expectation


@dataclass
class IrlTrace:
    records: list[IrlRecord] = field(default_factory=list)
    converged: bool = False

    def __len__(self):
        return len(self.records)

    @property
    def log_likelihoods(self) -> np.ndarray:
        return np.array([r.log_likelihood for r in self.records])

    def same_path(self, other: "IrlTrace") -> bool:
        """Equality of everything but wall-clock time."""
        if len(self) != len(other) or self.converged != other.converged:
            return False
        return all(
            a.iteration == b.iteration
            and a.log_likelihood == b.log_likelihood
            and a.grad_norm == b.grad_norm
            and np.array_equal(a.theta, b.theta)
            for a, b in zip(self.records, other.records)
        )

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "loglik", "grad_inf_norm", "wall_ms"])
            for r in self.records:
                w.writerow([r.iteration, repr(r.log_likelihood), repr(r.grad_norm), f"{1e3 * r.wall_time:.3f}"])


class IrlProblem:
    """Precomputed per-dataset quantities shared by every gradient evaluation."""

    def __init__(self, mdp: TabularMdp, features: FeatureMap, demos: DemonstrationSet, gamma=None, horizon=None):
        if features.values.shape[:2] != mdp.shape:
            raise ConfigurationError("feature table does not match the MDP's (S, A)")
        self.mdp = mdp
        self.features = features
        self.demos = demos
        self.gamma = mdp.discount if gamma is None else float(gamma)
        self.horizon = demos.max_length if horizon is None else int(horizon)
        self.demo_fe = np.stack([feature_expectation(features, t, self.gamma) for t in demos])
        self.starts = demos.start_states()
        self.index = DemoIndex(mdp, demos)

    @property
    def n(self) -> int:
        return self.demos.n

    def solve(self, theta, config: IrlConfig, init_values=None) -> SoftPolicy:
        return soft_value_iteration(
            self.mdp, self.features, theta, config.vi_tol, config.vi_max_sweeps, init_values
        )

    def gradient(self, policy: SoftPolicy, weights) -> np.ndarray:
        """sum_i w_i phi(tau_i) - (sum_i w_i) * policy feature expectation from the w-weighted starts."""
        w = np.asarray(weights, dtype=float)
        mass = w.sum()
        if mass == 0:
            return np.zeros(self.features.dim)
        start = np.bincount(self.starts, weights=w, minlength=self.mdp.num_states) / mass
        D = visitation_from_policy(self.mdp, policy, start, self.horizon, self.gamma)
        return w @ self.demo_fe - mass * D.feature_expectation(self.features)

    def log_likelihoods(self, policy: SoftPolicy) -> np.ndarray:
        return self.index.log_likelihoods(policy)

    def weighted_log_likelihood(self, policy: SoftPolicy, weights) -> float:
        """sum_i w_i log P(tau_i); demos with zero weight are ignored even if impossible."""
        w = np.asarray(weights, dtype=float)
        L = self.log_likelihoods(policy)
        return float(np.sum(w[w > 0] * L[w > 0]))


def ascent_step(
    problem: IrlProblem, theta, grad, policy: SoftPolicy, weights, current: float, config: IrlConfig,
    iteration: int, cluster: int | None = None,
) -> tuple[np.ndarray, SoftPolicy, float]:
    """One gradient step ``theta + lr * grad``; returns (theta, policy, weighted log-likelihood).

    The step direction follows the feature-expectation gradient, which is not
    exactly the gradient of the trajectory likelihood. With ``monotone_steps``
    a step that lowers the weighted log-likelihood below ``current`` is halved,
    up to ``max_halvings`` times, after which theta is left unchanged.
    Without it the returned log-likelihood is just ``current``.
    """
    step = config.learning_rate
    for _ in range(config.max_halvings + 1):
        cand = theta + step * grad
        if not np.all(np.isfinite(cand)):
            raise DivergenceError(iteration, cluster)
        pol = problem.solve(cand, config, policy.soft_values)
        if not config.monotone_steps:
            return cand, pol, current
        value = problem.weighted_log_likelihood(pol, weights)
        if value >= current:
            return cand, pol, value
        step /= 2
    return theta, policy, current


def _policy_for(problem: IrlProblem, theta, policy, config):
    if policy is not None:
        return policy
    return problem.solve(theta, config or IrlConfig())


def maxent_gradient(
    mdp: TabularMdp, features: FeatureMap, theta, demos: DemonstrationSet,
    config: IrlConfig | None = None, policy: SoftPolicy | None = None,
) -> np.ndarray:
    """Expert minus soft-policy feature expectation, averaged over the demos."""
    config = config or IrlConfig()
    theta = check_theta(theta, features)
    problem = IrlProblem(mdp, features, demos, config.gamma, config.horizon)
    policy = _policy_for(problem, theta, policy, config)
    return problem.gradient(policy, np.full(problem.n, 1.0 / problem.n))


def weighted_surrogate_objective(
    mdp: TabularMdp, features: FeatureMap, theta, demos: DemonstrationSet, weights,
    gamma=None, vi_tol: float = 1e-12,
) -> float:
    """sum_i w_i [theta . phi(tau_i) - V_theta(s0_i)].

    This is the weighted MaxEnt log-likelihood with the soft value as log
    partition function; its gradient is the visitation-based IRL gradient
    when the visitation horizon covers the discounting.
    """
    theta = check_theta(theta, features)
    g = mdp.discount if gamma is None else gamma
    w = np.asarray(weights, dtype=float)
    fe = np.stack([feature_expectation(features, t, g) for t in demos])
    V = soft_value_iteration(mdp, features, theta, tol=vi_tol).soft_values
    return float(w @ (fe @ theta) - w @ V[demos.start_states()])


def dataset_log_likelihood(mdp: TabularMdp, policy: SoftPolicy, demos: DemonstrationSet) -> float:
    """Mean per-demo log-likelihood (``-inf`` propagates)."""
    return float(DemoIndex(mdp, demos).log_likelihoods(policy).mean())


@dataclass
class IrlResult:
    theta: np.ndarray
    policy: SoftPolicy
    trace: IrlTrace

    def __iter__(self):
        return iter((self.theta, self.policy, self.trace))


def run_maxent_irl(
    mdp: TabularMdp, features: FeatureMap, demos: DemonstrationSet, config: IrlConfig | None = None
) -> IrlResult:
    config = config or IrlConfig()
    problem = IrlProblem(mdp, features, demos, config.gamma, config.horizon)
    rng = np.random.default_rng(config.seed)
    theta = config.init_scale * rng.standard_normal((1, features.dim))[0]
    weights = np.full(problem.n, 1.0 / problem.n)
    trace = IrlTrace()
    t0 = time.perf_counter()
    policy = problem.solve(theta, config)
    current = problem.weighted_log_likelihood(policy, weights)
    for it in range(config.max_iters):
        grad = problem.gradient(policy, weights)
        gnorm = float(np.max(np.abs(grad)))
        ll = float(problem.log_likelihoods(policy).mean())
        trace.records.append(IrlRecord(it, ll, gnorm, theta.copy(), time.perf_counter() - t0,
                                       float(np.mean(grad ** 2))))
        if gnorm < config.grad_tol:
            trace.converged = True
            break
        theta, policy, current = ascent_step(problem, theta, grad, policy, weights, current, config, it)
    return IrlResult(theta, policy, trace)
