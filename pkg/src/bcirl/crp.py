"""Nonparametric behavior clustering with a Chinese-restaurant-process prior.

Each sweep reseats every demonstration by sampling from its posterior over
the existing clusters plus one freshly drawn candidate reward, then takes a
single weighted gradient step for every surviving cluster.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .em import ClusterModel, observed_log_likelihood
from .maxent import DivergenceError, IrlConfig, IrlProblem
from .mdp import ConfigurationError, DemonstrationSet, FeatureMap, TabularMdp
from .solver import SoftPolicy

MIN_CLUSTER_MASS = 1e-12
MASS_ATOL = 1e-6


class ClusterStateError(RuntimeError):
    """Internal bookkeeping of cluster masses went inconsistent."""


@dataclass
class CrpConfig(IrlConfig):
    alpha: float = 3.0
    resample_draws: int = 1
    theta_prior_scale: float = 0.1
    shuffle: bool = False

    def __post_init__(self):
        super().__post_init__()
        if not self.alpha > 0:
            raise ConfigurationError("alpha must be positive")
        if self.resample_draws < 1:
            raise ConfigurationError("resample_draws must be >= 1")
        if not self.theta_prior_scale > 0:
            raise ConfigurationError("theta_prior_scale must be positive")


def crp_prior(nc, alpha: float, n: float | None = None) -> np.ndarray:
    """Seating probabilities (nc_k / (n + alpha), ..., alpha / (n + alpha)).

    ``n`` defaults to the seated mass ``sum(nc)``; the last entry is the new-cluster slot.
    """
    nc = np.asarray(nc, dtype=float)
    if not alpha > 0:
        raise ConfigurationError("alpha must be positive")
    if np.any(nc < 0):
        raise ConfigurationError("cluster masses must be nonnegative")
    total = nc.sum()
    if n is None:
        n = total
    elif abs(n - total) > MASS_ATOL:
        raise ConfigurationError(f"cluster masses sum to {total}, not n={n}")
    return np.append(nc, alpha) / (n + alpha)


def posterior_over_clusters(loglik, prior_p) -> np.ndarray:
    """beta'_j proportional to prior_p[j] * exp(loglik[j]); falls back to the prior."""
    loglik = np.asarray(loglik, dtype=float)
    prior_p = np.asarray(prior_p, dtype=float)
    with np.errstate(divide="ignore"):
        logp = loglik + np.log(prior_p)
    top = logp.max()
    if not np.isfinite(top):
        return prior_p / prior_p.sum()
    w = np.exp(logp - top)
    return w / w.sum()


def boot_strap(beta_prime, draws: int, rng: np.random.Generator) -> np.ndarray:
    """Normalised histogram of ``draws`` categorical samples from ``beta_prime``."""
    if draws < 1:
        raise ConfigurationError("draws must be >= 1")
    p = np.asarray(beta_prime, dtype=float)
    p = p / p.sum()
    return rng.multinomial(draws, p) / draws


@dataclass(eq=False)
class Cluster:
    theta: np.ndarray
    policy: SoftPolicy | None = None
    values: np.ndarray | None = None  # last soft values, reused as a warm start
    loglik: np.ndarray | None = None  # per-demo log-likelihood under ``policy``

    def refresh(self, problem: IrlProblem, config: IrlConfig) -> None:
        if self.policy is None:
            self.policy = problem.solve(self.theta, config, self.values)
            self.values = self.policy.soft_values
            self.loglik = problem.log_likelihoods(self.policy)


@dataclass
class ClusterState:
    """Clusters, per-demo assignment vectors (rows of ``beta``) and cluster masses ``nc``."""

    n: int
    clusters: list[Cluster] = field(default_factory=list)
    beta: np.ndarray = None
    nc: np.ndarray = None
    candidate: Cluster | None = None
    max_clusters: int | None = None  # n for one-hot seating; soft seating can spread a demo wider

    def __post_init__(self):
        if self.max_clusters is None:
            self.max_clusters = self.n
        if self.beta is None:
            self.beta = np.zeros((self.n, len(self.clusters)))
        if self.nc is None:
            self.nc = self.beta.sum(axis=0)

    @property
    def m(self) -> int:
        return len(self.clusters)

    def check(self) -> None:
        if self.beta.shape != (self.n, self.m) or self.nc.shape != (self.m,):
            raise ClusterStateError("cluster bookkeeping shapes disagree")
        err = np.max(np.abs(self.nc - self.beta.sum(axis=0)), initial=0.0)
        if err > MASS_ATOL:
            raise ClusterStateError(f"cluster masses drifted from assignments by {err:.3g}")
        if self.m > self.max_clusters:
            raise ClusterStateError(f"{self.m} clusters exceed the cap of {self.max_clusters}")


def reseat_demo(state: ClusterState, i: int, beta_new) -> ClusterState:
    """Move demo ``i`` to ``beta_new`` (length m, or m + 1 with the candidate slot) and sparsify."""
    beta_new = np.asarray(beta_new, dtype=float)
    m = state.m
    if beta_new.shape not in ((m,), (m + 1,)):
        raise ConfigurationError(f"beta_new must have length {m} or {m + 1}")
    state.nc = state.nc - state.beta[i]
    if beta_new.shape == (m + 1,):
        if beta_new[m] > 0:
            if state.candidate is None:
                raise ClusterStateError("new-cluster slot has mass but no candidate reward")
            state.clusters.append(state.candidate)
            state.candidate = None
            state.beta = np.hstack([state.beta, np.zeros((state.n, 1))])
            state.nc = np.append(state.nc, 0.0)
        else:
            beta_new = beta_new[:m]
    state.beta[i] = beta_new
    state.nc = state.nc + beta_new
    keep = state.nc >= MIN_CLUSTER_MASS
    if not np.all(keep):
        state.clusters = [c for c, k in zip(state.clusters, keep) if k]
        state.beta = state.beta[:, keep]
        state.nc = state.nc[keep]
    state.check()
    return state


@dataclass
class CrpRecord:
    iteration: int
    num_clusters: int
    total_loglik: float
    masses: np.ndarray
    grad_norms: np.ndarray
    wall_time: float
    feature_gap: float = 0.0  # mass-weighted mean squared feature-expectation mismatch


@dataclass
class CrpTrace:
    records: list[CrpRecord] = field(default_factory=list)
    converged: bool = False

    def __len__(self):
        return len(self.records)

    @property
    def cluster_counts(self) -> np.ndarray:
        return np.array([r.num_clusters for r in self.records], dtype=int)

    @property
    def total_logliks(self) -> np.ndarray:
        return np.array([r.total_loglik for r in self.records])

    def detection_iteration(self, m: int) -> int | None:
        """First iteration from which the cluster count stays at ``m`` until the end."""
        counts = self.cluster_counts
        if not len(counts) or counts[-1] != m:
            return None
        wrong = np.flatnonzero(counts != m)
        return int(wrong[-1] + 1) if len(wrong) else 0

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "num_clusters", "total_loglik", "masses", "wall_ms"])
            for r in self.records:
                w.writerow([r.iteration, r.num_clusters, repr(r.total_loglik),
                            ";".join(repr(float(x)) for x in r.masses), f"{1e3 * r.wall_time:.3f}"])


@dataclass
class CrpResult:
    model: ClusterModel
    beta: np.ndarray
    trace: CrpTrace

    def __iter__(self):
        return iter((self.model, self.beta, self.trace))


def run_nonparametric_bcirl(
    mdp: TabularMdp, features: FeatureMap, demos: DemonstrationSet, config: CrpConfig | None = None,
) -> CrpResult:
    config = config or CrpConfig()
    problem = IrlProblem(mdp, features, demos, config.gamma, config.horizon)
    n, k = problem.n, features.dim
    rng = np.random.default_rng(config.seed)
    state = ClusterState(n, max_clusters=n * config.resample_draws)
    trace = CrpTrace()
    t0 = time.perf_counter()

    for it in range(config.max_iters):
        # thetas are fixed during the sweep, so each policy is solved once per sweep
        for c in state.clusters:
            c.refresh(problem, config)
        state.candidate = None
        order = rng.permutation(n) if config.shuffle else range(n)
        for i in order:
            if state.candidate is None:
                state.candidate = Cluster(config.theta_prior_scale * rng.standard_normal(k))
                state.candidate.refresh(problem, config)
            p = crp_prior(state.nc, config.alpha)
            ll = np.array([c.loglik[i] for c in state.clusters] + [state.candidate.loglik[i]])
            beta_prime = posterior_over_clusters(ll, p)
            reseat_demo(state, i, boot_strap(beta_prime, config.resample_draws, rng))
        if abs(state.nc.sum() - n) > MASS_ATOL:
            raise ClusterStateError("total cluster mass differs from the number of demos")

        L = np.stack([c.loglik for c in state.clusters], axis=1)
        psi = state.nc / n
        total_ll = observed_log_likelihood(L, psi)
        grads = np.stack([problem.gradient(c.policy, state.beta[:, j] / n) for j, c in enumerate(state.clusters)])
        gnorms = np.max(np.abs(grads), axis=1)
        # per-cluster gradients carry a psi_j factor; undo it before averaging
        gap = float(psi @ (np.mean(grads ** 2, axis=1) / psi ** 2))
        trace.records.append(CrpRecord(it, state.m, total_ll, state.nc.copy(), gnorms, time.perf_counter() - t0, gap))
        if np.all(gnorms < config.grad_tol):
            trace.converged = True
            break
        for j, c in enumerate(state.clusters):
            c.theta = c.theta + config.learning_rate * grads[j]
            if not np.all(np.isfinite(c.theta)):
                raise DivergenceError(it, cluster=j)
            c.policy = None

    for c in state.clusters:
        c.refresh(problem, config)
    policies = [c.policy for c in state.clusters]
    model = ClusterModel(np.stack([c.theta for c in state.clusters]), state.nc / n, policies)
    return CrpResult(model, state.beta.copy(), trace)
