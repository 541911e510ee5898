"""Parametric behavior clustering: EM over a fixed number of reward clusters."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .maxent import IrlConfig, IrlProblem, IrlRecord, IrlTrace, ascent_step
from .mdp import ConfigurationError, DemonstrationSet, FeatureMap, TabularMdp
from .solver import DemoIndex, SoftPolicy

ROW_ATOL = 1e-9


@dataclass
class ClusterModel:
    """Reward weights per cluster (rows of ``thetas``), the prior over clusters and cached policies."""

    thetas: np.ndarray
    prior: np.ndarray
    policies: list[SoftPolicy] = field(default_factory=list)

    def __post_init__(self):
        self.thetas = np.atleast_2d(np.asarray(self.thetas, dtype=float))
        self.prior = np.asarray(self.prior, dtype=float)
        if self.thetas.shape[0] != self.prior.shape[0]:
            raise ConfigurationError("one prior entry per cluster is required")
        if np.any(self.prior < 0) or abs(self.prior.sum() - 1.0) > ROW_ATOL:
            raise ConfigurationError("cluster prior must be a probability vector")
        if self.policies and len(self.policies) != self.m:
            raise ConfigurationError("one cached policy per cluster is required")

    @property
    def m(self) -> int:
        return self.thetas.shape[0]

    def to_dict(self, beta=None) -> dict:
        out = {"clusters": [{"theta": t.tolist(), "psi": float(p)} for t, p in zip(self.thetas, self.prior)]}
        if beta is not None:
            out["beta"] = np.asarray(beta).tolist()
        return out


def log_likelihood_matrix(mdp: TabularMdp, policies, demos: DemonstrationSet, index: DemoIndex | None = None) -> np.ndarray:
    """(n, m) table of log P(tau_i | theta_j)."""
    index = index or DemoIndex(mdp, demos)
    return np.stack([index.log_likelihoods(p) for p in policies], axis=1)


def _row_logsumexp(x: np.ndarray) -> np.ndarray:
    xmax = x.max(axis=1)
    safe = np.where(np.isfinite(xmax), xmax, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.exp(x - safe[:, None]).sum(axis=1))


def responsibilities(loglik: np.ndarray, prior) -> np.ndarray:
    """Posterior over clusters per demo, computed in log space.

    Rows whose every entry is impossible fall back to the uniform distribution.
    """
    with np.errstate(divide="ignore"):
        logp = loglik + np.log(np.asarray(prior, dtype=float))[None, :]
    lse = _row_logsumexp(logp)
    beta = np.empty_like(logp)
    ok = np.isfinite(lse)
    beta[ok] = np.exp(logp[ok] - lse[ok, None])
    beta[~ok] = 1.0 / logp.shape[1]
    return beta


def observed_log_likelihood(loglik: np.ndarray, prior) -> float:
    """sum_i log sum_j P(tau_i|theta_j) Psi_j."""
    with np.errstate(divide="ignore"):
        logp = loglik + np.log(np.asarray(prior, dtype=float))[None, :]
    return float(_row_logsumexp(logp).sum())


def e_step(model: ClusterModel, demos: DemonstrationSet, mdp: TabularMdp) -> np.ndarray:
    if len(model.policies) != model.m:
        raise ConfigurationError("model policies are not solved for its thetas")
    return responsibilities(log_likelihood_matrix(mdp, model.policies, demos), model.prior)


def m_step_prior(beta) -> np.ndarray:
    """Closed-form prior update: column means of the responsibility matrix."""
    beta = np.asarray(beta, dtype=float)
    return beta.sum(axis=0) / beta.shape[0]


def weighted_irl_gradient(
    mdp: TabularMdp, features: FeatureMap, theta_j, demos: DemonstrationSet, beta_col, gamma=None,
    horizon=None, policy: SoftPolicy | None = None, config: IrlConfig | None = None,
) -> np.ndarray:
    """sum_i beta_ij phi(tau_i) minus the beta-mass-scaled policy feature expectation.

    The policy visitation starts from the beta-weighted empirical start
    distribution. An all-zero column yields a zero gradient.
    """
    beta_col = np.asarray(beta_col, dtype=float)
    if beta_col.shape != (demos.n,) or np.any(beta_col < 0) or np.any(beta_col > 1):
        raise ConfigurationError("beta_col must hold one weight in [0, 1] per demo")
    problem = IrlProblem(mdp, features, demos, gamma, horizon)
    if beta_col.sum() == 0:
        return np.zeros(features.dim)
    if policy is None:
        policy = problem.solve(theta_j, config or IrlConfig())
    return problem.gradient(policy, beta_col)


@dataclass
class EmRecord:
    iteration: int
    em_loglik: float
    grad_norms: np.ndarray
    prior: np.ndarray
    thetas: np.ndarray
    cluster_logliks: np.ndarray
    wall_time: float
    feature_gap: float = 0.0  # prior-weighted mean squared feature-expectation mismatch


@dataclass
class EmTrace:
    records: list[EmRecord] = field(default_factory=list)
    converged: bool = False

    def __len__(self):
        return len(self.records)

    @property
    def em_logliks(self) -> np.ndarray:
        return np.array([r.em_loglik for r in self.records])

    def cluster_traces(self) -> list[IrlTrace]:
        """Per-cluster view: beta-weighted mean log-likelihood, gradient norm and theta."""
        m = self.records[0].thetas.shape[0] if self.records else 0
        out = []
        for j in range(m):
            tr = IrlTrace(converged=self.converged)
            for r in self.records:
                tr.records.append(IrlRecord(r.iteration, float(r.cluster_logliks[j]), float(r.grad_norms[j]),
                                            r.thetas[j].copy(), r.wall_time))
            out.append(tr)
        return out

    def to_csv(self, path) -> None:
        m = self.records[0].thetas.shape[0] if self.records else 0
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "em_loglik"] + [f"grad_inf_norm_{j}" for j in range(m)]
                       + [f"psi_{j}" for j in range(m)] + ["wall_ms"])
            for r in self.records:
                w.writerow([r.iteration, repr(r.em_loglik)] + [repr(float(g)) for g in r.grad_norms]
                           + [repr(float(p)) for p in r.prior] + [f"{1e3 * r.wall_time:.3f}"])


@dataclass
class EmResult:
    model: ClusterModel
    beta: np.ndarray
    trace: EmTrace

    def __iter__(self):
        return iter((self.model, self.beta, self.trace.cluster_traces()))


def run_parametric_bcirl(
    mdp: TabularMdp, features: FeatureMap, demos: DemonstrationSet, m: int,
    config: IrlConfig | None = None, inner_steps: int = 1, init_thetas=None,
) -> EmResult:
    """EM with m clusters: E-step, closed-form prior, ``inner_steps`` gradient steps per cluster.

    Cluster gradients are taken on the per-demo average objective, so with
    m = 1 this follows ``run_maxent_irl`` step for step.
    """
    if m < 1:
        raise ConfigurationError("m must be >= 1")
    if inner_steps < 1:
        raise ConfigurationError("inner_steps must be >= 1")
    config = config or IrlConfig()
    problem = IrlProblem(mdp, features, demos, config.gamma, config.horizon)
    n = problem.n
    rng = np.random.default_rng(config.seed)
    thetas = config.init_scale * rng.standard_normal((m, features.dim))
    if init_thetas is not None:
        thetas = np.array(init_thetas, dtype=float).reshape(m, features.dim)
    prior = np.full(m, 1.0 / m)
    trace = EmTrace()
    t0 = time.perf_counter()
    policies = [problem.solve(thetas[j], config) for j in range(m)]
    for it in range(config.max_iters):
        L = np.stack([problem.log_likelihoods(p) for p in policies], axis=1)
        em_ll = observed_log_likelihood(L, prior)
        beta = responsibilities(L, prior)
        grads = np.stack([problem.gradient(policies[j], beta[:, j] / n) for j in range(m)])
        gnorms = np.max(np.abs(grads), axis=1)
        mass = beta.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            cl_ll = np.where(mass > 0, (beta * np.where(np.isfinite(L), L, 0.0)).sum(axis=0) / mass, 0.0)
        share = mass / n
        with np.errstate(invalid="ignore", divide="ignore"):
            gaps = np.where(share > 0, np.mean(grads ** 2, axis=1) / share ** 2, 0.0)
        trace.records.append(EmRecord(it, em_ll, gnorms, prior.copy(), thetas.copy(), cl_ll,
                                      time.perf_counter() - t0, float(share @ gaps)))
        if np.all(gnorms < config.grad_tol):
            trace.converged = True
            break
        prior = m_step_prior(beta)
        for j in range(m):
            w = beta[:, j] / n
            g, current = grads[j], problem.weighted_log_likelihood(policies[j], w)
            for step in range(inner_steps):
                if step:
                    g = problem.gradient(policies[j], w)
                thetas[j], policies[j], current = ascent_step(problem, thetas[j], g, policies[j], w, current,
                                                              config, it, cluster=j)
    if not trace.converged:
        L = np.stack([problem.log_likelihoods(p) for p in policies], axis=1)
        beta = responsibilities(L, prior)
    model = ClusterModel(thetas, prior, policies)
    return EmResult(model, beta, trace)
