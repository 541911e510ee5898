"""Soft (maximum-entropy) value iteration, visitation frequencies and demo likelihoods."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .mdp import ConfigurationError, DemonstrationSet, FeatureMap, TabularMdp, Trajectory

DEFAULT_TOL = 1e-6
DEFAULT_MAX_SWEEPS = 10_000


@dataclass(frozen=True, eq=False)
class SoftPolicy:
    """Stochastic policy pi(a|s) together with the soft state values it came from."""

    probs: np.ndarray
    soft_values: np.ndarray | None = None
    log_probs: np.ndarray | None = None
    converged: bool = True
    sweeps: int = 0

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 2:
            raise ConfigurationError("policy table must have shape (S, A)")
        if self.log_probs is None:
            with np.errstate(divide="ignore"):
                object.__setattr__(self, "log_probs", np.log(probs))
        object.__setattr__(self, "probs", probs)

    @property
    def num_states(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True, eq=False)
class VisitationTable:
    counts: np.ndarray
    horizon: int

    def feature_expectation(self, features: FeatureMap) -> np.ndarray:
        return np.einsum("sa,sak->k", self.counts, features.values)

    @property
    def total(self) -> float:
        return float(self.counts.sum())


def logsumexp_rows(q: np.ndarray) -> np.ndarray:
    qmax = q.max(axis=1)
    return qmax + np.log(np.exp(q - qmax[:, None]).sum(axis=1))


@lru_cache(maxsize=32)
def _flat_transition(mdp: TabularMdp):
    """(S*A, S) view of P; sparse when that pays off."""
    S, A = mdp.shape
    P2 = mdp.transition.reshape(S * A, S)
    if S >= 64 and np.count_nonzero(P2) < 0.1 * P2.size:
        P2 = sp.csr_matrix(P2)
        return P2, P2.T.tocsr()
    return P2, P2.T


def expected_next(mdp: TabularMdp, values: np.ndarray) -> np.ndarray:
    """E[values(s') | s, a] as an (S, A) table."""
    P2, _ = _flat_transition(mdp)
    return np.asarray(P2 @ values).reshape(mdp.shape)


def soft_value_iteration(
    mdp: TabularMdp,
    features: FeatureMap,
    theta,
    tol: float = DEFAULT_TOL,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
    init_values=None,
) -> SoftPolicy:
    """Maximum-entropy policy for the reward theta . phi.

    Iterates Q = r + gamma * P V and V = logsumexp_a Q until the sup-norm
    change of V drops below ``tol``. When ``max_sweeps`` runs out the last
    iterate is returned with ``converged=False``. ``init_values`` warm-starts V.
    """
    if tol <= 0 or max_sweeps < 1:
        raise ConfigurationError("tol must be positive and max_sweeps >= 1")
    r = features.rewards(theta)
    gamma = mdp.discount
    V = np.zeros(mdp.num_states) if init_values is None else np.array(init_values, dtype=float)
    converged = False
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        Q = r + gamma * expected_next(mdp, V)
        V_new = logsumexp_rows(Q)
        delta = np.max(np.abs(V_new - V))
        V = V_new
        if delta < tol:
            converged = True
            break
    Q = r + gamma * expected_next(mdp, V)
    log_pi = Q - logsumexp_rows(Q)[:, None]
    return SoftPolicy(np.exp(log_pi), V, log_pi, converged, sweeps)


def discounted_horizon(gamma: float, eps: float = 1e-6) -> int:
    """Smallest H with gamma**H < eps."""
    if gamma <= 0:
        return 1
    return int(np.floor(np.log(eps) / np.log(gamma))) + 1


def visitation_from_policy(
    mdp: TabularMdp, policy: SoftPolicy, start_dist, horizon: int, gamma: float
) -> VisitationTable:
    """Discounted state-action visitation D(s,a) = sum_{t<horizon} gamma^t mu_t(s) pi(a|s)."""
    if horizon < 1:
        raise ConfigurationError("horizon must be >= 1")
    mu = np.asarray(start_dist, dtype=float)
    if mu.shape != (mdp.num_states,):
        raise ConfigurationError("start_dist length must equal num_states")
    _, P2T = _flat_transition(mdp)
    pi = policy.probs
    D = np.zeros(mdp.shape)
    weight = 1.0
    for t in range(horizon):
        d_t = mu[:, None] * pi
        D += weight * d_t
        if t + 1 < horizon:
            mu = np.asarray(P2T @ d_t.ravel())
            weight *= gamma
    return VisitationTable(D, horizon)


def visitation_from_demos(
    demos: DemonstrationSet, weights, gamma: float, shape: tuple[int, int]
) -> VisitationTable:
    """Weighted empirical discounted visitation of the demonstrations."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (demos.n,) or np.any(w < 0):
        raise ConfigurationError("weights must be nonnegative with one entry per demo")
    D = np.zeros(shape)
    for wi, tau in zip(w, demos):
        if wi == 0:
            continue
        disc = np.power(float(gamma), np.arange(len(tau), dtype=float))
        np.add.at(D, (tau.states, tau.actions), wi * disc)
    return VisitationTable(D, demos.max_length)


def transition_log_likelihood(mdp: TabularMdp, tau: Trajectory) -> float:
    """Sum of log P(s_{t+1}|s_t,a_t); the policy-free part of a demo's likelihood."""
    if len(tau) < 2:
        return 0.0
    s, a = tau.states, tau.actions
    p = mdp.transition[s[:-1], a[:-1], s[1:]]
    with np.errstate(divide="ignore"):
        return float(np.log(p).sum())


def trajectory_log_likelihood(mdp: TabularMdp, policy: SoftPolicy, tau: Trajectory) -> float:
    """log prod_t pi(a_t|s_t) P(s_{t+1}|s_t,a_t); the last pair only contributes pi.

    Impossible actions or transitions give ``-inf`` rather than raising.
    """
    return float(policy.log_probs[tau.states, tau.actions].sum()) + transition_log_likelihood(mdp, tau)


class DemoIndex:
    """Flattened demonstration arrays for vectorised per-demo likelihoods."""

    def __init__(self, mdp: TabularMdp, demos: DemonstrationSet):
        self.n = demos.n
        self.states = np.concatenate([t.states for t in demos])
        self.actions = np.concatenate([t.actions for t in demos])
        self.segment = np.repeat(np.arange(demos.n), [len(t) for t in demos])
        self.transition_ll = np.array([transition_log_likelihood(mdp, t) for t in demos])

    def log_likelihoods(self, policy: SoftPolicy) -> np.ndarray:
        lp = policy.log_probs[self.states, self.actions]
        if np.any(np.isneginf(lp)):
            out = np.zeros(self.n)
            np.add.at(out, self.segment, lp)
        else:
            out = np.bincount(self.segment, weights=lp, minlength=self.n)
        return out + self.transition_ll


def demo_log_likelihoods(mdp: TabularMdp, policy: SoftPolicy, demos: DemonstrationSet) -> np.ndarray:
    return DemoIndex(mdp, demos).log_likelihoods(policy)
