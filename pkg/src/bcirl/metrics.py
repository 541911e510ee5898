"""Evaluation metrics: feature-expectation gaps, clustering purity and cluster matching."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .mdp import ConfigurationError, FeatureMap, TabularMdp
from .solver import SoftPolicy, soft_value_iteration, visitation_from_policy


@dataclass
class MetricRecord:
    iteration: int
    feature_gap_ms: float
    loglik: float
    num_clusters: int
    cluster_purity: float
    wall_ms: float

    def __post_init__(self):
        if self.feature_gap_ms < 0:
            raise ConfigurationError("feature gap must be nonnegative")
        if not 0.0 <= self.cluster_purity <= 1.0:
            raise ConfigurationError("purity must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def feature_expectation_gap(expert_fe, learned_fe) -> float:
    """Mean squared difference between two feature-expectation vectors."""
    a = np.asarray(expert_fe, dtype=float)
    b = np.asarray(learned_fe, dtype=float)
    if a.shape != b.shape:
        raise ConfigurationError(f"feature vectors differ in shape: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def hard_assignments(beta) -> np.ndarray:
    return np.asarray(beta).argmax(axis=1)


def cluster_purity(beta, labels) -> float:
    """Fraction of demos whose argmax cluster's majority label equals their own."""
    labels = np.asarray(labels)
    beta = np.asarray(beta)
    if beta.shape[0] != labels.shape[0]:
        raise ConfigurationError("need one label per demonstration")
    assign = hard_assignments(beta)
    total = 0
    for j in np.unique(assign):
        _, counts = np.unique(labels[assign == j], return_counts=True)
        total += counts.max()
    return total / len(labels)


def adjusted_rand_index(beta, labels) -> float:
    from sklearn.metrics import adjusted_rand_score

    return float(adjusted_rand_score(np.asarray(labels), hard_assignments(beta)))


def policy_feature_expectation(
    mdp: TabularMdp, features: FeatureMap, policy: SoftPolicy, start_dist=None, horizon: int = 100, gamma=None,
) -> np.ndarray:
    start = mdp.initial_dist if start_dist is None else start_dist
    g = mdp.discount if gamma is None else gamma
    return visitation_from_policy(mdp, policy, start, horizon, g).feature_expectation(features)


def greedy_match(gaps) -> list[tuple[int, int]]:
    """Repeatedly pair the (row, column) with the smallest remaining gap."""
    gaps = np.array(gaps, dtype=float)
    pairs = []
    for _ in range(min(gaps.shape)):
        i, j = np.unravel_index(np.argmin(gaps), gaps.shape)
        pairs.append((int(i), int(j)))
        gaps[i, :] = np.inf
        gaps[:, j] = np.inf
    return sorted(pairs)


def gap_matrix(learned_fe, true_fe) -> np.ndarray:
    return np.array([[feature_expectation_gap(t, l) for t in true_fe] for l in learned_fe])


def match_policies(
    learned, reference, mdp: TabularMdp, features: FeatureMap, start_dist=None, horizon: int = 100, gamma=None,
) -> tuple[list[tuple[int, int]], np.ndarray]:
    """Greedy min-gap matching of learned to reference policies by feature expectation.

    Returns (learned index, reference index) pairs and the gap of each pair.
    """
    learned, reference = list(learned), list(reference)
    if not learned or not reference:
        raise ConfigurationError("both policy lists must be nonempty")

    def fe(pol):
        return policy_feature_expectation(mdp, features, pol, start_dist, horizon, gamma)

    G = gap_matrix([fe(p) for p in learned], [fe(p) for p in reference])
    pairs = greedy_match(G)
    return pairs, np.array([G[i, j] for i, j in pairs])


def match_clusters_to_truth(
    learned_thetas, true_thetas, mdp: TabularMdp, features: FeatureMap,
    start_dist=None, horizon: int = 100, gamma=None,
) -> tuple[list[tuple[int, int]], np.ndarray]:
    """Match learned to true rewards through the feature expectations of their soft-optimal policies."""
    learned_thetas, true_thetas = list(learned_thetas), list(true_thetas)
    if not learned_thetas or not true_thetas:
        raise ConfigurationError("both reward lists must be nonempty")

    def solve(theta):
        return soft_value_iteration(mdp, features, theta, tol=1e-10)

    return match_policies(map(solve, learned_thetas), map(solve, true_thetas), mdp, features,
                          start_dist, horizon, gamma)
