"""Tabular MDPs, feature maps, trajectories and their JSON file formats."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

PROB_ATOL = 1e-9


class ConfigurationError(ValueError):
    """Raised when array shapes or parameter values are inconsistent."""


class SchemaError(ValueError):
    """Raised when an input file does not follow the documented JSON schema."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _frozen(arr, dtype=float) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite MDP without a reward: P(s'|s,a), discount and start distribution.

    ``transition`` has shape (S, A, S).
    """

    transition: np.ndarray
    discount: float
    initial_dist: np.ndarray

    def __post_init__(self):
        P = _frozen(self.transition)
        rho = _frozen(self.initial_dist)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or P.shape[0] < 1 or P.shape[1] < 1:
            raise ConfigurationError(f"transition must have shape (S, A, S), got {P.shape}")
        if rho.shape != (P.shape[0],):
            raise ConfigurationError(
                f"initial_dist has shape {rho.shape}, expected ({P.shape[0]},)"
            )
        if not np.all(np.isfinite(P)) or np.any(P < 0):
            raise ConfigurationError("transition entries must be finite and nonnegative")
        row_err = np.abs(P.sum(axis=2) - 1.0).max()
        if row_err > PROB_ATOL:
            raise ConfigurationError(f"transition rows must sum to 1 (max error {row_err:.3g})")
        if np.any(rho < 0) or abs(rho.sum() - 1.0) > PROB_ATOL:
            raise ConfigurationError("initial_dist must be a probability vector")
        if not 0.0 <= float(self.discount) < 1.0:
            raise ConfigurationError(f"discount must lie in [0, 1), got {self.discount}")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "initial_dist", rho)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.num_states, self.num_actions


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Precomputed features phi(s, a) with shape (S, A, k)."""

    values: np.ndarray

    def __post_init__(self):
        phi = _frozen(self.values)
        if phi.ndim != 3 or phi.shape[2] < 1:
            raise ConfigurationError(f"feature table must have shape (S, A, k), got {phi.shape}")
        if not np.all(np.isfinite(phi)):
            raise ConfigurationError("feature values must be finite")
        object.__setattr__(self, "values", phi)

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def rewards(self, theta) -> np.ndarray:
        """Reward table r(s, a) = theta . phi(s, a)."""
        theta = check_theta(theta, self)
        return self.values @ theta


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A demonstration: an ordered (T, 2) array of (state, action) pairs."""

    steps: np.ndarray

    def __post_init__(self):
        steps = np.array(self.steps, dtype=np.int64, copy=True)
        if steps.ndim != 2 or steps.shape[1] != 2 or steps.shape[0] < 1:
            raise ConfigurationError("a trajectory needs at least one (state, action) pair")
        steps.setflags(write=False)
        object.__setattr__(self, "steps", steps)

    @classmethod
    def from_pairs(cls, pairs: Iterable[Sequence[int]]) -> "Trajectory":
        return cls(np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2))

    @property
    def states(self) -> np.ndarray:
        return self.steps[:, 0]

    @property
    def actions(self) -> np.ndarray:
        return self.steps[:, 1]

    def __len__(self) -> int:
        return self.steps.shape[0]

    def __eq__(self, other):
        return isinstance(other, Trajectory) and np.array_equal(self.steps, other.steps)

    def __hash__(self):
        return hash(self.steps.tobytes())

    def to_list(self) -> list[list[int]]:
        return self.steps.tolist()


@dataclass(frozen=True)
class DemonstrationSet:
    trajectories: tuple[Trajectory, ...]

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        if not trajs:
            raise ConfigurationError("a demonstration set needs at least one trajectory")
        object.__setattr__(self, "trajectories", trajs)

    @property
    def n(self) -> int:
        return len(self.trajectories)

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self) -> Iterator[Trajectory]:
        return iter(self.trajectories)

    def __getitem__(self, i) -> Trajectory:
        return self.trajectories[i]

    @property
    def max_length(self) -> int:
        return max(len(t) for t in self.trajectories)

    def start_states(self) -> np.ndarray:
        return np.array([t.steps[0, 0] for t in self.trajectories], dtype=np.int64)

    def start_distribution(self, num_states: int, weights=None) -> np.ndarray:
        """Empirical (optionally weighted) distribution of first states."""
        w = np.ones(self.n) if weights is None else np.asarray(weights, dtype=float)
        rho = np.bincount(self.start_states(), weights=w, minlength=num_states).astype(float)
        total = rho.sum()
        return rho / total if total > 0 else rho


def check_theta(theta, features: FeatureMap) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (features.dim,):
        raise ConfigurationError(
            f"theta has shape {theta.shape} but features have dimension {features.dim}"
        )
    if not np.all(np.isfinite(theta)):
        raise ConfigurationError("theta must be finite")
    return theta


def reward_of(theta, features: FeatureMap, s: int, a: int) -> float:
    theta = check_theta(theta, features)
    return float(features.values[s, a] @ theta)


def discount_weights(length: int, gamma: float) -> np.ndarray:
    # gamma ** 0 == 1 also for gamma == 0
    return np.power(float(gamma), np.arange(length, dtype=float))


def feature_expectation(features: FeatureMap, tau: Trajectory, gamma: float) -> np.ndarray:
    """Discounted feature sum along every recorded pair of ``tau``."""
    phi = features.values[tau.states, tau.actions]
    return discount_weights(len(tau), gamma) @ phi


def trajectory_return(theta, features: FeatureMap, tau: Trajectory, gamma: float) -> float:
    theta = check_theta(theta, features)
    r = features.values[tau.states, tau.actions] @ theta
    return float(discount_weights(len(tau), gamma) @ r)


def validate_trajectory(mdp: TabularMdp, tau: Trajectory) -> bool:
    s, a = tau.states, tau.actions
    if np.any(s < 0) or np.any(s >= mdp.num_states) or np.any(a < 0) or np.any(a >= mdp.num_actions):
        return False
    if len(tau) > 1 and np.any(mdp.transition[s[:-1], a[:-1], s[1:]] <= 0):
        return False
    return True


# --- JSON file formats -----------------------------------------------------


def mdp_to_dict(mdp: TabularMdp) -> dict:
    return {
        "num_states": mdp.num_states,
        "num_actions": mdp.num_actions,
        "discount": mdp.discount,
        "transition": mdp.transition.tolist(),
        "initial_dist": mdp.initial_dist.tolist(),
    }


def _field(d: dict, name: str):
    if not isinstance(d, dict) or name not in d:
        raise SchemaError(name, "missing")
    return d[name]


def mdp_from_dict(d: dict) -> TabularMdp:
    S = _field(d, "num_states")
    A = _field(d, "num_actions")
    if not isinstance(S, int) or S < 1:
        raise SchemaError("num_states", "must be a positive integer")
    if not isinstance(A, int) or A < 1:
        raise SchemaError("num_actions", "must be a positive integer")
    try:
        P = np.array(_field(d, "transition"), dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError("transition", f"not a numeric array ({exc})") from None
    if P.shape != (S, A, S):
        raise SchemaError("transition", f"expected shape {(S, A, S)}, got {P.shape}")
    try:
        rho = np.array(_field(d, "initial_dist"), dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError("initial_dist", f"not a numeric array ({exc})") from None
    if rho.shape != (S,):
        raise SchemaError("initial_dist", f"expected length {S}, got shape {rho.shape}")
    discount = _field(d, "discount")
    try:
        return TabularMdp(P, float(discount), rho)
    except ConfigurationError as exc:
        raise SchemaError("mdp", str(exc)) from None


def demos_to_dict(demos: DemonstrationSet, labels=None) -> dict:
    out = {"trajectories": [t.to_list() for t in demos]}
    if labels is not None:
        out["labels"] = [int(x) for x in labels]
    return out


def demos_from_dict(d: dict) -> DemonstrationSet:
    raw = _field(d, "trajectories")
    if not isinstance(raw, list) or not raw:
        raise SchemaError("trajectories", "must be a nonempty list")
    trajs = []
    for i, t in enumerate(raw):
        arr = np.array(t)
        if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 1 or arr.dtype.kind not in "iu":
            raise SchemaError(f"trajectories[{i}]", "must be a nonempty list of [state, action] integer pairs")
        trajs.append(Trajectory(arr))
    return DemonstrationSet(tuple(trajs))


def labels_from_dict(d: dict):
    if "labels" not in d:
        return None
    labels = d["labels"]
    if not isinstance(labels, list) or len(labels) != len(d["trajectories"]):
        raise SchemaError("labels", "must be a list parallel to trajectories")
    return np.asarray(labels, dtype=np.int64)


def features_to_dict(features: FeatureMap) -> dict:
    return {"dim": features.dim, "values": features.values.tolist()}


def features_from_dict(d: dict) -> FeatureMap:
    dim = _field(d, "dim")
    try:
        values = np.array(_field(d, "values"), dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError("values", f"not a numeric array ({exc})") from None
    if values.ndim != 3 or values.shape[2] != dim:
        raise SchemaError("values", f"expected shape (S, A, {dim}), got {values.shape}")
    return FeatureMap(values)


def write_json(path, obj) -> None:
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(obj, fh)


def read_json(path) -> dict:
    path = Path(path)
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(str(path), f"invalid JSON ({exc})") from None


def save_mdp(path, mdp: TabularMdp) -> None:
    write_json(path, mdp_to_dict(mdp))


def load_mdp(path) -> TabularMdp:
    return mdp_from_dict(read_json(path))


def save_demos(path, demos: DemonstrationSet, labels=None) -> None:
    write_json(path, demos_to_dict(demos, labels))


def load_demos(path) -> DemonstrationSet:
    return demos_from_dict(read_json(path))
