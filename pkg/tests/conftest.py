import numpy as np
import pytest
from hypothesis import strategies as st

from bcirl.mdp import DemonstrationSet, FeatureMap, TabularMdp, Trajectory


def random_mdp(rng, S=5, A=2, gamma=0.9, density=1.0) -> TabularMdp:
    P = rng.random((S, A, S))
    if density < 1.0:
        P *= rng.random((S, A, S)) < density
        P[..., 0] += 1e-3
    P /= P.sum(axis=2, keepdims=True)
    rho = rng.random(S)
    return TabularMdp(P, gamma, rho / rho.sum())


def random_features(rng, S=5, A=2, k=3) -> FeatureMap:
    return FeatureMap(rng.standard_normal((S, A, k)))


def chain_mdp(S=3, gamma=0.9) -> TabularMdp:
    """Deterministic chain: action 0 stays, action 1 moves right (the last state absorbs)."""
    P = np.zeros((S, 2, S))
    for s in range(S):
        P[s, 0, s] = 1.0
        P[s, 1, min(s + 1, S - 1)] = 1.0
    rho = np.zeros(S)
    rho[0] = 1.0
    return TabularMdp(P, gamma, rho)


def rollout(mdp, probs, rng, length, start=None):
    s = rng.choice(mdp.num_states, p=mdp.initial_dist) if start is None else start
    steps = []
    for _ in range(length):
        a = rng.choice(mdp.num_actions, p=probs[s])
        steps.append((s, a))
        s = rng.choice(mdp.num_states, p=mdp.transition[s, a])
    return Trajectory.from_pairs(steps)


def sample_demos(mdp, probs, rng, n, length) -> DemonstrationSet:
    return DemonstrationSet(tuple(rollout(mdp, probs, rng, length) for _ in range(n)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@st.composite
def mdp_instances(draw, max_states=6, max_actions=3, max_k=4):
    seed = draw(st.integers(0, 2**32 - 1))
    S = draw(st.integers(1, max_states))
    A = draw(st.integers(1, max_actions))
    k = draw(st.integers(1, max_k))
    gamma = draw(st.floats(0.0, 0.95))
    rng = np.random.default_rng(seed)
    return random_mdp(rng, S, A, gamma), random_features(rng, S, A, k), rng


# --- acceptance summary -----------------------------------------------------

ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion; returns the verdict."""
    lines = request.config.stash.setdefault(ACCEPTANCE_LINES, [])

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        lines.append((number, f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
