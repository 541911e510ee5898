"""Benchmark environments: the macro-cell gridworld and the lane-change driving grid.

Both builders are deterministic given their spec's seed. Demonstration
generators return ``LabeledDemoSet`` objects whose labels identify the
generating behavior; the labels are for evaluation only.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .mdp import ConfigurationError, DemonstrationSet, FeatureMap, TabularMdp, Trajectory
from .solver import SoftPolicy

INCONSISTENT_LABEL = -1


def _spec_from_dict(cls, d: dict):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigurationError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


# --- macro-cell gridworld ---------------------------------------------------

NORTH, SOUTH, EAST, WEST = range(4)
_GRID_MOVES = np.array([(-1, 0), (1, 0), (0, 1), (0, -1)])


@dataclass
class MacroGridSpec:
    grid_size: int = 8
    macro_size: int = 2
    slip_prob: float = 0.2
    num_rewards: int = 3
    reward_zero_prob: float = 0.8
    reward_range: tuple[float, float] = (-1.0, 1.0)
    discount: float = 0.9
    demo_length: int = 24
    demos_per_reward: int = 1
    expert_temperature: float = 0.1
    distinct_goals: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.grid_size < 1 or self.macro_size < 1 or self.grid_size % self.macro_size:
            raise ConfigurationError("grid_size must be a positive multiple of macro_size")
        if not 0.0 <= self.slip_prob < 1.0:
            raise ConfigurationError("slip_prob must lie in [0, 1)")
        if self.num_rewards < 1:
            raise ConfigurationError("num_rewards must be >= 1")
        if not self.expert_temperature > 0:
            raise ConfigurationError("expert_temperature must be positive")
        self.reward_range = tuple(self.reward_range)
        if self.distinct_goals:
            cells = (self.grid_size // self.macro_size) ** 2
            if 2 * self.num_rewards > cells or self.reward_range[1] <= 0 or self.reward_zero_prob >= 1:
                raise ConfigurationError("distinct_goals needs positive rewards and at most one reward per macro cell")

    @classmethod
    def from_dict(cls, d: dict) -> "MacroGridSpec":
        return _spec_from_dict(cls, d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["reward_range"] = list(self.reward_range)
        return d


def sample_macro_rewards(spec: MacroGridSpec, rng: np.random.Generator, count: int | None = None) -> np.ndarray:
    """Each macro cell: zero with ``reward_zero_prob``, otherwise uniform on ``reward_range``.

    With ``distinct_goals`` a reward is redrawn until it has a positive macro
    cell and none of its positive cells is positive in an earlier reward.
    """
    count = spec.num_rewards if count is None else count
    k = (spec.grid_size // spec.macro_size) ** 2
    lo, hi = spec.reward_range
    values = rng.uniform(lo, hi, size=(count, k))
    zero = rng.random((count, k)) < spec.reward_zero_prob
    out = np.where(zero, 0.0, values)
    if spec.distinct_goals:
        # resample until every reward has a positive cell and no cell is positive in two rewards
        for i in range(count):
            while out[i].max() <= 0 or np.any((out[i] > 0) & np.any(out[:i] > 0, axis=0)):
                v = rng.uniform(lo, hi, size=k)
                out[i] = np.where(rng.random(k) < spec.reward_zero_prob, 0.0, v)
    return out


def build_macro_gridworld(spec: MacroGridSpec) -> tuple[TabularMdp, FeatureMap, list[np.ndarray]]:
    g = spec.grid_size
    S, A = g * g, 4
    P = np.zeros((S, A, S))
    for s in range(S):
        r, c = divmod(s, g)
        dest = []
        for dr, dc in _GRID_MOVES:
            rr, cc = r + dr, c + dc
            dest.append(rr * g + cc if 0 <= rr < g and 0 <= cc < g else s)
        for a in range(A):
            P[s, a, dest[a]] += 1.0 - spec.slip_prob
            for d in dest:
                P[s, a, d] += spec.slip_prob / A
    per_side = g // spec.macro_size
    k = per_side * per_side
    phi = np.zeros((S, A, k))
    for s in range(S):
        r, c = divmod(s, g)
        phi[s, :, (r // spec.macro_size) * per_side + c // spec.macro_size] = 1.0
    mdp = TabularMdp(P, spec.discount, np.full(S, 1.0 / S))
    rng = np.random.default_rng(spec.seed)
    rewards = list(sample_macro_rewards(spec, rng))
    return mdp, FeatureMap(phi), rewards


# --- driving gridworld ------------------------------------------------------

FORWARD, RIGHT, LEFT, HARD_RIGHT, HARD_LEFT, BREAK = range(6)
ACTION_NAMES = ("forward", "right", "left", "hard-right", "hard-left", "break")
_LANE_SHIFT = np.array([0, 1, -1, 2, -2, 0])
_ADVANCE = np.array([1, 1, 1, 1, 1, 0])

FAR, VICINITY, OVERTAKING = range(3)
ZONE_NAMES = ("far", "vicinity", "overtaking")


@dataclass
class DrivingGridSpec:
    """Driving grid in the frame moving with traffic.

    Other cars travel at ``traffic_speed`` and the agent at ``agent_speed``,
    so in the traffic frame cars are fixed and the agent advances
    ``agent_speed - traffic_speed`` cells per successful move. Each of the
    ``num_patterns`` random traffic layouts is a separate block of states;
    episodes draw their layout and starting lane through the start distribution.
    """

    lanes: int = 5
    length: int = 30
    num_other_cars: int = 12
    num_patterns: int = 4
    agent_speed: int = 2
    traffic_speed: int = 1
    action_success: float = 0.95
    vicinity_range: int = 3
    discount: float = 0.9
    episode_length: int = 30
    style_prob: float = 0.9
    max_states: int = 50_000
    seed: int = 0

    def __post_init__(self):
        if self.lanes < 1 or self.length < 2:
            raise ConfigurationError("need lanes >= 1 and length >= 2")
        if not 0.0 < self.action_success <= 1.0:
            raise ConfigurationError("action_success must lie in (0, 1]")
        if self.agent_speed <= self.traffic_speed:
            raise ConfigurationError("the agent must be faster than traffic")
        if not 0.0 < self.style_prob <= 1.0:
            raise ConfigurationError("style_prob must lie in (0, 1]")
        if self.num_states > self.max_states:
            raise ConfigurationError(f"{self.num_states} states exceed the cap of {self.max_states}")

    @property
    def num_states(self) -> int:
        return self.num_patterns * self.lanes * self.length

    @property
    def advance(self) -> int:
        return self.agent_speed - self.traffic_speed

    @classmethod
    def from_dict(cls, d: dict) -> "DrivingGridSpec":
        return _spec_from_dict(cls, d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class DrivingLayout:
    """Decoded geometry of a driving MDP: state <-> (pattern, lane, x) and car positions."""

    spec: DrivingGridSpec
    cars: np.ndarray  # (num_patterns, num_cars, 2) with (lane, x)
    occupied: np.ndarray = field(repr=False)  # (num_patterns, lanes, length) bool

    def state(self, pattern: int, lane: int, x: int) -> int:
        return (pattern * self.spec.lanes + lane) * self.spec.length + x

    def decode(self, s: int) -> tuple[int, int, int]:
        rest, x = divmod(int(s), self.spec.length)
        pattern, lane = divmod(rest, self.spec.lanes)
        return pattern, lane, x

    def zone(self, s: int) -> int:
        return zone_of(self, *self.decode(s))


def _traffic_patterns(spec: DrivingGridSpec, rng: np.random.Generator) -> np.ndarray:
    lo = spec.vicinity_range + 1
    cells = [(lane, x) for lane in range(spec.lanes) for x in range(lo, spec.length - 1)]
    if spec.num_other_cars > len(cells):
        raise ConfigurationError("too many cars for the road")
    out = np.zeros((spec.num_patterns, spec.num_other_cars, 2), dtype=np.int64)
    for p in range(spec.num_patterns):
        pick = rng.choice(len(cells), size=spec.num_other_cars, replace=False)
        out[p] = np.array([cells[i] for i in sorted(pick)])
    return out


def _nearby_cars(layout: DrivingLayout, pattern: int, lane: int):
    """Cars in the same or an adjacent lane."""
    cars = layout.cars[pattern]
    return cars[np.abs(cars[:, 0] - lane) <= 1]


def zone_of(layout: DrivingLayout, pattern: int, lane: int, x: int) -> int:
    """Overtaking: alongside or one cell ahead of a car in the same or an adjacent lane.
    Vicinity: such a car 1..vicinity_range cells ahead. Far: otherwise."""
    near = _nearby_cars(layout, pattern, lane)
    if len(near) == 0:
        return FAR
    gap = near[:, 1] - x
    if np.any((gap == 0) | (gap == -1)):
        return OVERTAKING
    if np.any((gap >= 1) & (gap <= layout.spec.vicinity_range)):
        return VICINITY
    return FAR


def build_driving_gridworld(spec: DrivingGridSpec) -> tuple[TabularMdp, FeatureMap, DrivingLayout]:
    """Driving MDP with 6 actions and 3 zones x 6 actions + distance-to-goal features."""
    rng = np.random.default_rng(spec.seed)
    cars = _traffic_patterns(spec, rng)
    occupied = np.zeros((spec.num_patterns, spec.lanes, spec.length), dtype=bool)
    for p in range(spec.num_patterns):
        occupied[p, cars[p, :, 0], cars[p, :, 1]] = True
    layout = DrivingLayout(spec, cars, occupied)

    S, A = spec.num_states, len(ACTION_NAMES)
    P = np.zeros((S, A, S))
    k = 3 * A + 1
    phi = np.zeros((S, A, k))
    for s in range(S):
        pattern, lane, x = layout.decode(s)
        for a in range(A):
            nl = int(np.clip(lane + _LANE_SHIFT[a], 0, spec.lanes - 1))
            nx = min(x + _ADVANCE[a] * spec.advance, spec.length - 1)
            P[s, a, layout.state(pattern, nl, nx)] += spec.action_success
            P[s, a, s] += 1.0 - spec.action_success
        z = zone_of(layout, pattern, lane, x)
        phi[s, np.arange(A), z * A + np.arange(A)] = 1.0
        phi[s, :, -1] = (spec.length - 1 - x) / (spec.length - 1)
    rho = np.zeros(S)
    for p in range(spec.num_patterns):
        for lane in range(spec.lanes):
            rho[layout.state(p, lane, 0)] = 1.0
    rho /= rho.sum()
    return TabularMdp(P, spec.discount, rho), FeatureMap(phi), layout


def _toward(lane: int, target: int) -> int:
    return RIGHT if target > lane else LEFT


def _away_move(layout: DrivingLayout, pattern: int, lane: int, x: int) -> int:
    """Lane change that maximises lateral distance to nearby traffic while advancing.

    Two-lane moves win ties. Falls back to forward, then to braking, when
    every lane change runs into a car.
    """
    spec = layout.spec
    cars = layout.cars[pattern]
    window = cars[(cars[:, 1] >= x - 1) & (cars[:, 1] <= x + spec.vicinity_range + 1)]
    nx = min(x + spec.advance, spec.length - 1)
    best, best_score = None, None
    for a in (HARD_LEFT, HARD_RIGHT, LEFT, RIGHT):
        nl = lane + _LANE_SHIFT[a]
        if not 0 <= nl < spec.lanes or layout.occupied[pattern, nl, nx]:
            continue
        score = np.min(np.abs(window[:, 0] - nl)) if len(window) else spec.lanes
        if best_score is None or score > best_score:
            best, best_score = a, score
    if best is not None:
        return best
    return BREAK if layout.occupied[pattern, lane, nx] else FORWARD


def _aggressive_move(layout: DrivingLayout, pattern: int, lane: int, x: int, zone: int) -> int:
    spec = layout.spec
    near = _nearby_cars(layout, pattern, lane)
    if zone == OVERTAKING:
        gap = near[:, 1] - x
        beside = near[((gap == 0) | (gap == -1)) & (near[:, 0] != lane)]
        if len(beside):
            return _toward(lane, int(beside[0, 0]))
        return FORWARD
    if zone == VICINITY:
        gap = near[:, 1] - x
        blocking = near[(near[:, 0] == lane) & (gap >= 1) & (gap <= spec.vicinity_range)]
        if len(blocking):
            # pass on the left when possible
            return LEFT if lane > 0 else RIGHT
        return FORWARD
    # far from traffic: line up behind the closest car ahead
    cars = layout.cars[pattern]
    ahead = cars[cars[:, 1] > x]
    if len(ahead):
        target = ahead[np.argmin(ahead[:, 1] - x + 0.1 * np.abs(ahead[:, 0] - lane))]
        if target[0] != lane:
            return _toward(lane, int(target[0]))
    return FORWARD


def scripted_action_table(style: str, layout: DrivingLayout) -> np.ndarray:
    """Preferred action per state for ``style`` in {'aggressive', 'evasive'}."""
    spec = layout.spec
    best = np.zeros(spec.num_states, dtype=np.int64)
    for s in range(spec.num_states):
        pattern, lane, x = layout.decode(s)
        zone = zone_of(layout, pattern, lane, x)
        if style == "aggressive":
            best[s] = _aggressive_move(layout, pattern, lane, x, zone)
        elif style == "evasive":
            best[s] = FORWARD if zone == FAR else _away_move(layout, pattern, lane, x)
        else:
            raise ConfigurationError(f"unknown driving style {style!r}")
    return best


def scripted_policy(style: str, spec_or_layout, prob: float | None = None) -> SoftPolicy:
    """Stochastic hand-coded driving policy.

    The preferred action gets ``prob`` (default ``spec.style_prob``) and the
    remainder is spread evenly over the other actions.
    """
    layout = spec_or_layout if isinstance(spec_or_layout, DrivingLayout) else build_driving_gridworld(spec_or_layout)[2]
    prob = layout.spec.style_prob if prob is None else prob
    best = scripted_action_table(style, layout)
    A = len(ACTION_NAMES)
    probs = np.full((layout.spec.num_states, A), (1.0 - prob) / (A - 1))
    probs[np.arange(len(best)), best] = prob
    return SoftPolicy(probs)


# --- demonstrations ---------------------------------------------------------


@dataclass
class LabeledDemoSet:
    demos: DemonstrationSet
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (self.demos.n,):
            raise ConfigurationError("one label per demonstration is required")

    @property
    def n(self) -> int:
        return self.demos.n

    @classmethod
    def concat(cls, parts) -> "LabeledDemoSet":
        parts = list(parts)
        trajs = tuple(t for p in parts for t in p.demos)
        return cls(DemonstrationSet(trajs), np.concatenate([p.labels for p in parts]))


def _rollout(mdp: TabularMdp, probs: np.ndarray, max_len: int, rng: np.random.Generator, stop=None):
    s = rng.choice(mdp.num_states, p=mdp.initial_dist)
    steps = []
    for _ in range(max_len):
        a = rng.choice(mdp.num_actions, p=probs[s])
        steps.append((s, a))
        if stop is not None and s in stop:
            break
        s = rng.choice(mdp.num_states, p=mdp.transition[s, a])
    return Trajectory.from_pairs(steps)


def generate_demos(
    mdp: TabularMdp, policy: SoftPolicy, count: int, max_len: int, seed, stop_states=None
) -> DemonstrationSet:
    """Seeded rollouts from the start distribution, cut at ``max_len`` or at a stop state."""
    if count < 1:
        raise ConfigurationError("count must be >= 1")
    rng = np.random.default_rng(seed)
    stop = None if stop_states is None else set(int(s) for s in stop_states)
    return DemonstrationSet(tuple(_rollout(mdp, policy.probs, max_len, rng, stop) for _ in range(count)))


def inject_inconsistent_demos(
    labeled: LabeledDemoSet, mdp: TabularMdp, count: int, noise_level: float, seed,
    max_len: int | None = None, base_policies=(),
) -> LabeledDemoSet:
    """Append ``count`` rollouts that take uniformly random actions with probability ``noise_level``.

    Otherwise they follow one of ``base_policies`` (picked per demo); with no
    base policy the rollouts are pure random walks.
    """
    if not 0.0 < noise_level <= 1.0:
        raise ConfigurationError("noise_level must lie in (0, 1]")
    if count == 0:
        return labeled
    rng = np.random.default_rng(seed)
    max_len = max_len or labeled.demos.max_length
    uniform = np.full(mdp.shape, 1.0 / mdp.num_actions)
    bases = [np.asarray(p.probs) for p in base_policies] or [uniform]
    trajs = []
    for _ in range(count):
        base = bases[rng.integers(len(bases))]
        mixed = noise_level * uniform + (1.0 - noise_level) * base
        trajs.append(_rollout(mdp, mixed, max_len, rng))
    extra = LabeledDemoSet(DemonstrationSet(tuple(trajs)), np.full(count, INCONSISTENT_LABEL))
    return LabeledDemoSet.concat([labeled, extra])


def macro_grid_dataset(spec: MacroGridSpec, seed=None):
    """Gridworld demos: ``demos_per_reward`` rollouts per ground-truth reward.

    Experts follow the soft-optimal policy of ``theta / expert_temperature``,
    so small temperatures give near-optimal demonstrators.
    """
    from .solver import soft_value_iteration

    mdp, features, rewards = build_macro_gridworld(spec)
    seed = spec.seed if seed is None else seed
    ss = np.random.SeedSequence(seed).spawn(len(rewards))
    parts = []
    for label, (theta, child) in enumerate(zip(rewards, ss)):
        pol = soft_value_iteration(mdp, features, theta / spec.expert_temperature, tol=1e-10)
        demos = generate_demos(mdp, pol, spec.demos_per_reward, spec.demo_length, child)
        parts.append(LabeledDemoSet(demos, np.full(demos.n, label)))
    return mdp, features, rewards, LabeledDemoSet.concat(parts)


DRIVING_STYLES = ("aggressive", "evasive")


def driving_dataset(spec: DrivingGridSpec, per_style: int = 25, seed=None, noise_demos: int = 0,
                    noise_level: float = 1.0):
    """Driving demos: ``per_style`` rollouts of each scripted style, optionally plus noise demos."""
    mdp, features, layout = build_driving_gridworld(spec)
    seed = spec.seed if seed is None else seed
    ss = np.random.SeedSequence(seed).spawn(len(DRIVING_STYLES) + 1)
    parts, policies = [], []
    for label, style in enumerate(DRIVING_STYLES):
        pol = scripted_policy(style, layout)
        policies.append(pol)
        demos = generate_demos(mdp, pol, per_style, spec.episode_length, ss[label])
        parts.append(LabeledDemoSet(demos, np.full(per_style, label)))
    labeled = LabeledDemoSet.concat(parts)
    if noise_demos:
        labeled = inject_inconsistent_demos(labeled, mdp, noise_demos, noise_level, ss[-1],
                                            spec.episode_length, policies)
    return mdp, features, layout, policies, labeled
