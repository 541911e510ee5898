import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcirl.em import weighted_irl_gradient
from bcirl.maxent import (
    DivergenceError,
    IrlConfig,
    IrlProblem,
    dataset_log_likelihood,
    maxent_gradient,
    run_maxent_irl,
    weighted_surrogate_objective,
)
from bcirl.mdp import ConfigurationError, DemonstrationSet, FeatureMap, Trajectory
from bcirl.solver import discounted_horizon, soft_value_iteration

from conftest import chain_mdp, random_features, random_mdp, sample_demos


def central_difference(f, theta, h=1e-5):
    g = np.zeros_like(theta)
    for k in range(len(theta)):
        e = np.zeros_like(theta)
        e[k] = h
        g[k] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def gradient_case(seed):
    """Random 5-state instance with demos, per-demo weights and a long visitation horizon."""
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, 5, 3, gamma=float(rng.uniform(0.3, 0.9)))
    phi = random_features(rng, 5, 3, 4)
    demos = sample_demos(mdp, np.full(mdp.shape, 1 / 3), rng, 6, int(rng.integers(2, 8)))
    weights = rng.random(demos.n)
    theta = rng.standard_normal(4)
    return mdp, phi, demos, weights, theta


class TestGradientOracle:
    @pytest.mark.parametrize("seed", range(20))
    def test_matches_finite_differences(self, seed):
        mdp, phi, demos, w, theta = gradient_case(seed)
        horizon = discounted_horizon(mdp.discount, 1e-12)
        policy = soft_value_iteration(mdp, phi, theta, tol=1e-13)
        g = weighted_irl_gradient(mdp, phi, theta, demos, w, horizon=horizon, policy=policy)
        fd = central_difference(lambda t: weighted_surrogate_objective(mdp, phi, t, demos, w, vi_tol=1e-13), theta)
        assert np.linalg.norm(g - fd) <= 1e-3 * max(np.linalg.norm(fd), 1e-8)

    def test_zero_weights_give_zero_gradient(self, rng):
        mdp, phi = random_mdp(rng), random_features(rng)
        demos = sample_demos(mdp, np.full(mdp.shape, 0.5), rng, 3, 4)
        g = weighted_irl_gradient(mdp, phi, np.ones(3), demos, np.zeros(3))
        np.testing.assert_array_equal(g, 0.0)

    def test_weights_validated(self, rng):
        mdp, phi = random_mdp(rng), random_features(rng)
        demos = sample_demos(mdp, np.full(mdp.shape, 0.5), rng, 3, 4)
        with pytest.raises(ConfigurationError):
            weighted_irl_gradient(mdp, phi, np.ones(3), demos, [0.5, 1.5, 0.0])
        with pytest.raises(ConfigurationError):
            weighted_irl_gradient(mdp, phi, np.ones(3), demos, [0.5, 0.5])

    def test_uniform_weights_equal_maxent_gradient(self, rng):
        mdp, phi = random_mdp(rng), random_features(rng)
        demos = sample_demos(mdp, np.full(mdp.shape, 0.5), rng, 4, 5)
        theta = rng.standard_normal(3)
        a = weighted_irl_gradient(mdp, phi, theta, demos, np.full(4, 0.25))
        b = maxent_gradient(mdp, phi, theta, demos)
        np.testing.assert_allclose(a, b, atol=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.1, 5.0))
    def test_linear_in_weights(self, seed, scale):
        rng = np.random.default_rng(seed)
        mdp, phi = random_mdp(rng), random_features(rng)
        demos = sample_demos(mdp, np.full(mdp.shape, 0.5), rng, 3, 3)
        problem = IrlProblem(mdp, phi, demos)
        pol = soft_value_iteration(mdp, phi, rng.standard_normal(3))
        w = rng.random(3) / scale
        # scaling every weight (same start mix) scales the gradient
        np.testing.assert_allclose(problem.gradient(pol, scale * w / 5), scale / 5 * problem.gradient(pol, w), atol=1e-10)


class TestGradientExamples:
    def test_single_state_single_action_is_zero(self):
        from bcirl.mdp import TabularMdp

        mdp = TabularMdp(np.ones((1, 1, 1)), 0.5, np.ones(1))
        phi = FeatureMap(np.array([[[1.0, -2.0]]]))
        demos = DemonstrationSet((Trajectory.from_pairs([(0, 0), (0, 0)]),))
        np.testing.assert_allclose(maxent_gradient(mdp, phi, [0.3, 0.1], demos), 0.0, atol=1e-12)

    def test_sign_points_toward_demonstrated_action(self):
        # one state, two actions; demos always take action 1
        from bcirl.mdp import TabularMdp

        mdp = TabularMdp(np.ones((1, 2, 1)), 0.0, np.ones(1))
        phi = FeatureMap(np.eye(2).reshape(1, 2, 2))
        demos = DemonstrationSet((Trajectory.from_pairs([(0, 1)]),))
        g = maxent_gradient(mdp, phi, np.zeros(2), demos)
        np.testing.assert_allclose(g, [-0.5, 0.5])


    def test_partition_features_leave_no_mass_gap(self, rng):
        # one-hot state features: demo and policy feature expectations must carry the same
        # discounted mass, otherwise the gradient has a floor and grad_tol is unreachable
        mdp = random_mdp(rng, 5, 2, gamma=0.9)
        phi = FeatureMap(np.eye(5)[:, None, :].repeat(2, axis=1))
        demos = sample_demos(mdp, np.full(mdp.shape, 0.5), rng, 4, 6)
        g = maxent_gradient(mdp, phi, rng.standard_normal(5), demos)
        assert abs(g.sum()) < 1e-12


class TestRunMaxent:
    def test_learns_demonstrated_action_on_chain(self):
        mdp = chain_mdp(4)
        phi = FeatureMap(np.eye(2)[None].repeat(4, axis=0))  # action indicator
        demos = DemonstrationSet(tuple(Trajectory.from_pairs([(s, 1) for s in range(3)]) for _ in range(3)))
        theta, policy, trace = run_maxent_irl(mdp, phi, demos, IrlConfig(learning_rate=0.5, max_iters=300))
        assert theta[1] > theta[0]
        assert np.all(policy.probs[:, 1] > 0.5)
        assert trace.log_likelihoods[-1] > trace.log_likelihoods[0]

    def test_deterministic_under_seed(self, rng):
        mdp, phi = random_mdp(rng), random_features(rng)
        demos = sample_demos(mdp, np.full(mdp.shape, 0.5), rng, 4, 5)
        cfg = IrlConfig(max_iters=20, seed=7)
        a = run_maxent_irl(mdp, phi, demos, cfg)
        b = run_maxent_irl(mdp, phi, demos, cfg)
        np.testing.assert_array_equal(a.theta, b.theta)
        assert a.trace.same_path(b.trace)

    def test_seed_changes_initialisation(self, rng):
        mdp, phi = random_mdp(rng), random_features(rng)
        demos = sample_demos(mdp, np.full(mdp.shape, 0.5), rng, 4, 5)
        a = run_maxent_irl(mdp, phi, demos, IrlConfig(max_iters=1, seed=1))
        b = run_maxent_irl(mdp, phi, demos, IrlConfig(max_iters=1, seed=2))
        assert not np.array_equal(a.trace.records[0].theta, b.trace.records[0].theta)

    def test_converges_and_flags_it(self, rng):
        mdp, phi = random_mdp(rng, 3, 2), random_features(rng, 3, 2, 2)
        demos = sample_demos(mdp, np.full(mdp.shape, 0.5), rng, 5, 4)
        res = run_maxent_irl(mdp, phi, demos, IrlConfig(learning_rate=0.5, grad_tol=1e-3, max_iters=5000))
        assert res.trace.converged
        assert res.trace.records[-1].grad_norm < 1e-3

    def test_small_steps_increase_likelihood(self, rng):
        mdp, phi = random_mdp(rng), random_features(rng)
        demos = sample_demos(mdp, np.full(mdp.shape, 0.5), rng, 6, 6)
        ll = run_maxent_irl(mdp, phi, demos, IrlConfig(learning_rate=0.01, max_iters=40)).trace.log_likelihoods
        assert ll[-1] > ll[0]

    def test_monotone_steps_never_lower_likelihood(self, rng):
        mdp, phi = random_mdp(rng, 6, 3), random_features(rng, 6, 3, 3)
        demos = sample_demos(mdp, np.full(mdp.shape, 1 / 3), rng, 8, 6)
        cfg = IrlConfig(learning_rate=0.5, max_iters=60, monotone_steps=True)
        ll = run_maxent_irl(mdp, phi, demos, cfg).trace.log_likelihoods
        assert np.all(np.diff(ll) >= 0)

    def test_divergence_raises(self, rng):
        mdp, phi = random_mdp(rng), random_features(rng)
        demos = sample_demos(mdp, np.full(mdp.shape, 0.5), rng, 3, 4)
        with pytest.raises(DivergenceError):
            run_maxent_irl(mdp, phi, demos, IrlConfig(learning_rate=1e308, max_iters=5))

    def test_trace_csv(self, rng, tmp_path):
        mdp, phi = random_mdp(rng), random_features(rng)
        demos = sample_demos(mdp, np.full(mdp.shape, 0.5), rng, 3, 4)
        res = run_maxent_irl(mdp, phi, demos, IrlConfig(max_iters=3))
        res.trace.to_csv(tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "iter,loglik,grad_inf_norm,wall_ms" and len(lines) == 4

    def test_feature_gap_recorded(self, rng):
        mdp, phi = random_mdp(rng), random_features(rng)
        demos = sample_demos(mdp, np.full(mdp.shape, 0.5), rng, 3, 4)
        rec = run_maxent_irl(mdp, phi, demos, IrlConfig(max_iters=2)).trace.records[0]
        problem = IrlProblem(mdp, phi, demos)
        pol = problem.solve(rec.theta, IrlConfig())
        g = problem.gradient(pol, np.full(3, 1 / 3))
        assert rec.feature_gap == pytest.approx(np.mean(g ** 2))

    def test_config_validation(self):
        for bad in (dict(learning_rate=0), dict(grad_tol=-1), dict(max_iters=0), dict(horizon=0), dict(max_halvings=-1)):
            with pytest.raises(ConfigurationError):
                IrlConfig(**bad)

    def test_dataset_log_likelihood_is_mean(self, rng):
        mdp, phi = random_mdp(rng), random_features(rng)
        demos = sample_demos(mdp, np.full(mdp.shape, 0.5), rng, 3, 4)
        pol = soft_value_iteration(mdp, phi, np.zeros(3))
        problem = IrlProblem(mdp, phi, demos)
        assert dataset_log_likelihood(mdp, pol, demos) == pytest.approx(problem.log_likelihoods(pol).mean())
