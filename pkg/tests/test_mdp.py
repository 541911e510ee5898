import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcirl.mdp import (
    ConfigurationError,
    DemonstrationSet,
    FeatureMap,
    SchemaError,
    TabularMdp,
    Trajectory,
    demos_from_dict,
    demos_to_dict,
    feature_expectation,
    features_from_dict,
    features_to_dict,
    labels_from_dict,
    load_demos,
    load_mdp,
    mdp_from_dict,
    mdp_to_dict,
    reward_of,
    save_demos,
    save_mdp,
    trajectory_return,
    validate_trajectory,
)

from conftest import chain_mdp, mdp_instances, random_features, random_mdp, rollout


def scalar_features(values):
    """One state per value, one action, one feature."""
    return FeatureMap(np.asarray(values, dtype=float).reshape(-1, 1, 1))


class TestTabularMdp:
    def test_valid_construction(self, rng):
        mdp = random_mdp(rng, 4, 3)
        assert mdp.shape == (4, 3)
        assert mdp.num_states == 4 and mdp.num_actions == 3

    def test_arrays_are_read_only(self, rng):
        mdp = random_mdp(rng)
        with pytest.raises(ValueError):
            mdp.transition[0, 0, 0] = 1.0

    def test_rows_must_sum_to_one(self):
        P = np.full((2, 1, 2), 0.5)
        P[0, 0] = (0.5, 0.6)
        with pytest.raises(ConfigurationError):
            TabularMdp(P, 0.9, np.array([0.5, 0.5]))

    def test_row_tolerance(self):
        P = np.full((2, 1, 2), 0.5)
        P[0, 0, 0] += 5e-10
        TabularMdp(P, 0.9, np.array([0.5, 0.5]))

    def test_negative_entries_rejected(self):
        P = np.zeros((2, 1, 2))
        P[:, 0] = (1.5, -0.5)
        with pytest.raises(ConfigurationError):
            TabularMdp(P, 0.9, np.array([0.5, 0.5]))

    @pytest.mark.parametrize("gamma", [-0.1, 1.0, 1.5])
    def test_discount_range(self, gamma):
        with pytest.raises(ConfigurationError):
            TabularMdp(np.ones((1, 1, 1)), gamma, np.ones(1))

    def test_initial_dist_checked(self):
        with pytest.raises(ConfigurationError):
            TabularMdp(np.ones((1, 1, 1)), 0.5, np.array([0.5]))
        with pytest.raises(ConfigurationError):
            TabularMdp(np.ones((2, 1, 2)) / 2, 0.5, np.ones(3) / 3)

    def test_shape_checked(self):
        with pytest.raises(ConfigurationError):
            TabularMdp(np.ones((2, 2)), 0.5, np.ones(2) / 2)


class TestTrajectory:
    def test_from_pairs(self):
        tau = Trajectory.from_pairs([(0, 1), (2, 0)])
        assert tau.states.tolist() == [0, 2]
        assert tau.actions.tolist() == [1, 0]
        assert len(tau) == 2

    def test_empty_rejected(self):
        with pytest.raises(ConfigurationError):
            Trajectory.from_pairs([])

    def test_equality_and_hash(self):
        a = Trajectory.from_pairs([(0, 1), (1, 1)])
        b = Trajectory.from_pairs([[0, 1], [1, 1]])
        assert a == b and hash(a) == hash(b)
        assert a != Trajectory.from_pairs([(0, 1)])

    def test_demonstration_set(self):
        demos = DemonstrationSet((Trajectory.from_pairs([(2, 0)]), Trajectory.from_pairs([(0, 0), (1, 0)])))
        assert demos.n == 2 and demos.max_length == 2
        assert demos.start_states().tolist() == [2, 0]
        np.testing.assert_allclose(demos.start_distribution(3), [0.5, 0.0, 0.5])
        np.testing.assert_allclose(demos.start_distribution(3, [0.25, 0.75]), [0.75, 0.0, 0.25])
        with pytest.raises(ConfigurationError):
            DemonstrationSet(())


class TestRewardOf:
    def test_zero_theta(self, rng):
        phi = random_features(rng)
        assert reward_of(np.zeros(3), phi, 1, 1) == 0.0

    def test_one_hot_selects_feature(self, rng):
        phi = random_features(rng)
        for i in range(3):
            assert reward_of(np.eye(3)[i], phi, 2, 0) == phi.values[2, 0, i]

    def test_hand_arithmetic(self):
        phi = FeatureMap(np.array([[[2.0, 3.0]]]))
        assert reward_of([0.5, -1.0], phi, 0, 0) == pytest.approx(-2.0)

    def test_dimension_mismatch(self, rng):
        phi = random_features(rng)
        with pytest.raises(ConfigurationError):
            reward_of(np.zeros(4), phi, 0, 0)

    def test_nonfinite_theta(self, rng):
        with pytest.raises(ConfigurationError):
            reward_of([np.nan, 0, 0], random_features(rng), 0, 0)


class TestReturnsAndFeatureExpectations:
    def test_gamma_zero_keeps_first_step(self, rng):
        phi = random_features(rng)
        tau = Trajectory.from_pairs([(1, 0), (3, 1), (4, 1)])
        theta = rng.standard_normal(3)
        assert trajectory_return(theta, phi, tau, 0.0) == pytest.approx(phi.values[1, 0] @ theta)

    def test_zero_theta_zero_return(self, rng):
        tau = Trajectory.from_pairs([(1, 0), (3, 1)])
        assert trajectory_return(np.zeros(3), random_features(rng), tau, 0.9) == 0.0

    def test_three_step_hand_sum(self):
        phi = scalar_features([1.0, 2.0, 4.0])
        tau = Trajectory.from_pairs([(0, 0), (1, 0), (2, 0)])
        assert trajectory_return([1.0], phi, tau, 0.5) == pytest.approx(3.0)

    def test_undiscounted_indicator_counts(self):
        phi = FeatureMap(np.eye(3).reshape(3, 1, 3))
        tau = Trajectory.from_pairs([(0, 0), (2, 0), (0, 0), (0, 0)])
        np.testing.assert_array_equal(feature_expectation(phi, tau, 1.0), [3, 0, 1])

    def test_single_step(self, rng):
        phi = random_features(rng)
        tau = Trajectory.from_pairs([(2, 1)])
        np.testing.assert_array_equal(feature_expectation(phi, tau, 0.7), phi.values[2, 1])

    def test_two_step_hand_value(self):
        phi = FeatureMap(np.eye(2).reshape(2, 1, 2))
        tau = Trajectory.from_pairs([(0, 0), (1, 0)])
        np.testing.assert_allclose(feature_expectation(phi, tau, 0.9), [1.0, 0.9])

    @settings(max_examples=60, deadline=None)
    @given(mdp_instances(), st.integers(1, 12))
    def test_return_is_linear_in_feature_expectation(self, inst, T):
        mdp, phi, rng = inst
        tau = rollout(mdp, np.full(mdp.shape, 1.0 / mdp.num_actions), rng, T)
        theta = rng.standard_normal(phi.dim)
        fe = feature_expectation(phi, tau, mdp.discount)
        assert abs(trajectory_return(theta, phi, tau, mdp.discount) - theta @ fe) <= 1e-12 * max(1.0, np.abs(fe).sum() * np.abs(theta).max())

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    def test_monotone_in_gamma_for_nonnegative_features(self, seed, g1, g2):
        rng = np.random.default_rng(seed)
        lo, hi = sorted((g1, g2))
        phi = FeatureMap(rng.random((4, 2, 3)))
        tau = Trajectory.from_pairs(zip(rng.integers(0, 4, 8), rng.integers(0, 2, 8)))
        assert np.all(feature_expectation(phi, tau, lo) <= feature_expectation(phi, tau, hi) + 1e-15)


class TestValidateTrajectory:
    def test_consistent_with_chain(self):
        tau = Trajectory.from_pairs([(0, 1), (1, 0), (1, 1), (2, 1)])
        assert validate_trajectory(chain_mdp(), tau)

    def test_zero_probability_transition(self):
        tau = Trajectory.from_pairs([(0, 0), (1, 0)])
        assert not validate_trajectory(chain_mdp(), tau)

    def test_out_of_range_state(self):
        assert not validate_trajectory(chain_mdp(), Trajectory.from_pairs([(7, 0)]))

    def test_out_of_range_action(self):
        assert not validate_trajectory(chain_mdp(), Trajectory.from_pairs([(0, 2)]))


class TestJsonFormats:
    def test_mdp_round_trip_is_exact(self, rng, tmp_path):
        mdp = random_mdp(rng, 4, 3, gamma=0.37)
        save_mdp(tmp_path / "mdp.json", mdp)
        back = load_mdp(tmp_path / "mdp.json")
        np.testing.assert_array_equal(back.transition, mdp.transition)
        np.testing.assert_array_equal(back.initial_dist, mdp.initial_dist)
        assert back.discount == mdp.discount
        assert json.dumps(mdp_to_dict(back)) == json.dumps(mdp_to_dict(mdp))

    def test_demos_round_trip_is_exact(self, tmp_path):
        demos = DemonstrationSet((Trajectory.from_pairs([(0, 1), (2, 0)]), Trajectory.from_pairs([(3, 3)])))
        save_demos(tmp_path / "d.json", demos, labels=[1, 0])
        back = load_demos(tmp_path / "d.json")
        assert back == demos
        raw = json.loads((tmp_path / "d.json").read_text())
        assert raw["trajectories"] == [[[0, 1], [2, 0]], [[3, 3]]]
        assert labels_from_dict(raw).tolist() == [1, 0]

    def test_features_round_trip(self, rng):
        phi = random_features(rng)
        np.testing.assert_array_equal(features_from_dict(features_to_dict(phi)).values, phi.values)

    @pytest.mark.parametrize("field", ["num_states", "num_actions", "transition", "initial_dist", "discount"])
    def test_missing_field_named(self, rng, field):
        d = mdp_to_dict(random_mdp(rng, 2, 2))
        del d[field]
        with pytest.raises(SchemaError) as err:
            mdp_from_dict(d)
        assert err.value.field == field

    def test_wrong_transition_shape_named(self, rng):
        d = mdp_to_dict(random_mdp(rng, 2, 2))
        d["num_states"] = 3
        with pytest.raises(SchemaError, match="transition"):
            mdp_from_dict(d)

    def test_bad_trajectory_named(self):
        with pytest.raises(SchemaError, match=r"trajectories\[1\]"):
            demos_from_dict({"trajectories": [[[0, 0]], [[0.5, 1]]]})
        with pytest.raises(SchemaError, match="trajectories"):
            demos_from_dict({"trajectories": []})

    def test_labels_must_be_parallel(self):
        with pytest.raises(SchemaError, match="labels"):
            labels_from_dict({"trajectories": [[[0, 0]]], "labels": [0, 1]})

    def test_invalid_json_reported(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(SchemaError):
            load_mdp(path)

    def test_serialized_demos_dict(self):
        demos = DemonstrationSet((Trajectory.from_pairs([(1, 0)]),))
        assert demos_to_dict(demos) == {"trajectories": [[[1, 0]]]}
