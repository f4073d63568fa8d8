import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from betahmm import NumericalError, ParameterError
from betahmm.recovery import (
    StateJoint,
    chain_from_joint,
    chain_via_pinv,
    differential_states,
    estimate_joint_lsq,
    project_to_simplex,
    recover_meth_probs,
)
from oracles import exact_feature_map


class TestRecoverMethProbs:
    def test_point_mass_on_top_bin_maps_past_one(self):
        means = np.array([[0.0], [1.0]])
        probs, raw = recover_meth_probs(means, [0.25], granularity=2)
        assert raw[0, 0] == pytest.approx(1.5)
        assert probs[0, 0] == 1.0

    def test_uniform_column_with_quarter_weight(self):
        means = np.array([[0.5], [0.5]])
        probs, raw = recover_meth_probs(means, [0.25], granularity=2)
        assert raw[0, 0] == pytest.approx(1.0)
        assert probs[0, 0] == pytest.approx(1.0)

    def test_symmetric_column_lands_near_half(self):
        granularity = 16
        col = np.zeros(granularity)
        col[7] = 0.5
        col[8] = 0.5
        probs, _ = recover_meth_probs(col[:, None], [0.1], granularity=granularity)
        assert abs(probs[0, 0] - 0.5) <= 1.0 / granularity

    def test_exact_map_recovers_planted_probs(self):
        granularity = 64
        coverage = 50
        C = exact_feature_map([0.2, 0.8], [(coverage, 1.0)], granularity)
        weight = 1.0 / (coverage + 2.0)
        probs, _ = recover_meth_probs(C, [weight], granularity=granularity)
        np.testing.assert_allclose(
            probs[0], [0.2, 0.8], atol=1.0 / granularity + 1e-6
        )

    @pytest.mark.parametrize("granularity,eps", [(160, 0.1), (320, 0.05)])
    def test_bias_shrinks_with_granularity(self, granularity, eps):
        coverage = 800
        truth = [0.1, 0.9]
        C = exact_feature_map(truth, [(coverage, 1.0)], granularity)
        weight = 1.0 / (coverage + 2.0)
        probs, _ = recover_meth_probs(C, [weight], granularity=granularity)
        assert np.abs(probs[0] - truth).max() <= eps

    def test_two_cells(self):
        top = np.array([0.0, 1.0])
        means = np.concatenate([top, top])[:, None]
        probs, raw = recover_meth_probs(means, [0.25, 0.1], granularity=2)
        assert probs.shape == (2, 1)
        assert raw[0, 0] == pytest.approx(1.5)
        assert raw[1, 0] == pytest.approx(0.9 / 0.8)

    def test_weight_out_of_range(self):
        means = np.array([[0.5], [0.5]])
        for bad in (0.0, 0.5, 0.7, -0.1):
            with pytest.raises(ParameterError, match="prior weight"):
                recover_meth_probs(means, [bad], granularity=2)

    def test_weight_count_mismatch(self):
        means = np.full((4, 1), 0.25)
        with pytest.raises(ParameterError, match="prior weights"):
            recover_meth_probs(means, [0.25], granularity=2)

    def test_block_sum_violation(self):
        means = np.array([[0.5], [0.6]])
        with pytest.raises(ParameterError, match="sums to"):
            recover_meth_probs(means, [0.25], granularity=2)

    def test_granularity_must_divide(self):
        means = np.full((6, 1), 1.0 / 6.0) * 6 / 6
        with pytest.raises(ParameterError, match="divide"):
            recover_meth_probs(np.full((6, 1), 0.25), [0.25], granularity=4)


class TestProjectToSimplex:
    def test_fixed_points(self):
        np.testing.assert_allclose(project_to_simplex(np.array([0.3, 0.7])), [0.3, 0.7])
        np.testing.assert_allclose(project_to_simplex(np.array([1.0])), [1.0])

    def test_known_projections(self):
        np.testing.assert_allclose(project_to_simplex(np.array([2.0, 0.0])), [1.0, 0.0])
        np.testing.assert_allclose(
            project_to_simplex(np.array([0.5, 0.5, 0.5])), np.full(3, 1 / 3)
        )
        np.testing.assert_allclose(project_to_simplex(np.array([1.0, -1.0])), [1.0, 0.0])

    @given(
        st.lists(st.floats(-10, 10), min_size=1, max_size=8),
        st.integers(0, 2**32 - 1),
    )
    @settings(max_examples=100, deadline=None)
    def test_projection_properties(self, values, seed):
        v = np.array(values)
        out = project_to_simplex(v)
        assert out.min() >= 0.0
        assert out.sum() == pytest.approx(1.0, abs=1e-9)
        # no other simplex point is closer to v
        gen = np.random.default_rng(seed)
        other = gen.dirichlet(np.ones(v.size))
        assert np.linalg.norm(v - out) <= np.linalg.norm(v - other) + 1e-9


class TestEstimateJointLsq:
    def test_orthonormal_features_recover_planted_joint(self, rng):
        m = 3
        q, _ = np.linalg.qr(rng.standard_normal((7, m)))
        truth = rng.dirichlet(np.ones(m * m)).reshape(m, m)
        p21 = q @ truth @ q.T
        joint = estimate_joint_lsq(p21, q)
        np.testing.assert_allclose(joint.matrix, truth, atol=1e-6)
        assert joint.objective <= 1e-10
        assert joint.converged

    def test_single_state(self):
        c = np.array([[0.3], [0.7]])
        joint = estimate_joint_lsq(c @ c.T, c)
        np.testing.assert_allclose(joint.matrix, [[1.0]], atol=1e-9)

    def test_result_is_always_a_distribution(self, rng):
        c = rng.uniform(size=(6, 2))
        c /= c.sum(axis=0)
        noisy = rng.standard_normal((6, 6)) * 0.05 + 0.1
        joint = estimate_joint_lsq(noisy, c)
        assert joint.matrix.min() >= 0.0
        assert joint.matrix.sum() == pytest.approx(1.0, abs=1e-9)

    def test_never_worse_than_uniform_start(self, rng):
        m = 2
        c = rng.uniform(size=(5, m))
        p21 = rng.uniform(size=(5, 5)) * 0.04
        joint = estimate_joint_lsq(p21, c)
        uniform = np.full((m, m), 1.0 / (m * m))
        baseline = float(np.linalg.norm(p21 - c @ uniform @ c.T) ** 2)
        assert joint.objective <= baseline + 1e-12

    def test_duplicate_columns_are_rejected(self):
        c = np.column_stack([np.full(4, 0.25), np.full(4, 0.25)])
        with pytest.raises(NumericalError, match="rank deficient"):
            estimate_joint_lsq(np.eye(4) / 4.0, c)

    def test_shape_mismatch(self):
        c = np.full((4, 2), 0.25)
        with pytest.raises(ParameterError, match="shape"):
            estimate_joint_lsq(np.eye(3), c)


class TestChainFromJoint:
    def test_uniform_joint(self):
        pi, T = chain_from_joint(np.full((2, 2), 0.25))
        np.testing.assert_allclose(pi, [0.5, 0.5], atol=1e-12)
        np.testing.assert_allclose(T, np.full((2, 2), 0.5), atol=1e-12)

    def test_diagonal_joint_gives_identity_transition(self):
        pi, T = chain_from_joint(np.diag([0.5, 0.5]))
        np.testing.assert_allclose(pi, [0.5, 0.5], atol=1e-12)
        np.testing.assert_allclose(T, np.eye(2), atol=1e-12)

    def test_factored_joint_roundtrip(self):
        pi_true = np.array([0.3, 0.7])
        T_true = np.array([[0.9, 0.2], [0.1, 0.8]])
        joint = T_true * pi_true[None, :]
        pi, T = chain_from_joint(joint)
        np.testing.assert_allclose(pi, pi_true, atol=1e-10)
        np.testing.assert_allclose(T, T_true, atol=1e-10)

    def test_accepts_state_joint_wrapper(self):
        wrapped = StateJoint(
            matrix=np.full((2, 2), 0.25), objective=0.0, iterations=1, converged=True
        )
        pi, _ = chain_from_joint(wrapped)
        np.testing.assert_allclose(pi, [0.5, 0.5])

    def test_empty_column_gets_floored_and_uniform(self):
        joint = np.array([[0.5, 0.0], [0.5, 0.0]])
        pi, T = chain_from_joint(joint)
        assert pi[1] == pytest.approx(1e-8, rel=1e-3)
        np.testing.assert_allclose(T[:, 1], [0.5, 0.5], atol=1e-12)
        np.testing.assert_allclose(T[:, 0], [0.5, 0.5], atol=1e-12)

    def test_invalid_joints(self):
        with pytest.raises(ParameterError, match="square"):
            chain_from_joint(np.full((2, 3), 1.0 / 6.0))
        with pytest.raises(ParameterError, match="negative"):
            chain_from_joint(np.array([[1.2, 0.0], [0.0, -0.2]]))
        with pytest.raises(ParameterError, match="sum"):
            chain_from_joint(np.full((2, 2), 0.5))


class TestChainViaPinv:
    def test_one_hot_features_are_exact(self):
        pi_true = np.array([0.3, 0.7])
        T_true = np.array([[0.9, 0.2], [0.1, 0.8]])
        joint = T_true * pi_true[None, :]
        pi, T, clamp = chain_via_pinv(joint, np.eye(2))
        np.testing.assert_allclose(pi, pi_true, atol=1e-10)
        np.testing.assert_allclose(T, T_true, atol=1e-10)
        assert clamp == 0.0

    def test_agreement_with_lsq_on_exact_inputs(self, rng):
        m = 2
        C = exact_feature_map([0.2, 0.8], [(8, 1.0)], granularity=8)
        truth = rng.dirichlet(np.ones(m * m)).reshape(m, m)
        p21 = C @ truth @ C.T
        pi_a, T_a, clamp = chain_via_pinv(p21, C)
        joint = estimate_joint_lsq(p21, C)
        pi_b, T_b = chain_from_joint(joint)
        assert clamp <= 1e-8
        np.testing.assert_allclose(pi_a, pi_b, atol=1e-5)
        np.testing.assert_allclose(T_a, T_b, atol=1e-5)

    def test_rank_deficiency(self):
        c = np.column_stack([np.full(4, 0.25), np.full(4, 0.25)])
        with pytest.raises(NumericalError, match="rank deficient"):
            chain_via_pinv(np.eye(4) / 4.0, c)


class TestDifferentialStates:
    def test_identical_cells_flag_nothing(self):
        probs = np.array([[0.2, 0.8], [0.2, 0.8]])
        assert differential_states(probs, 0.3) == []

    def test_single_flagged_state(self):
        probs = np.array([[0.132, 0.95], [0.752, 0.913]])
        assert differential_states(probs, 0.3) == [0]

    def test_zero_threshold_sorts_by_gap(self):
        probs = np.array([[0.1, 0.5, 0.3], [0.2, 0.1, 0.3]])
        assert differential_states(probs, 0.0) == [1, 0, 2]

    def test_boundary_gap_is_included(self):
        probs = np.array([[0.2, 0.0], [0.5, 0.0]])
        assert differential_states(probs, 0.3) == [0]

    def test_requires_two_cells(self):
        with pytest.raises(ParameterError, match="two cell types"):
            differential_states(np.zeros((3, 4)), 0.3)
        with pytest.raises(ParameterError, match="two cell types"):
            differential_states(np.zeros(4), 0.3)

    def test_threshold_range(self):
        probs = np.zeros((2, 3))
        with pytest.raises(ParameterError, match="threshold"):
            differential_states(probs, 1.5)
        with pytest.raises(ParameterError, match="threshold"):
            differential_states(probs, -0.1)
