import math

import numpy as np
import pytest
from scipy import stats as sps

from betahmm import (
    CountSequence,
    DataError,
    EmConfig,
    HmmParams,
    NumericalError,
    ParameterError,
    em_fit,
    log_likelihood,
    validate_params,
)
from betahmm.em import emission_log_probs, random_init
from betahmm.synth import estimation_error, sample_sequence
from oracles import brute_force_log_likelihood


def _params(pi, T, p):
    return HmmParams(
        initial_dist=np.asarray(pi, dtype=float),
        transition=np.asarray(T, dtype=float),
        meth_probs=np.asarray(p, dtype=float),
    )


def _random_instance(gen, num_states, length, num_cells=1, max_cov=3):
    pi = gen.dirichlet(np.ones(num_states))
    T = np.column_stack([gen.dirichlet(np.ones(num_states)) for _ in range(num_states)])
    p = gen.uniform(0.05, 0.95, size=(num_cells, num_states))
    if num_cells == 1:
        p = p[0]
    params = _params(pi, T, p)
    cov = gen.integers(0, max_cov + 1, size=(length, num_cells))
    meth = (cov * gen.uniform(size=cov.shape)).astype(np.int64)
    return params, CountSequence(cov, meth)


class TestLogLikelihood:
    def test_single_position_closed_form(self):
        params = _params([1.0], [[1.0]], [0.5])
        seq = CountSequence([2], [1])
        assert log_likelihood(params, seq) == pytest.approx(math.log(0.5), abs=1e-12)

    def test_single_state_factorizes(self, rng):
        p = 0.37
        params = _params([1.0], [[1.0]], [p])
        cov = rng.integers(0, 10, size=30)
        meth = (cov * rng.uniform(size=30)).astype(np.int64)
        seq = CountSequence(cov, meth)
        expected = float(sps.binom.logpmf(meth, cov, p).sum())
        assert log_likelihood(params, seq) == pytest.approx(expected, abs=1e-10)

    @pytest.mark.parametrize("num_states,length", [(2, 3), (2, 6), (3, 5)])
    def test_matches_path_enumeration(self, rng, num_states, length):
        params, seq = _random_instance(rng, num_states, length)
        expected = brute_force_log_likelihood(params, seq)
        assert log_likelihood(params, seq) == pytest.approx(expected, abs=1e-8)

    def test_matches_path_enumeration_two_cells(self, rng):
        params, seq = _random_instance(rng, 2, 4, num_cells=2)
        expected = brute_force_log_likelihood(params, seq)
        assert log_likelihood(params, seq) == pytest.approx(expected, abs=1e-8)

    def test_empty_sequence(self):
        params = _params([1.0], [[1.0]], [0.5])
        empty = CountSequence(np.zeros((0, 1), dtype=int), np.zeros((0, 1), dtype=int))
        with pytest.raises(DataError):
            log_likelihood(params, empty)

    def test_impossible_observation(self):
        params = _params([1.0], [[1.0]], [0.0])
        seq = CountSequence([2], [1])
        with pytest.raises(NumericalError, match="zero probability"):
            log_likelihood(params, seq)


class TestEmissionLogProbs:
    def test_shape_and_values(self):
        params = _params([0.5, 0.5], np.eye(2), [0.2, 0.8])
        seq = CountSequence([3, 1], [1, 0])
        out = emission_log_probs(params, seq)
        assert out.shape == (2, 2)
        assert out[0, 0] == pytest.approx(sps.binom.logpmf(1, 3, 0.2), abs=1e-12)
        assert out[1, 1] == pytest.approx(sps.binom.logpmf(0, 1, 0.8), abs=1e-12)

    def test_cells_multiply(self):
        params = _params([0.5, 0.5], np.eye(2), [[0.2, 0.8], [0.4, 0.6]])
        seq = CountSequence([[3, 2]], [[1, 2]])
        out = emission_log_probs(params, seq)
        expected = sps.binom.logpmf(1, 3, 0.2) + sps.binom.logpmf(2, 2, 0.4)
        assert out[0, 0] == pytest.approx(float(expected), abs=1e-12)

    def test_cell_count_mismatch(self):
        params = _params([1.0], [[1.0]], [0.5])
        seq = CountSequence([[2, 2]], [[1, 1]])
        with pytest.raises(ParameterError, match="cell"):
            emission_log_probs(params, seq)


class TestRandomInit:
    def test_distributions_are_normalized(self, rng):
        params = random_init(4, 2, rng)
        assert validate_params(params) is params
        assert params.meth_probs.shape == (2, 4)
        assert params.meth_probs.min() >= 0.05
        assert params.meth_probs.max() <= 0.95

    def test_single_cell_squeezes(self, rng):
        params = random_init(3, 1, rng)
        assert params.meth_probs.shape == (3,)

    def test_seed_determinism(self):
        a = random_init(3, 1, np.random.default_rng(9))
        b = random_init(3, 1, np.random.default_rng(9))
        assert np.array_equal(a.initial_dist, b.initial_dist)
        assert np.array_equal(a.transition, b.transition)
        assert np.array_equal(a.meth_probs, b.meth_probs)


class TestEmFit:
    def test_single_state_single_step_is_pooled_rate(self, rng):
        cov = rng.integers(0, 20, size=50)
        meth = (cov * rng.uniform(size=50)).astype(np.int64)
        seq = CountSequence(cov, meth)
        trace = em_fit(seq, 1, EmConfig(max_iters=1, seed=0))
        pooled = meth.sum() / cov.sum()
        assert trace.params.meth_probs[0] == pytest.approx(pooled, abs=1e-12)
        assert trace.iterations == 1

    def test_trace_is_monotone(self, rng):
        _, seq = _random_instance(rng, 3, 80, max_cov=12)
        trace = em_fit(seq, 3, EmConfig(max_iters=30, rel_ll_tolerance=0.0, seed=1))
        lls = np.array(trace.log_likelihoods)
        assert len(lls) == 30
        assert np.all(np.diff(lls) >= -1e-8)
        assert validate_params(trace.params) is trace.params

    def test_final_params_score_at_least_last_trace_entry(self, rng):
        _, seq = _random_instance(rng, 2, 60, max_cov=10)
        trace = em_fit(seq, 2, EmConfig(max_iters=10, rel_ll_tolerance=0.0, seed=2))
        final_ll = log_likelihood(trace.params, seq)
        assert final_ll >= trace.log_likelihoods[-1] - 1e-8

    def test_warm_start_at_truth_stays_close(self):
        truth = _params(
            [0.5, 0.5], [[0.9, 0.1], [0.1, 0.9]], [0.1, 0.9]
        )
        seq = sample_sequence(truth, length=4000, coverage_mean=20, seed=7)
        cfg = EmConfig(max_iters=5, rel_ll_tolerance=0.0, init=truth)
        trace = em_fit(seq, 2, cfg)
        moved, _ = estimation_error(truth.meth_probs, trace.params.meth_probs)
        assert moved <= 0.1

    def test_early_stopping_with_loose_tolerance(self, rng):
        _, seq = _random_instance(rng, 2, 40, max_cov=8)
        trace = em_fit(seq, 2, EmConfig(max_iters=50, rel_ll_tolerance=0.5, seed=3))
        assert trace.iterations == 2
        assert len(trace.log_likelihoods) == 2

    def test_zero_coverage_state_warns_and_centers(self):
        seq = CountSequence(np.zeros(10, dtype=int), np.zeros(10, dtype=int))
        with pytest.warns(RuntimeWarning, match="zero expected coverage"):
            trace = em_fit(seq, 1, EmConfig(max_iters=1, seed=0))
        assert trace.params.meth_probs[0] == 0.5

    def test_two_cell_fit_matches_enumeration_likelihood(self, rng):
        _, seq = _random_instance(rng, 2, 8, num_cells=2)
        trace = em_fit(seq, 2, EmConfig(max_iters=5, rel_ll_tolerance=0.0, seed=4))
        exact = brute_force_log_likelihood(trace.params, seq)
        assert log_likelihood(trace.params, seq) == pytest.approx(exact, abs=1e-8)

    def test_argument_errors(self, rng):
        _, seq = _random_instance(rng, 2, 10)
        with pytest.raises(ParameterError, match="num_states"):
            em_fit(seq, 0, EmConfig())
        with pytest.raises(DataError, match="at least 2"):
            em_fit(seq[:1], 2, EmConfig())

    def test_warm_start_shape_mismatches(self, rng):
        _, seq = _random_instance(rng, 2, 10)
        three_state = random_init(3, 1, rng)
        with pytest.raises(ParameterError, match="states"):
            em_fit(seq, 2, EmConfig(init=three_state))
        two_cell = random_init(2, 2, rng)
        with pytest.raises(ParameterError, match="cell"):
            em_fit(seq, 2, EmConfig(init=two_cell))

    def test_config_validation(self):
        with pytest.raises(ParameterError, match="max_iters"):
            EmConfig(max_iters=0)
        with pytest.raises(ParameterError, match="rel_ll_tolerance"):
            EmConfig(rel_ll_tolerance=-0.1)
