import numpy as np
import pytest

from betahmm import (
    CountSequence,
    DataError,
    FtdConfig,
    ParameterError,
    SynthConfig,
    ftd_fit,
    ftd_fit_moments,
    ftd_then_em,
    generate_params,
    sample_sequence,
    validate_params,
)
from betahmm.moments import MomentSet
from oracles import exact_feature_map, population_moments


def _exact_two_state():
    pi = np.array([2.0 / 3.0, 1.0 / 3.0])
    T = np.array([[0.8, 0.4], [0.2, 0.6]])
    probs = [0.2, 0.8]
    coverage = 50
    C = exact_feature_map(probs, [(coverage, 1.0)], granularity=32)
    moments = population_moments(pi, T, C)
    weight = 1.0 / (coverage + 2.0)
    return pi, T, np.array(probs), moments, weight


def _benchmark_like_sequence(length, seed=0, num_states=2):
    params = generate_params(SynthConfig(num_states=num_states), seed=seed)
    return params, sample_sequence(params, length, 25.0, seed + 1)


class TestConfigValidation:
    def test_rejects_bad_values(self):
        with pytest.raises(ParameterError):
            FtdConfig(granularity=0)
        with pytest.raises(ParameterError):
            FtdConfig(power_iters=0)
        with pytest.raises(ParameterError):
            FtdConfig(power_restarts=0)
        with pytest.raises(ParameterError):
            FtdConfig(moment_ridge=-1.0)
        with pytest.raises(ParameterError):
            FtdConfig(ridge_scale=-0.5)
        with pytest.raises(ParameterError):
            FtdConfig(rank_floor_scale=-1.0)


class TestExactMoments:
    def test_population_input_recovers_all_parameters(self):
        pi, T, probs, moments, weight = _exact_two_state()
        model = ftd_fit_moments(
            moments, 2, [weight], FtdConfig(moment_ridge=0.0, seed=0)
        )
        est = model.per_cell_probs[0]
        for perm in ([0, 1], [1, 0]):
            if abs(est[perm[0]] - probs[0]) + abs(est[perm[1]] - probs[1]) < 0.1:
                break
        assert abs(est[perm[0]] - probs[0]) <= 0.035
        assert abs(est[perm[1]] - probs[1]) <= 0.035
        inv = np.argsort(perm)
        np.testing.assert_allclose(
            model.params.initial_dist[perm], pi, atol=1e-8
        )
        np.testing.assert_allclose(
            model.params.transition[np.ix_(perm, perm)], T, atol=1e-8
        )
        assert model.diagnostics["effective_rank"] == 2
        assert model.diagnostics["duplicated_components"] == []
        assert model.diagnostics["tensor_asymmetry"] <= 1e-8
        assert model.diagnostics["lsq_converged"]

    def test_adaptive_and_fixed_rank_agree_on_clean_input(self):
        _, _, _, moments, weight = _exact_two_state()
        adaptive = ftd_fit_moments(
            moments, 2, [weight], FtdConfig(moment_ridge=0.0, seed=0)
        )
        fixed = ftd_fit_moments(
            moments, 2, [weight],
            FtdConfig(moment_ridge=0.0, seed=0, adaptive_rank=False),
        )
        np.testing.assert_allclose(
            adaptive.per_cell_probs, fixed.per_cell_probs, atol=1e-12
        )
        assert fixed.diagnostics["effective_rank"] == 2

    def test_noise_diagnostics_reflect_overrides(self):
        _, _, _, moments, weight = _exact_two_state()
        model = ftd_fit_moments(
            moments, 2, [weight],
            FtdConfig(moment_ridge=0.123, ridge_scale=2.0, seed=0),
        )
        assert model.diagnostics["noise_level"] == pytest.approx(0.123)
        assert model.diagnostics["moment_ridge"] == pytest.approx(0.246)

    def test_block_count_must_divide_dimension(self):
        _, _, _, moments, weight = _exact_two_state()
        bad = MomentSet(
            p12=moments.p12, p21=moments.p21, p13=moments.p13, p31=moments.p31,
            p23=moments.p23, p32=moments.p32, t123=moments.t123,
            count=moments.count, num_blocks=3,
        )
        with pytest.raises(ParameterError, match="divisible"):
            ftd_fit_moments(bad, 2, [0.1, 0.1, 0.1], FtdConfig(seed=0))

    def test_prior_weight_count_is_checked(self):
        _, _, _, moments, weight = _exact_two_state()
        with pytest.raises(ParameterError, match="prior weights"):
            ftd_fit_moments(moments, 2, [weight, weight], FtdConfig(seed=0))


class TestFtdFit:
    def test_too_short(self):
        seq = CountSequence([3, 2], [1, 0])
        with pytest.raises(DataError, match="insufficient length"):
            ftd_fit(seq, 2, FtdConfig(granularity=4))

    def test_triple_count_diagnostic(self):
        _, seq = _benchmark_like_sequence(64)
        model = ftd_fit(seq, 2, FtdConfig(granularity=6, seed=0))
        assert model.diagnostics["triples"] == 62

    def test_deterministic(self):
        _, seq = _benchmark_like_sequence(300)
        cfg = FtdConfig(granularity=8, seed=0)
        a = ftd_fit(seq, 2, cfg)
        b = ftd_fit(seq, 2, cfg)
        assert np.array_equal(a.per_cell_probs, b.per_cell_probs)
        assert np.array_equal(a.params.initial_dist, b.params.initial_dist)
        assert np.array_equal(a.params.transition, b.params.transition)
        assert a.diagnostics["effective_rank"] == b.diagnostics["effective_rank"]

    def test_split_half_noise_feeds_shrinkage(self):
        _, seq = _benchmark_like_sequence(256)
        model = ftd_fit(seq, 2, FtdConfig(granularity=8, seed=0, ridge_scale=1.5))
        noise = model.diagnostics["noise_level"]
        assert noise > 0.0
        assert model.diagnostics["moment_ridge"] == pytest.approx(1.5 * noise)

    def test_two_cell_shapes(self):
        cfg = SynthConfig(num_states=2, num_cells=2)
        params = generate_params(cfg, seed=8)
        seq = sample_sequence(params, 600, 20.0, seed=9)
        model = ftd_fit(seq, 2, FtdConfig(granularity=6, seed=0))
        assert model.per_cell_probs.shape == (2, 2)
        assert model.params.meth_probs.shape == (2, 2)
        assert model.prior_weights.shape == (2,)
        assert model.feature_means.shape == (12, 2)

    def test_degraded_rank_pads_with_duplicates(self):
        # a nearly uncorrelated chain leaves most pair directions below the
        # sampling noise, so the fit must fall back to fewer components
        seeds = np.random.SeedSequence((55, 1)).generate_state(3)
        cfg = SynthConfig(num_states=4, diag_weight=0.05)
        params = generate_params(cfg, int(seeds[0]))
        seq = sample_sequence(params, 1024, 25.0, int(seeds[1]))
        model = ftd_fit(seq, 4, FtdConfig(seed=int(seeds[2])))
        rank = model.diagnostics["effective_rank"]
        extras = model.diagnostics["duplicated_components"]
        assert rank == 2
        assert extras == [1, 0]
        assert validate_params(model.params) is model.params
        # padded states are exact copies of the components they duplicate
        probs = model.per_cell_probs[0]
        assert probs[2] == probs[extras[0]]
        assert probs[3] == probs[extras[1]]
        np.testing.assert_array_equal(
            model.feature_means[:, 2], model.feature_means[:, extras[0]]
        )


class TestFtdThenEm:
    def test_zero_rounds_wraps_spectral_params(self):
        _, seq = _benchmark_like_sequence(300)
        cfg = FtdConfig(granularity=8, seed=0)
        base = ftd_fit(seq, 2, cfg)
        trace = ftd_then_em(seq, 2, cfg, rounds=0)
        assert trace.iterations == 0
        assert trace.log_likelihoods == []
        assert np.array_equal(trace.params.meth_probs, base.params.meth_probs)
        assert np.array_equal(trace.params.transition, base.params.transition)

    def test_refinement_rounds_are_monotone(self):
        _, seq = _benchmark_like_sequence(300)
        trace = ftd_then_em(seq, 2, FtdConfig(granularity=8, seed=0), rounds=3)
        assert trace.iterations == 3
        lls = trace.log_likelihoods
        assert len(lls) == 3
        assert all(b >= a - 1e-8 for a, b in zip(lls, lls[1:]))
        assert validate_params(trace.params) is trace.params

    def test_negative_rounds(self):
        _, seq = _benchmark_like_sequence(64)
        with pytest.raises(ParameterError, match="rounds"):
            ftd_then_em(seq, 2, FtdConfig(granularity=6), rounds=-1)
