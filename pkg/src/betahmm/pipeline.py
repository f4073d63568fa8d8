"""End-to-end feature tensor decomposition (FTD) fits.

One call maps a count sequence through histogram features, accumulates
consecutive-triple moments, decomposes them spectrally, and converts the
per-state feature means into binomial HMM parameters. A warm-start variant
hands the result to a few EM refinement rounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .em import EmConfig, EmTrace, em_fit
from .errors import DataError, ParameterError
from .features import BetaMapConfig, prior_weights
from .model import CountSequence, HmmParams, validate_params
from .moments import MomentAccumulator, MomentSet
from .recovery import chain_from_joint, estimate_joint_lsq, recover_meth_probs
from .spectral import (
    RANK_RTOL,
    _pinv,
    recover_feature_means,
    symmetrize_moments,
    tensor_power_method,
    whiten,
)

__all__ = ["FtdConfig", "RecoveredModel", "ftd_fit", "ftd_fit_moments", "ftd_then_em"]


@dataclass(frozen=True)
class FtdConfig:
    """Controls for the spectral fit.

    Defaults favor robustness (10 restarts of 30 power iterations per
    component); setting ``power_iters=2, power_restarts=1`` reproduces the
    minimal setting that already works on long sequences.

    ``adaptive_rank`` keeps the decomposition honest on finite samples: pair
    directions whose curvature falls below the estimated sampling noise are
    not inverted. When fewer than ``num_states`` directions survive, the
    decomposition runs at the reduced rank and the missing states are filled
    with copies of the heaviest recovered components (a merged-state
    estimate). ``adaptive_rank=False`` always decomposes at full rank, which
    reproduces the textbook pipeline but lets noise dominate weak directions.
    ``moment_ridge`` overrides the split-half noise estimate with an absolute
    operator-norm level; ``ridge_scale`` and ``rank_floor_scale`` multiply
    that level for pseudoinverse shrinkage and rank selection respectively.
    """

    granularity: int = 30
    power_iters: int = 30
    power_restarts: int = 10
    seed: int = 0
    chunk_size: int | None = None
    lsq_max_iters: int = 5000
    lsq_rel_tol: float = 1e-9
    adaptive_rank: bool = True
    moment_ridge: float | None = None
    ridge_scale: float = 0.0
    rank_floor_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.granularity < 1:
            raise ParameterError(f"granularity must be >= 1, got {self.granularity}")
        if self.power_iters < 1 or self.power_restarts < 1:
            raise ParameterError("power_iters and power_restarts must be >= 1")
        if self.moment_ridge is not None and self.moment_ridge < 0.0:
            raise ParameterError(f"moment_ridge must be >= 0, got {self.moment_ridge}")
        if self.ridge_scale < 0.0:
            raise ParameterError(f"ridge_scale must be >= 0, got {self.ridge_scale}")
        if self.rank_floor_scale < 0.0:
            raise ParameterError(
                f"rank_floor_scale must be >= 0, got {self.rank_floor_scale}"
            )


@dataclass(eq=False)
class RecoveredModel:
    """FTD output: HMM parameters plus recovery diagnostics.

    ``per_cell_probs`` always has shape (num_cells, num_states);
    ``params.meth_probs`` is its single row for single-cell data.
    ``diagnostics`` records clamping masses, the least-squares fit trace,
    whitening spectrum, tensor residuals and pre-clamp probabilities.
    """

    params: HmmParams
    per_cell_probs: np.ndarray
    prior_weights: np.ndarray
    feature_means: np.ndarray
    diagnostics: dict


# fallback constant for the operator-norm sampling noise of a pair moment
# estimated from N triples: roughly const * ||P||_F / sqrt(dim * N); measured
# on benchmark-style chains the constant sits between 12 and 21, so this is
# only a coarse stand-in for the split-half estimate
_PAIR_NOISE_CONST = 16.0


def _pair_noise_level(moments: MomentSet, split_halves) -> float:
    """Operator-norm sampling noise of the pair moments.

    With split halves available this is half the operator norm of the halves'
    lag-2 moment difference, which inherits every correlation quirk of the
    actual stream; otherwise a coarse closed-form stand-in.
    """
    if split_halves is not None:
        a, b = split_halves
        return 0.5 * float(np.linalg.norm(a.p13 - b.p13, ord=2))
    return (
        _PAIR_NOISE_CONST
        * float(np.linalg.norm(moments.p13))
        / float(np.sqrt(moments.dim * float(moments.count)))
    )


def ftd_fit_moments(
    moments: MomentSet,
    num_states: int,
    prior_weights_per_cell,
    config: FtdConfig = FtdConfig(),
    split_halves: tuple[MomentSet, MomentSet] | None = None,
) -> RecoveredModel:
    """Spectral fit from already-finalized moments.

    ``prior_weights_per_cell`` must carry one mean of 1 / (coverage + 2) per
    cell block of the moment set. The moment granularity is inferred from the
    feature dimension and block count. ``split_halves`` optionally carries the
    same moments accumulated over two disjoint halves of the stream; their
    disagreement calibrates the sampling-noise level used for pseudoinverse
    shrinkage and rank selection.
    """
    dim = moments.dim
    if dim % moments.num_blocks != 0:
        raise ParameterError("moment dimension is not divisible by its block count")
    granularity = dim // moments.num_blocks
    if config.moment_ridge is not None:
        noise = config.moment_ridge
    else:
        noise = _pair_noise_level(moments, split_halves)
    ridge = config.ridge_scale * noise
    s1, s3, g, asymmetry = symmetrize_moments(moments, num_states, ridge=ridge)
    pair = s3 @ moments.p32
    pair_sym = 0.5 * (pair + pair.T)
    vals_all, vecs_all = np.linalg.eigh(pair_sym)
    order = np.argsort(-vals_all, kind="stable")[:num_states]
    top_vals = vals_all[order]
    top_vecs = vecs_all[:, order]
    if config.adaptive_rank:
        if split_halves is not None:
            half_pairs = []
            for half in split_halves:
                s3h = half.p21 @ _pinv(
                    half.p31, RANK_RTOL, rank=num_states, ridge=np.sqrt(2.0) * ridge
                )
                half_pairs.append(s3h @ half.p32)
            delta = 0.5 * (half_pairs[0] - half_pairs[1])
            delta = 0.5 * (delta + delta.T)
            # per-direction noise: the split-half disagreement of each
            # curvature, so strong directions are not masked by noise that
            # lives elsewhere in the spectrum
            dir_noise = np.abs(np.einsum("ij,jk,ki->i", top_vecs.T, delta, top_vecs))
        else:
            dir_noise = np.full(num_states, float(np.linalg.norm(s3, ord=2)) * noise)
        resolvable = top_vals > config.rank_floor_scale * dir_noise
        # keep the leading run of resolvable directions
        rank = int(np.argmin(resolvable)) if not resolvable.all() else num_states
        rank = max(1, rank)
        pair_floor = (config.rank_floor_scale * dir_noise).tolist()
    else:
        dir_noise = np.zeros(num_states)
        pair_floor = [0.0] * num_states
        rank = num_states
    whitening, h = whiten(g, s3, moments.p32, rank, s1=s1)
    result = tensor_power_method(
        h,
        num_components=rank,
        iters_per_component=config.power_iters,
        restarts=config.power_restarts,
        seed=config.seed,
    )
    means_r = recover_feature_means(result, whitening, num_blocks=moments.num_blocks)
    if rank < num_states:
        # unresolvable states are estimated at the recovered merged positions,
        # heaviest components (smallest whitened eigenvalue) duplicated first
        dup_order = np.argsort(result.eigenvalues, kind="stable")
        extras = [int(dup_order[i % rank]) for i in range(num_states - rank)]
        mapping = np.concatenate([np.arange(rank), np.asarray(extras, dtype=np.int64)])
    else:
        extras = []
        mapping = np.arange(num_states)
    means = means_r[:, mapping]
    probs, raw_probs = recover_meth_probs(means, prior_weights_per_cell, granularity)
    joint = estimate_joint_lsq(
        moments.p21,
        means_r,
        max_iters=config.lsq_max_iters,
        rel_tol=config.lsq_rel_tol,
    )
    if rank < num_states:
        # split each merged state's joint mass evenly among its copies; the
        # expanded matrix keeps non-negativity and total mass exactly
        multiplicity = np.bincount(mapping, minlength=rank)
        h_full = joint.matrix[np.ix_(mapping, mapping)] / np.outer(
            multiplicity[mapping], multiplicity[mapping]
        )
    else:
        h_full = joint.matrix
    pi, T = chain_from_joint(h_full)
    meth = probs[0] if moments.num_blocks == 1 else probs
    params = validate_params(HmmParams(initial_dist=pi, transition=T, meth_probs=meth))
    diagnostics = {
        "triples": moments.count,
        "noise_level": noise,
        "moment_ridge": ridge,
        "pair_floor": pair_floor,
        "effective_rank": int(rank),
        "duplicated_components": extras,
        "tensor_asymmetry": asymmetry,
        "pair_values": top_vals.tolist(),
        "whitening_values": np.asarray(whitening.singular_values).tolist(),
        "tensor_residuals": list(result.residual_norms),
        "eigenvalues": np.asarray(result.eigenvalues).tolist(),
        "feature_clamp_mass": result.clamp_mass,
        "sign_flips": result.sign_flips,
        "probs_preclamp": raw_probs.tolist(),
        "lsq_objective": joint.objective,
        "lsq_iterations": joint.iterations,
        "lsq_converged": joint.converged,
    }
    return RecoveredModel(
        params=params,
        per_cell_probs=probs,
        prior_weights=np.atleast_1d(np.asarray(prior_weights_per_cell, dtype=np.float64)),
        feature_means=means,
        diagnostics=diagnostics,
    )


def ftd_fit(
    seq: CountSequence, num_states: int, config: FtdConfig = FtdConfig()
) -> RecoveredModel:
    """Full spectral fit of a count sequence.

    Long enough sequences are accumulated as two half-stream shards whose
    merged moments equal the single-pass result; the halves also provide the
    split-half noise estimate that drives shrinkage and rank selection.
    """
    if len(seq) < 3:
        raise DataError(f"insufficient length: need at least 3 positions, got {len(seq)}")
    cfg_map = BetaMapConfig(granularity=config.granularity)
    dim = config.granularity * seq.num_cells
    halves = None
    if len(seq) >= 16:
        half = len(seq) // 2
        acc_a = MomentAccumulator(feature_dim=dim, num_blocks=seq.num_cells)
        acc_a.add_sequence(seq[:half], cfg_map, chunk_size=config.chunk_size)
        # start two positions early so the windows spanning the cut are kept:
        # the merged accumulator then covers every overlapping triple exactly once
        acc_b = MomentAccumulator(feature_dim=dim, num_blocks=seq.num_cells)
        acc_b.add_sequence(seq[half - 2 :], cfg_map, chunk_size=config.chunk_size)
        moments = acc_a.merge(acc_b).finalize()
        halves = (acc_a.finalize(), acc_b.finalize())
    else:
        acc = MomentAccumulator(feature_dim=dim, num_blocks=seq.num_cells)
        acc.add_sequence(seq, cfg_map, chunk_size=config.chunk_size)
        moments = acc.finalize()
    return ftd_fit_moments(
        moments, num_states, prior_weights(seq), config, split_halves=halves
    )


def ftd_then_em(
    seq: CountSequence,
    num_states: int,
    config: FtdConfig = FtdConfig(),
    rounds: int = 3,
    prob_margin: float = 1e-6,
) -> EmTrace:
    """Spectral fit followed by ``rounds`` EM refinement iterations.

    With ``rounds=0`` the EM stage is skipped and the trace simply wraps the
    spectral parameters. Warm-start probabilities are pulled off the [0, 1]
    boundary by ``prob_margin`` so clamped estimates cannot zero out the
    likelihood.
    """
    if rounds < 0:
        raise ParameterError(f"rounds must be >= 0, got {rounds}")
    model = ftd_fit(seq, num_states, config)
    if rounds == 0:
        return EmTrace(log_likelihoods=[], params=model.params, iterations=0)
    meth = np.clip(model.params.meth_probs, prob_margin, 1.0 - prob_margin)
    warm = HmmParams(
        initial_dist=model.params.initial_dist,
        transition=model.params.transition,
        meth_probs=meth,
    )
    em_cfg = EmConfig(max_iters=rounds, rel_ll_tolerance=0.0, init=warm)
    return em_fit(seq, num_states, em_cfg)
