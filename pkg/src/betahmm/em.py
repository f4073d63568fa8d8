"""Expectation-maximization baseline for binomial HMMs.

Uses the scaled forward-backward recursions (per-position normalization
constants rather than log-space messages). Emissions multiply one binomial
likelihood per cell type, treating cells as conditionally independent given
the shared hidden state.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, xlog1py, xlogy

from .errors import DataError, NumericalError, ParameterError
from .model import CountSequence, HmmParams, validate_params

__all__ = ["EmConfig", "EmTrace", "log_likelihood", "em_fit", "random_init"]


@dataclass(frozen=True)
class EmConfig:
    """Fitting controls for :func:`em_fit`.

    ``rel_ll_tolerance`` stops the loop once the fractional log-likelihood
    improvement drops below it; zero disables early stopping so exactly
    ``max_iters`` iterations run. ``init`` warm-starts from given parameters,
    otherwise a seeded random initialization is drawn.
    """

    max_iters: int = 100
    rel_ll_tolerance: float = 0.001
    seed: int | None = None
    init: HmmParams | None = None

    def __post_init__(self) -> None:
        if self.max_iters < 1:
            raise ParameterError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.rel_ll_tolerance < 0.0:
            raise ParameterError(
                f"rel_ll_tolerance must be >= 0, got {self.rel_ll_tolerance}"
            )


@dataclass(eq=False)
class EmTrace:
    """Fit record: per-iteration log-likelihoods and the final parameters."""

    log_likelihoods: list = field(default_factory=list)
    params: HmmParams | None = None
    iterations: int = 0


def random_init(num_states: int, num_cells: int, rng: np.random.Generator) -> HmmParams:
    """Random starting point: flat-Dirichlet distributions, probabilities in [0.05, 0.95]."""
    alpha = np.ones(num_states)
    pi = rng.dirichlet(alpha)
    T = np.column_stack([rng.dirichlet(alpha) for _ in range(num_states)])
    p = rng.uniform(0.05, 0.95, size=(num_cells, num_states))
    if num_cells == 1:
        p = p[0]
    return HmmParams(initial_dist=pi, transition=T, meth_probs=p)


def emission_log_probs(params: HmmParams, seq: CountSequence) -> np.ndarray:
    """Log emission probabilities, shape (length, num_states).

    Entry (t, h) is the log probability of every cell's counts at position t
    given state h, including binomial coefficients.
    """
    p = params.cell_probs()
    if p.shape[0] != seq.num_cells:
        raise ParameterError(
            f"model carries {p.shape[0]} cell(s) but data carries {seq.num_cells}"
        )
    c = seq.coverage.astype(np.float64)
    mu = seq.meth.astype(np.float64)
    coeff = (gammaln(c + 1.0) - gammaln(mu + 1.0) - gammaln(c - mu + 1.0)).sum(axis=1)
    terms = xlogy(mu[:, :, None], p[None, :, :]) + xlog1py(
        (c - mu)[:, :, None], -p[None, :, :]
    )
    return coeff[:, None] + terms.sum(axis=1)


def _scaled_passes(
    pi: np.ndarray, T: np.ndarray, log_b: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Scaled forward and backward recursions.

    Returns (log-likelihood, alphas, betas, scales, shifted emissions). Alphas
    are normalized filtering distributions; betas carry the matching scaling
    so gamma_t is proportional to alpha_t * beta_t.
    """
    L, m = log_b.shape
    shift = log_b.max(axis=1)
    if not np.all(np.isfinite(shift)):
        raise NumericalError(
            "some position has zero probability under every state; likelihood is -inf"
        )
    b = np.exp(log_b - shift[:, None])
    alphas = np.empty((L, m))
    scales = np.empty(L)
    vec = pi * b[0]
    s = float(vec.sum())
    if s <= 0.0 or not np.isfinite(s):
        raise NumericalError("forward pass underflowed at position 0")
    alphas[0] = vec / s
    scales[0] = s
    for t in range(1, L):
        vec = (T @ alphas[t - 1]) * b[t]
        s = float(vec.sum())
        if s <= 0.0 or not np.isfinite(s):
            raise NumericalError(f"forward pass underflowed at position {t}")
        alphas[t] = vec / s
        scales[t] = s
    log_like = float(np.log(scales).sum() + shift.sum())

    betas = np.empty((L, m))
    betas[L - 1] = 1.0
    for t in range(L - 2, -1, -1):
        betas[t] = (T.T @ (b[t + 1] * betas[t + 1])) / scales[t + 1]
    return log_like, alphas, betas, scales, b


def log_likelihood(params: HmmParams, seq: CountSequence) -> float:
    """Exact log-likelihood of a count sequence under a binomial HMM."""
    validate_params(params)
    if len(seq) < 1:
        raise DataError("cannot score an empty sequence")
    log_b = emission_log_probs(params, seq)
    log_like, *_ = _scaled_passes(params.initial_dist, params.transition, log_b)
    return log_like


def _m_step(
    seq: CountSequence,
    alphas: np.ndarray,
    betas: np.ndarray,
    scales: np.ndarray,
    b: np.ndarray,
    T: np.ndarray,
    single_cell: bool,
) -> HmmParams:
    L, m = alphas.shape
    gammas = alphas * betas
    gammas /= gammas.sum(axis=1, keepdims=True)

    pi_new = gammas[0]

    # expected transition counts: xi_t(i, j) = alpha_t(j) T[i, j] b_{t+1}(i) beta_{t+1}(i) / s_{t+1}
    weighted = (b[1:] * betas[1:]) / scales[1:, None]
    trans_counts = T * (weighted.T @ alphas[:-1])
    col = trans_counts.sum(axis=0)
    T_new = np.empty_like(T)
    for j in range(m):
        if col[j] > 0.0:
            T_new[:, j] = trans_counts[:, j] / col[j]
        else:
            T_new[:, j] = 1.0 / m

    num = gammas.T @ seq.meth.astype(np.float64)
    den = gammas.T @ seq.coverage.astype(np.float64)
    p_new = np.empty_like(num)
    degenerate = den <= 0.0
    if np.any(degenerate):
        warnings.warn(
            "a state received zero expected coverage; its success probability "
            "was reset to 0.5",
            RuntimeWarning,
            stacklevel=3,
        )
    with np.errstate(invalid="ignore", divide="ignore"):
        np.divide(num, den, out=p_new, where=~degenerate)
    p_new[degenerate] = 0.5
    np.clip(p_new, 0.0, 1.0, out=p_new)
    p_out = p_new.T[0] if single_cell else p_new.T
    return HmmParams(initial_dist=pi_new, transition=T_new, meth_probs=p_out)


def em_fit(seq: CountSequence, num_states: int, config: EmConfig) -> EmTrace:
    """Baum-Welch fit of a binomial HMM.

    Records the log-likelihood of the current parameters at the start of every
    iteration; the trace is non-decreasing up to round-off. Stops on the
    fractional-improvement rule of ``config`` or after ``max_iters`` updates.
    """
    if num_states < 1:
        raise ParameterError(f"num_states must be >= 1, got {num_states}")
    if len(seq) < 2:
        raise DataError(f"need at least 2 positions to fit transitions, got {len(seq)}")
    if config.init is not None:
        params = validate_params(config.init)
        if params.num_states != num_states:
            raise ParameterError(
                f"warm start carries {params.num_states} states, expected {num_states}"
            )
        if params.num_cells != seq.num_cells:
            raise ParameterError(
                f"warm start carries {params.num_cells} cell(s), data carries {seq.num_cells}"
            )
    else:
        rng = np.random.default_rng(config.seed)
        params = random_init(num_states, seq.num_cells, rng)

    single_cell = params.meth_probs.ndim == 1
    lls: list[float] = []
    for _ in range(config.max_iters):
        log_b = emission_log_probs(params, seq)
        log_like, alphas, betas, scales, b = _scaled_passes(
            params.initial_dist, params.transition, log_b
        )
        lls.append(log_like)
        if (
            len(lls) > 1
            and config.rel_ll_tolerance > 0.0
            and lls[-1] - lls[-2] <= config.rel_ll_tolerance * abs(lls[-2])
        ):
            break
        params = _m_step(seq, alphas, betas, scales, b, params.transition, single_cell)
        validate_params(params)
    return EmTrace(log_likelihoods=lls, params=params, iterations=len(lls))
