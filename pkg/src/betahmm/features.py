"""Histogram features for count observations.

An observation (c, mu) is mapped to a length-D probability vector: the mass
that a smoothed estimate of the underlying methylation fraction assigns to
each of D equal bins of [0, 1]. The smoothing is the conjugate update of a
flat prior on the fraction, so the vector holds the binned density of a
Beta(mu + 1, c - mu + 1) variable. It concentrates around mu / c as coverage
grows and degrades gracefully to the uniform vector when coverage is zero.

Bin masses are differences of the regularized incomplete beta function at the
bin edges, evaluated by scipy's continued-fraction implementation. Vectors for
distinct (coverage, count) pairs are cached, so long sequences with repeated
counts are mapped once per distinct pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

from .errors import DataError, ParameterError
from .model import CountSequence, Observation

__all__ = [
    "BetaMapConfig",
    "beta_map",
    "concat_map",
    "map_sequence",
    "empirical_prior_weight",
    "prior_weights",
    "cache_stats",
    "clear_cache",
]


@dataclass(frozen=True)
class BetaMapConfig:
    """Configuration of the histogram map: number of bins of [0, 1]."""

    granularity: int = 30

    def __post_init__(self) -> None:
        if int(self.granularity) != self.granularity or self.granularity < 1:
            raise ParameterError(f"granularity must be a positive integer, got {self.granularity}")


class _FeatureCache:
    """Per-(coverage, count, granularity) store of computed feature rows.

    Reads are lock-free; insertion is a plain dict write, which is safe for
    a single writer (or sharded writers touching disjoint keys).
    """

    def __init__(self) -> None:
        self._rows: dict[tuple[int, int, int], np.ndarray] = {}
        self.computed = 0
        self.requests = 0

    def get(self, key: tuple[int, int, int]) -> np.ndarray | None:
        self.requests += 1
        return self._rows.get(key)

    def put(self, key: tuple[int, int, int], row: np.ndarray) -> None:
        row = np.array(row, dtype=np.float64)
        row.setflags(write=False)
        self._rows[key] = row
        self.computed += 1

    def clear(self) -> None:
        self._rows.clear()
        self.computed = 0
        self.requests = 0

    def __len__(self) -> int:
        return len(self._rows)


_CACHE = _FeatureCache()


def cache_stats() -> dict:
    """Counters of the shared feature cache (entries, computed, requests)."""
    return {"entries": len(_CACHE), "computed": _CACHE.computed, "requests": _CACHE.requests}


def clear_cache() -> None:
    _CACHE.clear()


def _bin_edges(granularity: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, granularity + 1)


def _beta_bin_masses(coverage: np.ndarray, meth: np.ndarray, granularity: int) -> np.ndarray:
    """Bin masses for arrays of (coverage, count) pairs, shape (n, granularity)."""
    a = meth.astype(np.float64) + 1.0
    b = coverage.astype(np.float64) - meth.astype(np.float64) + 1.0
    edges = _bin_edges(granularity)
    cdf = betainc(a[:, None], b[:, None], edges[None, :])
    masses = np.diff(cdf, axis=1)
    # the cdf is monotone; clip the odd -1e-17 round-off residue
    np.maximum(masses, 0.0, out=masses)
    return masses


def _as_counts(obs) -> tuple[int, int]:
    if isinstance(obs, Observation):
        return obs.coverage, obs.meth_count
    c, mu = obs
    c, mu = int(c), int(mu)
    if c < 0:
        raise ParameterError(f"coverage must be >= 0, got {c}")
    if not 0 <= mu <= c:
        raise ParameterError(f"meth count {mu} outside [0, {c}]")
    return c, mu


def beta_map(obs, cfg: BetaMapConfig) -> np.ndarray:
    """Feature vector of one observation; entries are non-negative and sum to 1."""
    c, mu = _as_counts(obs)
    key = (c, mu, cfg.granularity)
    row = _CACHE.get(key)
    if row is None:
        row = _beta_bin_masses(np.array([c]), np.array([mu]), cfg.granularity)[0]
        _CACHE.put(key, row)
    return row


def concat_map(observations, cfg: BetaMapConfig) -> np.ndarray:
    """Stacked per-cell feature vectors for one position of a multi-cell run.

    Accepts a tuple of Observations (or (c, mu) pairs); the result has length
    num_cells * granularity and each cell block sums to 1.
    """
    if isinstance(observations, Observation):
        observations = (observations,)
    if len(observations) == 0:
        raise ParameterError("need at least one cell per position")
    return np.concatenate([beta_map(o, cfg) for o in observations])


def map_sequence(seq: CountSequence, cfg: BetaMapConfig) -> np.ndarray:
    """Feature matrix of a whole sequence, shape (length, num_cells * granularity).

    Distinct (coverage, count) pairs are evaluated once and shared through the
    module cache; repeated pairs are pure lookups.
    """
    D = cfg.granularity
    pairs = np.stack([seq.coverage.ravel(), seq.meth.ravel()], axis=1)
    uniq, inverse = np.unique(pairs, axis=0, return_inverse=True)
    rows = np.empty((uniq.shape[0], D))
    missing = []
    for idx in range(uniq.shape[0]):
        c, mu = int(uniq[idx, 0]), int(uniq[idx, 1])
        row = _CACHE.get((c, mu, D))
        if row is None:
            missing.append(idx)
        else:
            rows[idx] = row
    if missing:
        sel = np.asarray(missing)
        fresh = _beta_bin_masses(uniq[sel, 0], uniq[sel, 1], D)
        rows[sel] = fresh
        for pos, idx in enumerate(missing):
            _CACHE.put((int(uniq[idx, 0]), int(uniq[idx, 1]), D), fresh[pos])
    flat = rows[inverse.ravel()]
    return flat.reshape(len(seq), seq.num_cells * D)


def empirical_prior_weight(seq: CountSequence, cell: int = 0) -> float:
    """Mean of 1 / (coverage + 2) over positions of one cell.

    This is the average weight that the smoothed fraction estimate
    (mu + 1) / (c + 2) puts on each prior pseudo-count; it lives in (0, 1/2]
    and enters the affine correction that turns feature-mean histograms back
    into success probabilities.
    """
    if len(seq) == 0:
        raise DataError("cannot average over an empty sequence")
    if not 0 <= cell < seq.num_cells:
        raise ParameterError(f"cell index {cell} outside [0, {seq.num_cells})")
    return float(np.mean(1.0 / (seq.coverage[:, cell] + 2.0)))


def prior_weights(seq: CountSequence) -> np.ndarray:
    """Per-cell empirical prior weights, shape (num_cells,)."""
    return np.array([empirical_prior_weight(seq, j) for j in range(seq.num_cells)])
