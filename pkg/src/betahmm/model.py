"""Core types for binomial hidden Markov models over methylation count data.

The observed process is a pair of integer sequences per cell type: a read
coverage c_t and a methylated-read count mu_t with 0 <= mu_t <= c_t. Hidden
states follow a first-order Markov chain; given the state h_t, mu_t is
binomial with c_t trials and a state-specific success probability.

Transition matrices here are column stochastic: ``transition[i, j]`` is the
probability of moving to state ``i`` given the current state is ``j``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .errors import DataError, ParameterError

__all__ = [
    "Observation",
    "Triple",
    "CountSequence",
    "HmmParams",
    "validate_params",
    "iter_triples",
]

_SUM_ATOL = 1e-12


@dataclass(frozen=True)
class Observation:
    """One genomic bin: read coverage and how many of those reads were methylated."""

    coverage: int
    meth_count: int

    def __post_init__(self) -> None:
        if self.coverage < 0:
            raise ParameterError(f"coverage must be >= 0, got {self.coverage}")
        if not 0 <= self.meth_count <= self.coverage:
            raise ParameterError(
                f"meth_count {self.meth_count} outside [0, {self.coverage}]"
            )


@dataclass(frozen=True)
class Triple:
    """Observations at three consecutive positions.

    Each field is a tuple with one :class:`Observation` per cell type, so the
    single-cell case is a 1-tuple.
    """

    x1: tuple[Observation, ...]
    x2: tuple[Observation, ...]
    x3: tuple[Observation, ...]

    def __post_init__(self) -> None:
        k = len(self.x1)
        if k == 0:
            raise ParameterError("triple must carry at least one cell")
        if len(self.x2) != k or len(self.x3) != k:
            raise ParameterError("all three positions must carry the same number of cells")


class CountSequence:
    """An immutable run of count observations with shape ``(length, num_cells)``.

    Counts are stored as two integer arrays so feature mapping and moment
    accumulation can run vectorised over positions.
    """

    __slots__ = ("_coverage", "_meth")

    def __init__(self, coverage, meth) -> None:
        cov = np.array(coverage, dtype=np.int64)
        mu = np.array(meth, dtype=np.int64)
        if cov.ndim == 1:
            cov = cov[:, None]
        if mu.ndim == 1:
            mu = mu[:, None]
        if cov.ndim != 2 or mu.ndim != 2 or cov.shape != mu.shape:
            raise DataError(
                f"coverage and meth shapes must match, got {cov.shape} and {mu.shape}"
            )
        if cov.shape[1] < 1:
            raise DataError("sequence must carry at least one cell")
        if np.any(cov < 0):
            t, j = np.argwhere(cov < 0)[0]
            raise DataError(f"negative coverage at position {t}, cell {j}")
        bad = (mu < 0) | (mu > cov)
        if np.any(bad):
            t, j = np.argwhere(bad)[0]
            raise DataError(
                f"meth count outside [0, coverage] at position {t}, cell {j}"
            )
        cov.setflags(write=False)
        mu.setflags(write=False)
        self._coverage = cov
        self._meth = mu

    @classmethod
    def from_observations(cls, observations: Iterable) -> "CountSequence":
        """Build a sequence from Observations (single cell) or per-cell tuples."""
        rows_cov, rows_mu = [], []
        for entry in observations:
            if isinstance(entry, Observation):
                entry = (entry,)
            rows_cov.append([o.coverage for o in entry])
            rows_mu.append([o.meth_count for o in entry])
        if not rows_cov:
            raise DataError("empty observation list")
        widths = {len(r) for r in rows_cov}
        if len(widths) != 1:
            raise DataError("every position must carry the same number of cells")
        return cls(np.array(rows_cov), np.array(rows_mu))

    @property
    def coverage(self) -> np.ndarray:
        return self._coverage

    @property
    def meth(self) -> np.ndarray:
        return self._meth

    @property
    def num_cells(self) -> int:
        return self._coverage.shape[1]

    def __len__(self) -> int:
        return self._coverage.shape[0]

    def observations(self, t: int) -> tuple[Observation, ...]:
        return tuple(
            Observation(int(c), int(m))
            for c, m in zip(self._coverage[t], self._meth[t])
        )

    def cell(self, index: int) -> "CountSequence":
        """A single-cell view of one column."""
        return CountSequence(self._coverage[:, [index]], self._meth[:, [index]])

    def __getitem__(self, key) -> "CountSequence":
        if not isinstance(key, slice):
            raise TypeError("CountSequence supports slicing only")
        return CountSequence(self._coverage[key], self._meth[key])

    def __repr__(self) -> str:
        return f"CountSequence(length={len(self)}, num_cells={self.num_cells})"


@dataclass(frozen=True, eq=False)
class HmmParams:
    """Parameters of a binomial HMM.

    ``meth_probs`` is either a length-m vector (single cell) or a (k, m)
    matrix holding one row of per-state success probabilities per cell type.
    """

    initial_dist: np.ndarray
    transition: np.ndarray
    meth_probs: np.ndarray

    def __post_init__(self) -> None:
        for name in ("initial_dist", "transition", "meth_probs"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def num_states(self) -> int:
        return self.initial_dist.shape[0]

    @property
    def num_cells(self) -> int:
        return 1 if self.meth_probs.ndim == 1 else self.meth_probs.shape[0]

    def cell_probs(self) -> np.ndarray:
        """meth_probs viewed as a (num_cells, num_states) matrix."""
        p = self.meth_probs
        return p[None, :] if p.ndim == 1 else p


def validate_params(params: HmmParams, atol: float = _SUM_ATOL) -> HmmParams:
    """Check HMM parameter invariants, returning ``params`` unchanged.

    Raises :class:`ParameterError` naming the first violated invariant.
    """
    pi = params.initial_dist
    T = params.transition
    p = params.meth_probs
    if pi.ndim != 1 or pi.size < 1:
        raise ParameterError(f"initial distribution must be a non-empty vector, got shape {pi.shape}")
    m = pi.size
    if np.any(~np.isfinite(pi)):
        raise ParameterError("initial distribution has non-finite entries")
    if np.any(pi < 0):
        idx = int(np.argmax(pi < 0))
        raise ParameterError(f"initial distribution entry {idx} is negative ({pi[idx]})")
    total = float(pi.sum())
    if abs(total - 1.0) > atol:
        raise ParameterError(f"initial distribution sums to {total} (must be 1 within {atol})")
    if T.shape != (m, m):
        raise ParameterError(f"transition matrix shape {T.shape} does not match {m} states")
    if np.any(~np.isfinite(T)):
        raise ParameterError("transition matrix has non-finite entries")
    if np.any(T < 0):
        i, j = np.argwhere(T < 0)[0]
        raise ParameterError(f"transition entry ({i}, {j}) is negative ({T[i, j]})")
    col_sums = T.sum(axis=0)
    off = np.abs(col_sums - 1.0)
    if np.any(off > atol):
        j = int(np.argmax(off))
        raise ParameterError(
            f"transition column {j} sums to {col_sums[j]} (must be 1 within {atol})"
        )
    if p.ndim not in (1, 2) or p.shape[-1] != m:
        raise ParameterError(
            f"meth_probs shape {p.shape} does not match {m} states"
        )
    if np.any(~np.isfinite(p)):
        raise ParameterError("meth_probs has non-finite entries")
    if np.any(p < 0) or np.any(p > 1):
        flat = np.argwhere((p < 0) | (p > 1))[0]
        raise ParameterError(
            f"meth_probs entry at {tuple(int(i) for i in flat)} outside [0, 1]"
        )
    return params


def iter_triples(seq: CountSequence) -> Iterator[Triple]:
    """Iterate over all overlapping consecutive triples of a sequence.

    Every window (t, t+1, t+2) contributes one :class:`Triple`, so a sequence
    of length L yields L - 2 of them, in genomic order.
    """
    if len(seq) < 3:
        raise DataError(f"insufficient length: need at least 3 positions, got {len(seq)}")

    def _gen() -> Iterator[Triple]:
        for t in range(len(seq) - 2):
            yield Triple(seq.observations(t), seq.observations(t + 1), seq.observations(t + 2))

    return _gen()
