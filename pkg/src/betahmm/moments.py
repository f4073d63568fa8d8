"""Streaming co-occurrence moments of consecutive feature triples.

For a feature-mapped sequence, every overlapping window (t, t+1, t+2)
contributes the pairwise outer products of its three feature vectors and one
order-3 outer product. This module keeps error-compensated running sums of
those products so genome-length streams average without precision loss, and
supports sharded accumulation: accumulators built on disjoint chunks merge
into the same result as a single sequential pass, up to float reassociation.

Dense storage is used throughout; the feature dimension is capped so the
order-3 array stays manageable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParameterError
from .features import BetaMapConfig, concat_map, map_sequence
from .model import CountSequence, Triple

__all__ = ["MomentSet", "MomentAccumulator", "MAX_FEATURE_DIM"]

MAX_FEATURE_DIM = 256


class _NeumaierSum:
    """Compensated (Kahan/Neumaier) elementwise sum of equally shaped arrays."""

    __slots__ = ("total", "comp")

    def __init__(self, shape) -> None:
        self.total = np.zeros(shape)
        self.comp = np.zeros(shape)

    def add(self, value: np.ndarray) -> None:
        t = self.total + value
        big = np.abs(self.total) >= np.abs(value)
        self.comp += np.where(big, (self.total - t) + value, (value - t) + self.total)
        self.total = t

    def value(self) -> np.ndarray:
        return self.total + self.comp

    def copy(self) -> "_NeumaierSum":
        out = _NeumaierSum(self.total.shape)
        out.total = self.total.copy()
        out.comp = self.comp.copy()
        return out


@dataclass(frozen=True, eq=False)
class MomentSet:
    """Finalized empirical moments: six pairwise orientations and the triple.

    ``p12[i, j]`` is the mean of (first vector)_i * (second vector)_j over all
    accumulated triples; transposed orientations are exact transposes by
    construction. ``t123`` is the mean order-3 outer product.
    """

    p12: np.ndarray
    p21: np.ndarray
    p13: np.ndarray
    p31: np.ndarray
    p23: np.ndarray
    p32: np.ndarray
    t123: np.ndarray
    count: int
    num_blocks: int = 1

    def __post_init__(self) -> None:
        for name in ("p12", "p21", "p13", "p31", "p23", "p32", "t123"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return self.p12.shape[0]

    def validate(self, atol: float = 1e-9) -> "MomentSet":
        """Check normalization and symmetry bookkeeping; returns self."""
        k = self.num_blocks
        d = self.dim
        if self.count < 1:
            raise DataError("moment set holds no triples")
        for name in ("p12", "p13", "p23"):
            mat = getattr(self, name)
            if mat.shape != (d, d):
                raise ParameterError(f"{name} has shape {mat.shape}, expected {(d, d)}")
            if float(mat.min()) < -1e-12:
                raise ParameterError(f"{name} has a negative entry ({mat.min()})")
            total = float(mat.sum())
            if abs(total - k * k) > atol * max(1.0, k * k):
                raise ParameterError(
                    f"{name} entries sum to {total}, expected {k * k}"
                )
        for a, b in (("p21", "p12"), ("p31", "p13"), ("p32", "p23")):
            if not np.array_equal(getattr(self, a), getattr(self, b).T):
                raise ParameterError(f"{a} is not the exact transpose of {b}")
        if self.t123.shape != (d, d, d):
            raise ParameterError(f"t123 has shape {self.t123.shape}, expected {(d, d, d)}")
        if float(self.t123.min()) < -1e-12:
            raise ParameterError(f"t123 has a negative entry ({self.t123.min()})")
        total = float(self.t123.sum())
        if abs(total - k**3) > atol * max(1.0, k**3):
            raise ParameterError(f"t123 entries sum to {total}, expected {k**3}")
        return self


class MomentAccumulator:
    """Running compensated sums of pairwise and triple outer products.

    Accumulate triples one at a time, or whole sequences in vectorised chunks;
    ``merge`` combines accumulators built on disjoint shards. ``finalize``
    divides by the triple count and returns a validated :class:`MomentSet`.
    """

    def __init__(self, feature_dim: int, num_blocks: int = 1) -> None:
        if feature_dim < 1:
            raise ParameterError(f"feature_dim must be >= 1, got {feature_dim}")
        if feature_dim > MAX_FEATURE_DIM:
            raise ParameterError(
                f"feature_dim {feature_dim} exceeds the dense-storage cap {MAX_FEATURE_DIM}"
            )
        if num_blocks < 1 or feature_dim % num_blocks != 0:
            raise ParameterError(
                f"num_blocks {num_blocks} does not divide feature_dim {feature_dim}"
            )
        self.feature_dim = feature_dim
        self.num_blocks = num_blocks
        self.count = 0
        d = feature_dim
        self._p12 = _NeumaierSum((d, d))
        self._p13 = _NeumaierSum((d, d))
        self._p23 = _NeumaierSum((d, d))
        self._t123 = _NeumaierSum((d, d, d))

    def add_features(self, f1: np.ndarray, f2: np.ndarray, f3: np.ndarray) -> None:
        """Accumulate one already-mapped triple of feature vectors."""
        d = self.feature_dim
        if f1.shape != (d,) or f2.shape != (d,) or f3.shape != (d,):
            raise ParameterError(
                f"feature vectors must have shape ({d},), got "
                f"{f1.shape}, {f2.shape}, {f3.shape}"
            )
        self._p12.add(np.outer(f1, f2))
        self._p13.add(np.outer(f1, f3))
        self._p23.add(np.outer(f2, f3))
        self._t123.add(f1[:, None, None] * np.outer(f2, f3)[None, :, :])
        self.count += 1

    def accumulate(self, triple: Triple, cfg: BetaMapConfig) -> "MomentAccumulator":
        """Map one observation triple and fold it into the running sums."""
        f1 = concat_map(triple.x1, cfg)
        f2 = concat_map(triple.x2, cfg)
        f3 = concat_map(triple.x3, cfg)
        self.add_features(f1, f2, f3)
        return self

    def add_sequence(
        self, seq: CountSequence, cfg: BetaMapConfig, chunk_size: int | None = None
    ) -> "MomentAccumulator":
        """Accumulate every overlapping triple of ``seq`` in vectorised chunks.

        Equivalent to accumulating triple by triple, up to float reassociation
        (chunk partial sums are folded in through the compensated adders).
        """
        if len(seq) < 3:
            raise DataError(f"insufficient length: need at least 3 positions, got {len(seq)}")
        feats = map_sequence(seq, cfg)
        if feats.shape[1] != self.feature_dim:
            raise ParameterError(
                f"sequence maps to dimension {feats.shape[1]}, accumulator expects {self.feature_dim}"
            )
        d = self.feature_dim
        n = len(seq) - 2
        if chunk_size is None:
            chunk_size = max(64, (1 << 22) // (d * d))
        f1, f2, f3 = feats[:-2], feats[1:-1], feats[2:]
        for lo in range(0, n, chunk_size):
            hi = min(lo + chunk_size, n)
            a, b, c = f1[lo:hi], f2[lo:hi], f3[lo:hi]
            self._p12.add(a.T @ b)
            self._p13.add(a.T @ c)
            self._p23.add(b.T @ c)
            kr = (b[:, :, None] * c[:, None, :]).reshape(hi - lo, d * d)
            self._t123.add((a.T @ kr).reshape(d, d, d))
            self.count += hi - lo
        return self

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        """A new accumulator equal to this one plus ``other`` (shard reduction)."""
        if other.feature_dim != self.feature_dim or other.num_blocks != self.num_blocks:
            raise ParameterError("cannot merge accumulators with different layouts")
        out = MomentAccumulator(self.feature_dim, self.num_blocks)
        out.count = self.count + other.count
        for name in ("_p12", "_p13", "_p23", "_t123"):
            s = getattr(self, name).copy()
            o = getattr(other, name)
            s.add(o.total)
            s.add(o.comp)
            setattr(out, name, s)
        return out

    def finalize(self) -> MomentSet:
        """Normalized moment means over everything accumulated so far."""
        if self.count < 1:
            raise DataError("cannot finalize an empty accumulator")
        n = float(self.count)
        p12 = self._p12.value() / n
        p13 = self._p13.value() / n
        p23 = self._p23.value() / n
        t123 = self._t123.value() / n
        # compensation can leave -1e-18 residue on exactly-zero cells
        for arr in (p12, p13, p23, t123):
            np.maximum(arr, 0.0, out=arr)
        moments = MomentSet(
            p12=p12,
            p21=p12.T.copy(),
            p13=p13,
            p31=p13.T.copy(),
            p23=p23,
            p32=p23.T.copy(),
            t123=t123,
            count=self.count,
            num_blocks=self.num_blocks,
        )
        return moments.validate()
