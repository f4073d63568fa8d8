"""Spectral decomposition of the moment tensor.

The pipeline mirrors the classic multi-view strategy: pairwise moments build
two change-of-view operators that recenter the first and third positions on
the middle hidden state, giving a symmetric order-3 tensor; a whitening map
derived from the symmetrized pair matrix orthogonalizes its components; the
tensor power method with deflation then extracts one robust eigenpair per
hidden state, from which the per-state feature means are reassembled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ParameterError
from .moments import MomentSet

__all__ = [
    "WhiteningData",
    "DecompositionResult",
    "symmetrize_moments",
    "whiten",
    "tensor_power_method",
    "recover_feature_means",
    "decompose_moments",
]

# pseudoinverse / rank cutoff: singular values below dim * sigma_max * RANK_RTOL
# are treated as zero
RANK_RTOL = 1e-10


@dataclass(eq=False)
class WhiteningData:
    """Whitening map and the operators that produced it.

    ``w`` has orthonormal columns after scaling by the inverse square roots of
    the top eigenvalues of the symmetrized pair matrix, so
    ``w.T @ pair_matrix @ w`` is the identity.
    """

    s1: np.ndarray | None
    s3: np.ndarray
    w: np.ndarray
    singular_values: np.ndarray
    pair_matrix: np.ndarray


@dataclass(eq=False)
class DecompositionResult:
    """Eigenpairs of the whitened tensor plus recovered per-state feature means."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residual_norms: list = field(default_factory=list)
    input_norm: float = 0.0
    feature_means: np.ndarray | None = None
    clamp_mass: float = 0.0
    sign_flips: int = 0


def _pinv(
    mat: np.ndarray,
    rank_rtol: float,
    rank: int | None = None,
    ridge: float = 0.0,
) -> np.ndarray:
    """Pseudoinverse with the relative cutoff, optionally truncated to ``rank``.

    Truncation matters on noisy inputs: the population pair moments have rank
    equal to the number of states, and inverting the noise directions beyond
    it amplifies them by their inverse singular values. A positive ``ridge``
    replaces ``1/sigma`` with ``sigma / (sigma^2 + ridge^2)``, which leaves
    directions well above the ridge untouched and shrinks the rest toward
    zero instead of letting sampling noise explode.
    """
    if rank is None and ridge == 0.0:
        return np.linalg.pinv(mat, rcond=max(mat.shape) * rank_rtol)
    u, s, vt = np.linalg.svd(mat, full_matrices=False)
    keep = int(np.sum(s > max(mat.shape) * rank_rtol * s[0]))
    if rank is not None:
        keep = min(rank, keep)
    inv_s = s[:keep] / (s[:keep] ** 2 + ridge**2)
    return (vt[:keep].T * inv_s) @ u[:, :keep].T


def _effective_rank(mat: np.ndarray, rank_rtol: float) -> int:
    s = np.linalg.svd(mat, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > max(mat.shape) * rank_rtol * s[0]))


def _symmetric_part(t: np.ndarray) -> np.ndarray:
    return (
        t
        + t.transpose(0, 2, 1)
        + t.transpose(1, 0, 2)
        + t.transpose(1, 2, 0)
        + t.transpose(2, 0, 1)
        + t.transpose(2, 1, 0)
    ) / 6.0


def symmetrize_moments(
    moments: MomentSet,
    num_states: int,
    rank_rtol: float = RANK_RTOL,
    ridge: float = 0.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Recenter the triple moment on the middle position.

    Returns ``(s1, s3, g, asymmetry)`` where ``s1 = p23 @ pinv(p13)`` maps
    first-position features to middle-view coordinates, ``s3 = p21 @ pinv(p31)``
    does the same for the third position, ``g`` is the transformed tensor
    (symmetric for population moments) and ``asymmetry`` is the relative
    Frobenius distance of ``g`` from its symmetric part. ``ridge`` shrinks the
    pseudoinverse directions whose singular values sit at or below the sampling
    noise; the lag-2 pair moments are often barely full rank for fast-mixing
    chains, and inverting them unregularized turns noise into the dominant
    signal.
    """
    if num_states < 1:
        raise ParameterError(f"num_states must be >= 1, got {num_states}")
    if ridge < 0.0 or not np.isfinite(ridge):
        raise ParameterError(f"ridge must be finite and >= 0, got {ridge}")
    for name in ("p13", "p31"):
        rank = _effective_rank(getattr(moments, name), rank_rtol)
        if rank < num_states:
            raise NumericalError(
                f"rank condition violated: effective rank of {name} is {rank}, "
                f"need at least {num_states}"
            )
    s1 = moments.p23 @ _pinv(moments.p13, rank_rtol, rank=num_states, ridge=ridge)
    s3 = moments.p21 @ _pinv(moments.p31, rank_rtol, rank=num_states, ridge=ridge)
    g = np.einsum("ia,ajc,lc->ijl", s1, moments.t123, s3, optimize=True)
    norm = float(np.linalg.norm(g))
    if norm == 0.0:
        raise NumericalError("transformed tensor is identically zero")
    asymmetry = float(np.linalg.norm(g - _symmetric_part(g))) / norm
    return s1, s3, g, asymmetry


def whiten(
    g: np.ndarray,
    s3: np.ndarray,
    p32: np.ndarray,
    num_states: int,
    rank_rtol: float = RANK_RTOL,
    s1: np.ndarray | None = None,
) -> tuple[WhiteningData, np.ndarray]:
    """Build the whitening map from ``s3 @ p32`` and contract ``g`` with it.

    The pair matrix ``s3 @ p32`` equals the middle-view second moment for
    population inputs; its symmetric part is eigendecomposed and the top
    ``num_states`` directions scaled to unit curvature. Returns the whitening
    data and the ``num_states`` cubed whitened tensor.
    """
    m = num_states
    pair = s3 @ p32
    pair_sym = 0.5 * (pair + pair.T)
    vals, vecs = np.linalg.eigh(pair_sym)
    order = np.argsort(-vals, kind="stable")
    vals = vals[order][:m]
    vecs = vecs[:, order][:, :m]
    top = float(np.abs(vals).max(initial=0.0))
    cutoff = pair.shape[0] * rank_rtol * top
    if vals.size < m or vals[m - 1] <= cutoff:
        sigma_m = float(vals[m - 1]) if vals.size >= m else float("nan")
        raise NumericalError(
            f"whitening failed: eigenvalue {m} of the pair matrix is {sigma_m:.6e}, "
            f"below the rank cutoff {cutoff:.6e}"
        )
    # deterministic eigenvector signs: largest-magnitude entry made positive
    flip = vecs[np.abs(vecs).argmax(axis=0), np.arange(m)] < 0
    vecs[:, flip] *= -1.0
    w = vecs / np.sqrt(vals)[None, :]
    h = np.tensordot(g, w, axes=([0], [0]))
    h = np.tensordot(h, w, axes=([0], [0]))
    h = np.tensordot(h, w, axes=([0], [0]))
    return WhiteningData(s1=s1, s3=s3, w=w, singular_values=vals, pair_matrix=pair_sym), h


def _contract_once(t: np.ndarray, v: np.ndarray) -> np.ndarray:
    """t(I, v, v): contract the last two modes with v."""
    return (t @ v) @ v


def tensor_power_method(
    h: np.ndarray,
    num_components: int,
    iters_per_component: int = 30,
    restarts: int = 10,
    seed: int | None = None,
    lambda_tol: float | None = None,
) -> DecompositionResult:
    """Robust eigenpairs of a (nearly) symmetric tensor by power iteration.

    Each component runs ``restarts`` random unit starts for
    ``iters_per_component`` iterations, keeps the start with the largest
    eigenvalue, polishes it with another round of iterations, and deflates.
    Eigenvalues are reported positive (the joint sign flip of an eigenpair is
    a symmetry of odd-order tensors). Deterministic for a fixed seed.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 3 or len(set(h.shape)) != 1:
        raise ParameterError(f"expected a cubic order-3 tensor, got shape {h.shape}")
    dim = h.shape[0]
    if not 1 <= num_components <= dim:
        raise ParameterError(
            f"num_components must be in [1, {dim}], got {num_components}"
        )
    if iters_per_component < 1 or restarts < 1:
        raise ParameterError("iters_per_component and restarts must be >= 1")
    rng = np.random.default_rng(seed)
    input_norm = float(np.linalg.norm(h))
    if lambda_tol is None:
        lambda_tol = 1e-10 * max(1.0, input_norm)

    residual = h.copy()
    eigenvalues = np.empty(num_components)
    eigenvectors = np.empty((dim, num_components))
    residual_norms: list[float] = []

    def _iterate(theta: np.ndarray, iters: int) -> np.ndarray:
        for _ in range(iters):
            nxt = _contract_once(residual, theta)
            if not np.all(np.isfinite(nxt)):
                raise NumericalError("tensor power iteration produced non-finite values")
            norm = float(np.linalg.norm(nxt))
            if norm < 1e-300:
                break
            nxt /= norm
            if float(np.linalg.norm(nxt - theta)) < 1e-14:
                return nxt
            theta = nxt
        return theta

    for comp in range(num_components):
        best_lam = -np.inf
        best_theta = None
        for _ in range(restarts):
            theta = rng.standard_normal(dim)
            theta /= np.linalg.norm(theta)
            theta = _iterate(theta, iters_per_component)
            lam = float(_contract_once(residual, theta) @ theta)
            if lam < 0.0:
                theta = -theta
                lam = -lam
            if lam > best_lam:
                best_lam = lam
                best_theta = theta
        theta = _iterate(best_theta, iters_per_component)
        lam = float(_contract_once(residual, theta) @ theta)
        if lam < 0.0:
            theta = -theta
            lam = -lam
        if lam < lambda_tol:
            raise NumericalError(
                f"no component found: best eigenvalue {lam:.3e} for component "
                f"{comp} is below tolerance {lambda_tol:.3e}"
            )
        eigenvalues[comp] = lam
        eigenvectors[:, comp] = theta
        residual -= lam * np.einsum("i,j,k->ijk", theta, theta, theta)
        residual_norms.append(float(np.linalg.norm(residual)))

    return DecompositionResult(
        eigenvalues=eigenvalues,
        eigenvectors=eigenvectors,
        residual_norms=residual_norms,
        input_norm=input_norm,
    )


def recover_feature_means(
    result: DecompositionResult,
    whitening: WhiteningData,
    num_blocks: int = 1,
) -> np.ndarray:
    """Per-state feature means from whitened eigenpairs.

    Column l is ``pinv(w.T) @ (lambda_l * v_l)``, sign-fixed so it sums to a
    non-negative total, clamped at zero, and renormalized so every cell block
    sums to 1. Clamped mass and sign flips are recorded on ``result``.
    """
    w = whitening.w
    dim, m = w.shape
    if result.eigenvectors.shape[0] != m:
        raise ParameterError(
            f"eigenvector dimension {result.eigenvectors.shape[0]} does not match "
            f"whitening rank {m}"
        )
    if dim % num_blocks != 0:
        raise ParameterError(f"num_blocks {num_blocks} does not divide dimension {dim}")
    raw = _pinv(w.T, RANK_RTOL) @ (result.eigenvectors * result.eigenvalues[None, :])
    flips = 0
    for col in range(raw.shape[1]):
        if raw[:, col].sum() < 0.0:
            raw[:, col] *= -1.0
            flips += 1
    clamp_mass = float(-raw[raw < 0.0].sum())
    np.maximum(raw, 0.0, out=raw)
    block = dim // num_blocks
    shaped = raw.reshape(num_blocks, block, raw.shape[1])
    sums = shaped.sum(axis=1)
    if np.any(sums <= 0.0):
        # a fully clamped block carries no information; fall back to uniform
        for b, col in zip(*np.nonzero(sums <= 0.0)):
            shaped[b, :, col] = 1.0 / block
            sums[b, col] = 1.0
    shaped /= sums[:, None, :]
    means = shaped.reshape(dim, raw.shape[1])
    result.feature_means = means
    result.clamp_mass = clamp_mass
    result.sign_flips = flips
    return means


def decompose_moments(
    moments: MomentSet,
    num_states: int,
    iters_per_component: int = 30,
    restarts: int = 10,
    seed: int | None = None,
    rank_rtol: float = RANK_RTOL,
    ridge: float = 0.0,
) -> tuple[DecompositionResult, WhiteningData, float]:
    """Full chain from finalized moments to per-state feature means.

    Returns the decomposition (with ``feature_means`` filled in), the
    whitening data, and the tensor asymmetry diagnostic.
    """
    s1, s3, g, asymmetry = symmetrize_moments(moments, num_states, rank_rtol, ridge=ridge)
    whitening, h = whiten(g, s3, moments.p32, num_states, rank_rtol, s1=s1)
    result = tensor_power_method(
        h,
        num_components=num_states,
        iters_per_component=iters_per_component,
        restarts=restarts,
        seed=seed,
    )
    recover_feature_means(result, whitening, num_blocks=moments.num_blocks)
    return result, whitening, asymmetry
