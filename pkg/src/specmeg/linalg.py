"""Dense and matrix-free symmetric linear algebra.

Provides the eigen-machinery the solvers sit on: a full symmetric
eigendecomposition used as the oracle / dense baseline, a Lanczos routine
(full reorthogonalization, thick restarts) that extracts the algebraically
largest eigenpairs of an abstract symmetric operator without materializing
it, Euclidean projection onto the scaled simplex, and Gram-Schmidt
orthonormalization.

Eigenvalues are always reported sorted non-increasing.  "Top r" means
algebraically largest, not largest magnitude: the operators fed to the
Lanczos routine are indefinite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class ParameterError(ValueError):
    """A structurally invalid argument (bad rank, bad shape)."""


class EighError(RuntimeError):
    """Dense eigendecomposition failed to converge."""


class RankDeficiencyError(ValueError):
    """Orthonormalization hit a numerically dependent column."""

    def __init__(self, column: int, norm: float):
        self.column = column
        self.norm = norm
        super().__init__(
            f"column {column} is numerically dependent on the previous ones "
            f"(residual norm {norm:.3e})"
        )


class LanczosError(RuntimeError):
    """Lanczos did not reach the requested residual tolerance.

    Carries the best residual norms seen so the caller can decide whether
    to retry with a larger subspace.
    """

    def __init__(self, message: str, residual_norms: np.ndarray):
        self.residual_norms = residual_norms
        super().__init__(message)


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Return (A + A^T)/2 as a float64 array."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ParameterError(f"expected a square matrix, got shape {a.shape}")
    return 0.5 * (a + a.T)


@dataclass(frozen=True)
class SpectralDecomposition:
    """Full eigendecomposition, eigenvalues sorted non-increasing."""

    eigenvalues: np.ndarray  # (n,)
    eigenvectors: np.ndarray  # (n, n), columns aligned with eigenvalues


@dataclass(frozen=True)
class TopREigen:
    """The r algebraically largest eigenpairs of a symmetric operator."""

    r: int
    eigenvalues: np.ndarray  # (r,) non-increasing
    eigenvectors: np.ndarray  # (n, r) orthonormal columns
    residual_norms: np.ndarray  # (r,) per-pair ||A v - lambda v||


class SymmetricOperator:
    """A symmetric linear map given only through vector/block application.

    `apply` accepts a vector of shape (n,) or a block of shape (n, k) and
    returns the image with the same shape.  Symmetry is the caller's
    contract; tests probe it with random vector pairs.
    """

    def __init__(self, dim: int, apply_fn: Callable[[np.ndarray], np.ndarray]):
        self.dim = int(dim)
        self._apply = apply_fn

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self._apply(u)

    @classmethod
    def from_dense(cls, a: np.ndarray) -> "SymmetricOperator":
        a = symmetrize(a)
        return cls(a.shape[0], lambda u: a @ u)

    def to_dense(self) -> np.ndarray:
        """Materialize by applying to the identity.  Test/shadow use only."""
        return symmetrize(self.apply(np.eye(self.dim)))


def full_eigh(a: np.ndarray) -> SpectralDecomposition:
    """Full eigendecomposition of a symmetric matrix, sorted non-increasing.

    Symmetrizes defensively before factorizing.  Backed by LAPACK; a
    convergence failure surfaces as :class:`EighError` naming the dimension.
    """
    a = symmetrize(a)
    n = a.shape[0]
    try:
        w, v = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise EighError(f"eigendecomposition of a {n}x{n} matrix did not converge: {exc}") from exc
    order = np.argsort(-w, kind="stable")
    return SpectralDecomposition(eigenvalues=w[order], eigenvectors=v[:, order])


def _orthogonalize_against(basis: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Remove the components of v lying in span(basis), twice for stability."""
    if basis.shape[1]:
        v = v - basis @ (basis.T @ v)
        v = v - basis @ (basis.T @ v)
    return v


def lanczos_top_r(
    op: SymmetricOperator,
    r: int,
    tol: float = 1e-10,
    max_iter: int | None = None,
    seed: int = 0,
    subspace: int | None = None,
    restarts: int = 12,
) -> TopREigen:
    """Algebraically largest r eigenpairs of a symmetric operator.

    Lanczos with full reorthogonalization.  The Krylov basis is grown to
    ``min(n, max(2r + 10, 30))`` vectors, Rayleigh-Ritz is performed on the
    cached applications, and if the per-pair residuals have not reached
    ``tol`` relative to the operator-norm estimate the basis is compressed
    onto the leading Ritz vectors and extended again (thick restart), up to
    `restarts` times.  Deterministic given `seed`.  Interior eigenvalues of
    unstructured dense matrices can need most of the restart budget; the
    clustered indefinite operators produced by the solvers converge in one
    or two rounds.

    Raises :class:`ParameterError` for r outside [1, n) and
    :class:`LanczosError` (carrying the best residuals) when the tolerance
    is not reached within the application budget.
    """
    n = op.dim
    if not 1 <= r < n:
        raise ParameterError(f"need 1 <= r < n, got r={r}, n={n}")
    m = subspace if subspace is not None else min(n, max(2 * r + 10, 30))
    m = min(n, max(m, r + 1))
    if max_iter is None:
        max_iter = restarts * m
    rng = np.random.default_rng(seed)

    basis = np.zeros((n, 0))
    images = np.zeros((n, 0))
    applies = 0

    def fresh_direction() -> np.ndarray | None:
        for _ in range(20):
            v = _orthogonalize_against(basis, rng.standard_normal(n))
            nv = np.linalg.norm(v)
            if nv > 1e-8 * np.sqrt(n):
                return v / nv
        return None

    def push(v: np.ndarray) -> None:
        nonlocal basis, images, applies
        basis = np.column_stack([basis, v])
        images = np.column_stack([images, op.apply(v)])
        applies += 1

    v0 = fresh_direction()
    assert v0 is not None
    push(v0)

    best_resid = np.full(r, np.inf)
    for _ in range(restarts):
        # Krylov expansion: next direction is the image of the newest vector.
        while basis.shape[1] < m and applies < max_iter + 1:
            w = _orthogonalize_against(basis, images[:, -1].copy())
            nw = np.linalg.norm(w)
            scale = max(1.0, float(np.abs(images).max()))
            if nw <= 1e-13 * scale:
                if basis.shape[1] >= n:
                    break
                v = fresh_direction()
                if v is None:
                    break
                push(v)
            else:
                push(w / nw)

        # Rayleigh-Ritz on the accumulated subspace; images give the
        # projected matrix for free, no extra operator applications.
        h = symmetrize(basis.T @ images)
        w_all, s = np.linalg.eigh(h)
        order = np.argsort(-w_all, kind="stable")
        theta = w_all[order][:r]
        ritz = basis @ s[:, order[:r]]
        ritz_images = images @ s[:, order[:r]]
        resid = np.linalg.norm(ritz_images - ritz * theta, axis=0)
        if resid.max() < best_resid.max():
            best_resid = resid
        norm_est = max(1.0, float(np.abs(w_all).max()))
        if np.all(resid <= tol * norm_est) or basis.shape[1] >= n:
            return TopREigen(r=r, eigenvalues=theta, eigenvectors=ritz, residual_norms=resid)
        if applies >= max_iter:
            break

        # Thick restart: compress onto the leading Ritz vectors and keep
        # expanding from the image of the worst-converged one.
        keep = min(basis.shape[1], r + 2)
        kept = order[:keep]
        basis = basis @ s[:, kept]
        images = images @ s[:, kept]
        worst = int(np.argmax(resid))
        w = _orthogonalize_against(basis, images[:, worst].copy())
        nw = np.linalg.norm(w)
        if nw > 1e-13 * max(1.0, float(np.abs(images).max())):
            push(w / nw)
        else:
            v = fresh_direction()
            if v is None:
                break
            push(v)

    raise LanczosError(
        f"residual tolerance {tol:g} not reached after {applies} applications "
        f"(best residuals {np.array2string(best_resid, precision=3)})",
        residual_norms=best_resid,
    )


def project_simplex(z: np.ndarray, tau: float = 1.0) -> np.ndarray:
    """Euclidean projection of z onto {w >= 0, sum(w) = tau}.

    Sort-and-threshold: find the largest k with
    z_(k) - (sum of top k - tau)/k > 0 and clip at that threshold.
    """
    z = np.asarray(z, dtype=float).ravel()
    if z.size < 1:
        raise ParameterError("need at least one coordinate")
    if not tau > 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    s = np.sort(z)[::-1]
    cumsum = np.cumsum(s)
    ks = np.arange(1, z.size + 1)
    thresholds = (cumsum - tau) / ks
    k = int(np.max(np.nonzero(s - thresholds > 0)[0])) + 1
    theta = (cumsum[k - 1] - tau) / k
    return np.maximum(z - theta, 0.0)


def orthonormalize(b: np.ndarray) -> np.ndarray:
    """Gram-Schmidt orthonormalization of the columns of b.

    Each column is orthogonalized twice against the accepted ones; a column
    whose residual collapses below working precision raises
    :class:`RankDeficiencyError` naming its index.
    """
    b = np.asarray(b, dtype=float)
    if b.ndim != 2:
        raise ParameterError(f"expected a 2-d block, got shape {b.shape}")
    n, k = b.shape
    q = np.zeros((n, 0))
    col_scale = max(1.0, float(np.abs(b).max()))
    for j in range(k):
        v = _orthogonalize_against(q, b[:, j].copy())
        nv = np.linalg.norm(v)
        if nv <= 1e-12 * col_scale:
            raise RankDeficiencyError(column=j, norm=float(nv))
        q = np.column_stack([q, v / nv])
    return q
