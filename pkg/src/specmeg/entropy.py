"""Von Neumann entropy geometry on the unit-trace PSD cone.

Entropy, the induced Bregman distance (the matrix KL divergence
Tr(X log X - X log Y) on trace-1 arguments), its closed-form evaluation
against structured low-rank iterates, and the spectral/nuclear norms the
convergence bounds are stated in.

Eigenvalues are clamped at EIG_CLAMP before logs.  The 0 log 0 = 0
convention applies to the first argument; a second argument with
non-positive spectrum where the first argument carries mass yields an
infinite distance rather than NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import full_eigh, symmetrize

EIG_CLAMP = 1e-300
_MASS_TOL = 1e-14


class NotPSDError(ValueError):
    """Argument has a significantly negative eigenvalue."""


@dataclass(frozen=True)
class BregmanValue:
    """Bregman distance value with degeneracy flags.

    `finite` is False exactly when the second argument has a non-positive
    direction carrying mass of the first.  `clamped` marks values whose
    magnitude is dominated by the eigenvalue clamp (still finite).
    """

    value: float
    finite: bool = True
    clamped: bool = False

    def __float__(self) -> float:
        return self.value


def _psd_spectrum(x: np.ndarray, name: str = "X") -> np.ndarray:
    dec = full_eigh(x)
    w = dec.eigenvalues
    top = max(1e-30, float(np.abs(w).max()))
    if w.min() < -1e-8 * top:
        raise NotPSDError(f"{name} has eigenvalue {w.min():.3e} < -1e-8 * ||{name}||_2")
    return w


def _entropy_sum(w: np.ndarray) -> float:
    """Sum of lambda * log(lambda) with 0 log 0 = 0."""
    w = np.maximum(w, 0.0)
    mask = w > EIG_CLAMP
    return float(np.sum(w[mask] * np.log(w[mask])))


def von_neumann_entropy(x: np.ndarray) -> float:
    """Tr(X log X - X) for PSD X, computed on the spectrum."""
    w = _psd_spectrum(x)
    return _entropy_sum(w) - float(np.sum(np.maximum(w, 0.0)))


def _check_unit_trace(x: np.ndarray, name: str) -> None:
    tr = float(np.trace(x))
    if abs(tr - 1.0) > 1e-8:
        raise ValueError(f"{name} must have unit trace, got {tr!r}")


def bregman(x: np.ndarray, y: np.ndarray) -> BregmanValue:
    """Tr(X log X - X log Y) for trace-1 PSD X and (near) PD Y.

    X and Y are diagonalized separately; no simultaneous diagonalization
    is assumed.  Eigenvalues of Y at or below the clamp that carry X-mass
    set the `clamped` flag; non-positive ones make the value infinite.
    """
    x = symmetrize(x)
    y = symmetrize(y)
    _check_unit_trace(x, "X")
    _check_unit_trace(y, "Y")
    wx = _psd_spectrum(x, "X")
    dec_y = full_eigh(y)
    wy = dec_y.eigenvalues
    mass = np.einsum("ij,ji->i", dec_y.eigenvectors.T @ x, dec_y.eigenvectors)
    heavy = mass > _MASS_TOL
    if np.any(heavy & (wy <= 0.0)):
        return BregmanValue(value=math.inf, finite=False, clamped=True)
    clamped = bool(np.any(heavy & (wy <= EIG_CLAMP)))
    cross = float(np.sum(mass * np.log(np.maximum(wy, EIG_CLAMP))))
    return BregmanValue(value=_entropy_sum(wx) - cross, finite=True, clamped=clamped)


def structured_entropy_sum(lam: np.ndarray, eps: float, n: int) -> float:
    """Tr(X log X) of (1-eps) V diag(lam) V^T + eps/(n-r) (I - V V^T)."""
    r = lam.size
    kept = (1.0 - eps) * lam
    tail = eps / (n - r)
    return _entropy_sum(kept) + eps * math.log(tail)


def structured_log_trace(x, y) -> float:
    """Tr(X log Y) where Y is a structured low-rank iterate.

    Uses log Y = V (L - l I) V^T + l I with L = log((1-eps) lam) and
    l = log(eps/(n-r)), so only projections of X onto range(V) are needed.
    X may be a dense trace-1 matrix or another structured iterate.
    """
    log_kept = np.log((1.0 - y.eps) * y.lam)
    log_tail = math.log(y.eps / (y.n - y.r))
    if isinstance(x, np.ndarray):
        xv = x @ y.V
        mass = np.einsum("ij,ij->j", y.V, xv)
        trace_x = float(np.trace(x))
    else:
        cross = x.V.T @ y.V  # (r_x, r_y)
        sq = cross**2
        mass = (1.0 - x.eps) * (x.lam @ sq) + (x.eps / (x.n - x.r)) * (1.0 - sq.sum(axis=0))
        trace_x = 1.0
    return float(np.sum(mass * (log_kept - log_tail))) + log_tail * trace_x


def bregman_structured(x, y) -> BregmanValue:
    """Tr(X log X - X log Y) with Y in structured low-rank form.

    Matches the dense `bregman` on densified arguments but costs
    O(r n^2) (dense X) or O(r^2 n) (structured X) instead of O(n^3).
    """
    if not y.eps > 0:
        raise ValueError("structured second argument must have eps > 0")
    if isinstance(x, np.ndarray):
        x = symmetrize(x)
        _check_unit_trace(x, "X")
        own = _entropy_sum(_psd_spectrum(x, "X"))
    else:
        own = structured_entropy_sum(x.lam, x.eps, x.n)
    return BregmanValue(value=own - structured_log_trace(x, y), finite=True)


def spectral_norm(a: np.ndarray) -> float:
    """Largest singular value of a symmetric matrix (max |eigenvalue|)."""
    return float(np.abs(full_eigh(a).eigenvalues).max())


def nuclear_distance(x: np.ndarray, y: np.ndarray) -> float:
    """Nuclear norm of X - Y for symmetric arguments (sum |eigenvalues|)."""
    return float(np.abs(full_eigh(np.asarray(x) - np.asarray(y)).eigenvalues).sum())
