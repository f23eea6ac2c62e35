"""Matrix exponentiated gradient steps, exact and low-rank.

The exact step maps a dense positive-definite trace-1 matrix Z to
exp(log Z - eta * grad) normalized back to unit trace.  The low-rank step
keeps only the top-r spectral part of that exponential, renormalizes it
with weight 1 - eps, and spreads eps uniformly over the orthogonal
complement, so the iterate

    X = (1 - eps) V diag(lam) V^T + eps/(n-r) (I - V V^T)

is stored as (V, lam, eps) and never materialized.  One Lanczos solve of
r + 1 eigenpairs per step drives the update and simultaneously yields the
computable convergence certificate

    log((n-r) lambda_{r+1}(Y) / (eps * b)) <= 2 eps,

with b either the full trace of Y (dense-shadow mode) or the partial trace
over the top r + 1 eigenvalues (the cheap variant, always available).

Exponent eigenvalues are shifted by their maximum before exponentiation;
the update and the certificate ratio are invariant under that shift, so
overflow cannot occur.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .entropy import structured_log_trace
from .linalg import (
    ParameterError,
    SymmetricOperator,
    full_eigh,
    lanczos_top_r,
    symmetrize,
)


# ---------------------------------------------------------------------------
# iterates


@dataclass(frozen=True)
class LowRankIterate:
    """Structured point on the unit-trace PSD cone.

    Densifies to (1-eps) V diag(lam) V^T + eps/(n-r) (I - V V^T): trace 1,
    minimum eigenvalue eps/(n-r) > 0.  `lam` is a positive non-increasing
    vector summing to 1; `V` has orthonormal columns.
    """

    n: int
    r: int
    V: np.ndarray
    lam: np.ndarray
    eps: float

    def __post_init__(self):
        if not 1 <= self.r < self.n:
            raise ParameterError(f"need 1 <= r < n, got r={self.r}, n={self.n}")
        if self.V.shape != (self.n, self.r):
            raise ParameterError(f"V must be {self.n}x{self.r}, got {self.V.shape}")
        if not 0 < self.eps <= 0.75:
            raise ParameterError(f"eps must lie in (0, 3/4], got {self.eps}")
        gram_err = np.max(np.abs(self.V.T @ self.V - np.eye(self.r)))
        if gram_err > 1e-10:
            raise ParameterError(f"V columns not orthonormal (error {gram_err:.3e})")
        if abs(self.lam.sum() - 1.0) > 1e-10:
            raise ParameterError(f"lam must sum to 1, got {self.lam.sum()!r}")
        if np.any(np.diff(self.lam) > 0):
            raise ParameterError("lam must be sorted non-increasing")
        if not self.lam[-1] > 0:
            raise ParameterError("lam must be strictly positive")

    @property
    def tail_value(self) -> float:
        """The (n-r)-fold eigenvalue eps/(n-r) on the orthogonal complement."""
        return self.eps / (self.n - self.r)

    def densify(self) -> np.ndarray:
        """Materialize the n x n matrix.  Test and dense-shadow use only."""
        kept = (self.V * ((1.0 - self.eps) * self.lam - self.tail_value)) @ self.V.T
        return symmetrize(kept + self.tail_value * np.eye(self.n))

    def eigenvalues_full(self) -> np.ndarray:
        """All n eigenvalues, sorted non-increasing."""
        vals = np.concatenate([(1.0 - self.eps) * self.lam, np.full(self.n - self.r, self.tail_value)])
        return np.sort(vals)[::-1]


@dataclass(frozen=True)
class DenseIterate:
    """Dense positive-definite trace-1 matrix, the exact-step state."""

    X: np.ndarray

    def __post_init__(self):
        if abs(np.trace(self.X) - 1.0) > 1e-10:
            raise ParameterError(f"trace must be 1, got {np.trace(self.X)!r}")


def dense_iterate(x: np.ndarray) -> DenseIterate:
    return DenseIterate(X=symmetrize(x))


# ---------------------------------------------------------------------------
# schedules


@dataclass(frozen=True)
class StepConfig:
    """Step-size rule.  All supported rules evaluate to a constant eta."""

    kind: str
    eta: float = 0.0
    beta: float = 0.0
    R0: float = 0.0
    G: float = 0.0
    T: int = 0

    @classmethod
    def fixed(cls, eta: float) -> "StepConfig":
        if not eta > 0:
            raise ParameterError(f"eta must be positive, got {eta}")
        return cls(kind="fixed", eta=eta)

    @classmethod
    def one_over_beta(cls, beta: float) -> "StepConfig":
        if not beta > 0:
            raise ParameterError(f"beta must be positive, got {beta}")
        return cls(kind="one_over_beta", beta=beta)

    @classmethod
    def stochastic_fixed(cls, R0: float, G: float, T: int) -> "StepConfig":
        if not (R0 > 0 and G > 0 and T >= 1):
            raise ParameterError(f"need R0 > 0, G > 0, T >= 1, got {R0}, {G}, {T}")
        return cls(kind="stochastic_fixed", R0=R0, G=G, T=T)

    def eval(self, t: int) -> float:
        if self.kind == "fixed":
            return self.eta
        if self.kind == "one_over_beta":
            return 1.0 / self.beta
        if self.kind == "stochastic_fixed":
            return self.R0 / (2.0 * self.G * math.sqrt(self.T))
        raise ParameterError(f"unknown step rule {self.kind!r}")


def step_eval(config: StepConfig, t: int) -> float:
    return config.eval(t)


@dataclass(frozen=True)
class EpsilonSchedule:
    """Complement-mass schedule eps_t, clamped into (0, 3/4], non-increasing."""

    kind: str
    eps0_tilde: float = 0.0
    G: float = 0.0
    c: float = 0.0

    @classmethod
    def cubic_det(cls, eps0_tilde: float, G: float, c: float) -> "EpsilonSchedule":
        return cls(kind="cubic_det", eps0_tilde=eps0_tilde, G=G, c=c)

    @classmethod
    def cubic_det_general(cls, eps0_tilde: float, G: float, c: float) -> "EpsilonSchedule":
        return cls(kind="cubic_det_general", eps0_tilde=eps0_tilde, G=G, c=c)

    @classmethod
    def quadratic_stoch(cls, eps0_tilde: float, c: float) -> "EpsilonSchedule":
        return cls(kind="quadratic_stoch", eps0_tilde=eps0_tilde, c=c)

    @classmethod
    def experiment(cls, c: float = 10.0) -> "EpsilonSchedule":
        return cls(kind="experiment", c=c)

    def eval(self, t: int) -> float:
        if self.kind == "cubic_det":
            raw = self.eps0_tilde / (2.0 * max(self.G**2, 1.0)) / (t + 1 + self.c) ** 3
        elif self.kind == "cubic_det_general":
            raw = 3.0 * self.eps0_tilde / (2.0 * max(self.G**2, 1.0)) / (t + self.c + 1) ** 3
        elif self.kind == "quadratic_stoch":
            raw = (9.0 / 32.0) * self.eps0_tilde / (t + self.c + 1) ** 2
        elif self.kind == "experiment":
            raw = (3.0 / 5.0) / (t + self.c + 1) ** 2
        else:
            raise ParameterError(f"unknown epsilon schedule {self.kind!r}")
        return min(raw, 0.75)


def eps_schedule_eval(schedule: EpsilonSchedule, t: int) -> float:
    return schedule.eval(t)


# ---------------------------------------------------------------------------
# certificates


@dataclass(frozen=True)
class CertificateRecord:
    """One step's certificate evaluation against the threshold 2 eps.

    The cheap left-hand side replaces the full trace b of the exponential
    by the partial trace over its top r + 1 eigenvalues, so
    lhs_cheap >= lhs_full and a holding cheap certificate implies the full
    one.  Full-side fields are None outside dense-shadow mode.
    """

    iteration: int | None
    lhs_cheap: float
    holds_cheap: bool
    threshold: float
    lhs_full: float | None = None
    holds_full: bool | None = None


def _certificate_lhs(lam_rp1: float, b: float, eps: float, n: int, r: int) -> float:
    if not b > 0:
        raise ParameterError(f"partial trace must be positive, got {b}")
    if lam_rp1 < 0:
        raise ParameterError(f"lambda_(r+1) must be non-negative, got {lam_rp1}")
    if lam_rp1 == 0.0:
        return -math.inf
    return math.log((n - r) * lam_rp1 / (eps * b))


def certificate_cheap(
    lambda_r_plus_1: float, b_r_plus_1: float, eps: float, n: int, r: int, iteration: int | None = None
) -> CertificateRecord:
    """Certificate from the top r+1 eigenvalues only (always computable)."""
    lhs = _certificate_lhs(lambda_r_plus_1, b_r_plus_1, eps, n, r)
    return CertificateRecord(
        iteration=iteration, lhs_cheap=lhs, holds_cheap=lhs <= 2.0 * eps, threshold=2.0 * eps
    )


def certificate_full(
    y_spectrum: np.ndarray, eps: float, n: int, r: int, iteration: int | None = None
) -> CertificateRecord:
    """Certificate from the full spectrum of the exponential (shadow mode).

    Fills both sides from the same spectrum so the cheap-implies-full
    ordering holds exactly on every record.
    """
    y = np.sort(np.asarray(y_spectrum, dtype=float))[::-1]
    if y.size != n:
        raise ParameterError(f"expected a full spectrum of length {n}, got {y.size}")
    lhs_full = _certificate_lhs(float(y[r]), float(y.sum()), eps, n, r)
    lhs_cheap = _certificate_lhs(float(y[r]), float(y[: r + 1].sum()), eps, n, r)
    return CertificateRecord(
        iteration=iteration,
        lhs_cheap=lhs_cheap,
        holds_cheap=lhs_cheap <= 2.0 * eps,
        threshold=2.0 * eps,
        lhs_full=lhs_full,
        holds_full=lhs_full <= 2.0 * eps,
    )


# ---------------------------------------------------------------------------
# steps


def exact_meg_step(z: np.ndarray, grad: np.ndarray, eta: float) -> np.ndarray:
    """Exact update: exp(log Z - eta * grad) / trace of the same.

    Z must be symmetric positive definite with unit trace.  The exponent's
    eigenvalues are shifted by their max before exponentiation; the shift
    cancels in the normalization.
    """
    dec = full_eigh(z)
    if dec.eigenvalues[-1] <= 0:
        raise ParameterError(f"iterate must be positive definite, min eigenvalue {dec.eigenvalues[-1]:.3e}")
    log_z = (dec.eigenvectors * np.log(dec.eigenvalues)) @ dec.eigenvectors.T
    exponent = symmetrize(log_z - eta * np.asarray(grad, dtype=float))
    edec = full_eigh(exponent)
    y = np.exp(edec.eigenvalues - edec.eigenvalues[0])
    y /= y.sum()
    return symmetrize((edec.eigenvectors * y) @ edec.eigenvectors.T)


def logmap_operator(
    x: LowRankIterate, grad_apply: Callable[[np.ndarray], np.ndarray], eta: float
) -> SymmetricOperator:
    """The map u -> (log X - eta * grad) u without materializing log X.

    log X = V log((1-eps) diag(lam)) V^T + log(eps/(n-r)) (I - V V^T), so an
    application costs O(r n) plus one gradient application.  Accepts vectors
    and n x k blocks.
    """
    log_kept = np.log((1.0 - x.eps) * x.lam)
    log_tail = math.log(x.tail_value)

    def apply(u: np.ndarray) -> np.ndarray:
        coeff = x.V.T @ u
        if u.ndim == 1:
            kept = x.V @ (log_kept * coeff)
        else:
            kept = x.V @ (log_kept[:, None] * coeff)
        return kept + log_tail * (u - x.V @ coeff) - eta * grad_apply(u)

    return SymmetricOperator(x.n, apply)


@dataclass(frozen=True)
class LowRankStepResult:
    """Next iterate plus the certificate inputs measured during the step.

    `lambda_r_plus_1` and `b_r_plus_1` are reported after the max-shift of
    the exponent (their ratio, which the certificate uses, is
    shift-invariant); `shift` is the subtracted maximum.
    """

    iterate: LowRankIterate
    cert: CertificateRecord
    lambda_r_plus_1: float
    b_r_plus_1: float
    shift: float
    top_eigenvalues: np.ndarray | None = field(repr=False, default=None)


def lowrank_meg_step(
    x: LowRankIterate,
    grad_apply: Callable[[np.ndarray], np.ndarray],
    eta: float,
    eps_next: float,
    svd_tol: float = 1e-10,
    svd_seed: int = 0,
    svd_subspace: int | None = None,
) -> LowRankStepResult:
    """One low-rank update: keep the top-r part of exp(log X - eta grad).

    Computes r + 1 eigenpairs of the exponent via Lanczos (the extra one
    feeds the cheap certificate), exponentiates with the max-shift,
    renormalizes the kept mass to 1 - eps_next and spreads eps_next over
    the complement.
    """
    if not 0 < eps_next <= 0.75:
        raise ParameterError(f"eps_next must lie in (0, 3/4], got {eps_next}")
    op = logmap_operator(x, grad_apply, eta)
    top = lanczos_top_r(op, x.r + 1, tol=svd_tol, seed=svd_seed, subspace=svd_subspace)
    shift = float(top.eigenvalues[0])
    y = np.exp(top.eigenvalues - shift)  # non-increasing, y[0] == 1
    kept_mass = float(y[: x.r].sum())
    assert kept_mass > 1e-290, "kept mass vanished despite max-shift"
    lam = y[: x.r] / kept_mass
    lam = lam / lam.sum()
    nxt = LowRankIterate(n=x.n, r=x.r, V=top.eigenvectors[:, : x.r], lam=lam, eps=eps_next)
    lam_rp1 = float(y[x.r])
    b_rp1 = float(y.sum())
    cert = certificate_cheap(lam_rp1, b_rp1, eps_next, x.n, x.r)
    return LowRankStepResult(
        iterate=nxt,
        cert=cert,
        lambda_r_plus_1=lam_rp1,
        b_r_plus_1=b_rp1,
        shift=shift,
        top_eigenvalues=y,
    )


def shadow_lowrank_step(
    x_dense: np.ndarray, grad_dense: np.ndarray, eta: float, eps_next: float, r: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Dense recomputation of the low-rank update, for oracle comparisons.

    Works entirely through full eigendecompositions of the densified
    iterate: returns (low-rank updated matrix, exact updated matrix,
    shifted spectrum of the exponential).
    """
    dec = full_eigh(x_dense)
    log_x = (dec.eigenvectors * np.log(np.maximum(dec.eigenvalues, 1e-300))) @ dec.eigenvectors.T
    edec = full_eigh(symmetrize(log_x - eta * grad_dense))
    y = np.exp(edec.eigenvalues - edec.eigenvalues[0])
    v = edec.eigenvectors
    exact = symmetrize((v * (y / y.sum())) @ v.T)
    kept = v[:, :r]
    low = (1.0 - eps_next) * (kept * (y[:r] / y[:r].sum())) @ kept.T
    low += eps_next / (x_dense.shape[0] - r) * (np.eye(x_dense.shape[0]) - kept @ kept.T)
    return symmetrize(low), exact, y


# ---------------------------------------------------------------------------
# initialization and diagnostics


def warm_start_wrap(V0: np.ndarray, lam0: np.ndarray, eps0: float) -> LowRankIterate:
    """Blend a rank-r trace-1 start (V0, lam0) with eps0/n times the identity.

    The result (1 - eps0) V0 diag(lam0) V0^T + (eps0/n) I is re-expressed in
    canonical structured form: the complement mass becomes
    eps' = eps0 (n-r)/n and the kept eigenvalues are renormalized.
    """
    if not 0 < eps0 <= 0.75:
        raise ParameterError(f"eps0 must lie in (0, 3/4], got {eps0}")
    V0 = np.asarray(V0, dtype=float)
    lam0 = np.asarray(lam0, dtype=float).ravel()
    n, r = V0.shape
    if abs(lam0.sum() - 1.0) > 1e-10 or not np.all(lam0 > 0):
        raise ParameterError("lam0 must be strictly positive and sum to 1")
    order = np.argsort(-lam0, kind="stable")
    lam0, V0 = lam0[order], V0[:, order]
    eps_prime = eps0 * (n - r) / n
    lam = ((1.0 - eps0) * lam0 + eps0 / n) / (1.0 - eps_prime)
    lam = lam / lam.sum()
    return LowRankIterate(n=n, r=r, V=V0, lam=lam, eps=eps_prime)


@dataclass(frozen=True)
class DiagnosticsParams:
    """User-supplied constants for the radius and warm-start diagnostics."""

    delta: float
    r_star: int
    lam_rstar: float
    G: float
    beta: float
    xi: float = 0.0
    sigma: float = 0.0
    L: int = 1

    def __post_init__(self):
        if self.r_star < 1:
            raise ParameterError("r_star must be >= 1")
        for name in ("delta", "lam_rstar", "G", "beta", "xi", "sigma"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be non-negative")


def radius_bound(p: DiagnosticsParams, eta: float, eps_prev: float, eps: float) -> float:
    """Radius inside which the low-rank step provably tracks the exact one.

    Returns the bound on sqrt(B(X*, X)); a negative value means the
    guarantee is vacuous at these parameters.  Logged as a diagnostic,
    never enforced.
    """
    if not p.lam_rstar > 0:
        raise ParameterError("lam_rstar must be positive")
    front = 2.0 * p.beta + (1.0 + 2.0 * math.sqrt(2.0 * p.r_star) / p.lam_rstar) * p.G
    slack = p.delta - math.log(eps_prev / eps) / eta + 2.0 * eps / eta - 2.0 * p.xi
    return slack / (math.sqrt(2.0) * front)


def _compact_decomposition(x: np.ndarray, rank_tol: float = 1e-10):
    dec = full_eigh(x)
    w = dec.eigenvalues
    cut = w > rank_tol * max(1.0, float(w[0]))
    return w[cut], dec.eigenvectors[:, cut]


def warm_start_check(
    x0: np.ndarray, x_star: np.ndarray, eps: float, radius: float
) -> tuple[float, float | None, bool, bool | None]:
    """Evaluate the warm-start admissibility conditions against a known X*.

    Returns (lhs_highrank, lhs_equalrank or None, pass_highrank,
    pass_equalrank or None); a condition passes when its left-hand side is
    at most radius**2.  The equal-rank variant is evaluated only when
    rank(x0) == rank(x_star).  Test/diagnostic facility: X* is unknown in
    production runs.
    """
    x0 = symmetrize(x0)
    x_star = symmetrize(x_star)
    w_star, v_star = _compact_decomposition(x_star)
    w0, v0 = _compact_decomposition(x0)
    r_star, r0 = w_star.size, w0.size
    if r0 < r_star:
        raise ParameterError(f"rank(x0)={r0} is below rank(x_star)={r_star}")
    n = x0.shape[0]
    entropy_star = float(np.sum(w_star * np.log(w_star)))
    mass = np.einsum("ij,ij->j", v0, x_star @ v0)
    cross = float(np.sum(mass * np.log(w0)))
    overlap = float(np.sum((v_star.T @ v0) ** 2))
    lhs_high = entropy_star - cross + w_star[0] * math.log(n / eps) * (r_star - overlap) + 4.0 * eps
    lhs_equal = None
    if r0 == r_star:
        frob = float(np.sum((x_star - x0) ** 2))
        lhs_equal = (
            entropy_star
            - cross
            + 2.0 * w_star[0] / w_star[-1] ** 2 * math.log(n / eps) * frob
            + 4.0 * eps
        )
    r2 = radius**2
    return lhs_high, lhs_equal, lhs_high <= r2, (None if lhs_equal is None else lhs_equal <= r2)


def merge_certificates(cheap: CertificateRecord, full: CertificateRecord) -> CertificateRecord:
    """Attach the full-side fields of one record to another's cheap side."""
    return replace(cheap, lhs_full=full.lhs_full, holds_full=full.holds_full)
