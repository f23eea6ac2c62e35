"""Low-rank matrix recovery from quadratic measurements.

The data is m pairs of unit vectors (a_i, b_i), noisy observations
y_i of a_i^T M b_i for a rank r_true ground truth M, and a trace budget
tau.  The objective is

    f(X) = 1/2 sum_i (a_i^T X b_i - y_i)^2      over {X >= 0, Tr X = tau}.

The solvers always operate on the unit-trace cone; the trace budget is
absorbed by the effective objective g(X) = f(tau X) with gradient
tau * grad f(tau X), which :class:`RecoveryObjective` realizes.  Values and
gradients of structured low-rank iterates are evaluated from their factors;
a dense path backs every structured computation for oracle checks.

Module-level functions (`qm_value`, `qm_grad_apply`, ...) work on the raw
objective f at the tau scale; the extra tau factor on gradients lives only
in the contract class.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .linalg import (
    ParameterError,
    SymmetricOperator,
    full_eigh,
    lanczos_top_r,
    project_simplex,
    symmetrize,
)
from .meg import LowRankIterate

_MAGIC = b"SPECMEG-QMI v1\n"


@dataclass(frozen=True)
class QuadMeasInstance:
    """One recovery problem: measurement pairs, observations, ground truth.

    The ground truth is M = n * V_factor V_factor^T with ||V_factor||_F = 1,
    so Tr M = n.  Noise is a fixed-direction perturbation of relative
    magnitude kappa: ||y - y0|| = kappa ||y0||.
    """

    n: int
    r_true: int
    m: int
    a: np.ndarray  # (m, n), unit rows
    b: np.ndarray  # (m, n), unit rows
    y0: np.ndarray  # (m,) clean measurements
    y: np.ndarray  # (m,) noisy measurements
    V_factor: np.ndarray  # (n, r_true), unit Frobenius norm
    kappa: float
    tau: float
    seed: int

    def ground_truth(self) -> np.ndarray:
        """Materialize M = n V V^T.  Test and shadow use only."""
        return self.n * self.V_factor @ self.V_factor.T


def _unit_rows(g: np.ndarray) -> np.ndarray:
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def generate_instance(
    n: int,
    r_true: int,
    kappa: float = 0.5,
    tau_fraction: float = 0.5,
    seed: int = 0,
    m: int | None = None,
) -> QuadMeasInstance:
    """Draw an instance: Gaussian factor, spherical measurement pairs.

    m defaults to 20 * n * r_true; tau = tau_fraction * Tr(M).
    """
    if n < 2 or not 1 <= r_true < n:
        raise ParameterError(f"need n >= 2 and 1 <= r_true < n, got n={n}, r_true={r_true}")
    rng = np.random.default_rng(seed)
    if m is None:
        m = 20 * n * r_true
    v = rng.standard_normal((n, r_true))
    v /= np.linalg.norm(v)
    a = _unit_rows(rng.standard_normal((m, n)))
    b = _unit_rows(rng.standard_normal((m, n)))
    # y0_i = a_i^T M b_i = n (a_i^T V)(V^T b_i)
    y0 = n * np.einsum("ij,ij->i", a @ v, b @ v)
    if kappa == 0.0:
        y = y0.copy()
    else:
        noise_dir = rng.standard_normal(m)
        noise_dir /= np.linalg.norm(noise_dir)
        y = y0 + kappa * np.linalg.norm(y0) * noise_dir
    tau = tau_fraction * n
    return QuadMeasInstance(
        n=n, r_true=r_true, m=m, a=a, b=b, y0=y0, y=y, V_factor=v, kappa=kappa, tau=tau, seed=seed
    )


# ---------------------------------------------------------------------------
# measurements and residuals


def _measure_structured(inst: QuadMeasInstance, x: LowRankIterate, tau: float) -> np.ndarray:
    """a_i^T (tau X) b_i for a structured iterate, O(m r) after two m x r products."""
    av = inst.a @ x.V
    bv = inst.b @ x.V
    ab = np.einsum("ij,ij->i", inst.a, inst.b)
    cross = np.einsum("ij,ij->i", av, bv)
    kept = np.einsum("ij,j,ij->i", av, x.lam, bv)
    return tau * ((1.0 - x.eps) * kept + x.tail_value * (ab - cross))


def _measure_dense(inst: QuadMeasInstance, x_tau: np.ndarray) -> np.ndarray:
    return np.einsum("ij,jk,ik->i", inst.a, x_tau, inst.b, optimize=True)


def qm_residuals(inst: QuadMeasInstance, x, tau: float | None = None) -> np.ndarray:
    """Residuals a_i^T (tau X) b_i - y_i; X is a unit-trace iterate."""
    tau = inst.tau if tau is None else tau
    if isinstance(x, LowRankIterate):
        return _measure_structured(inst, x, tau) - inst.y
    return _measure_dense(inst, tau * symmetrize(x)) - inst.y


def qm_value(inst: QuadMeasInstance, x, tau: float | None = None) -> float:
    """f(tau X) = 1/2 sum of squared residuals."""
    res = qm_residuals(inst, x, tau)
    return 0.5 * float(res @ res)


def qm_value_dense(inst: QuadMeasInstance, x_tau: np.ndarray) -> float:
    """f at an arbitrary symmetric matrix on the original (tau) scale."""
    res = _measure_dense(inst, symmetrize(x_tau)) - inst.y
    return 0.5 * float(res @ res)


def qm_grad_apply(inst: QuadMeasInstance, x, u: np.ndarray, tau: float | None = None) -> np.ndarray:
    """Apply grad f(tau X) = sum_i res_i sym(a_i b_i^T) to a vector or block.

    O(m n) per application; residuals are recomputed here, so loops should
    go through :meth:`RecoveryObjective.grad_operator` which caches them.
    """
    res = qm_residuals(inst, x, tau)
    return _apply_measurement_gradient(inst.a, inst.b, res, u)


def _apply_measurement_gradient(a: np.ndarray, b: np.ndarray, res: np.ndarray, u: np.ndarray) -> np.ndarray:
    if u.ndim == 1:
        return 0.5 * (a.T @ (res * (b @ u)) + b.T @ (res * (a @ u)))
    return 0.5 * (a.T @ (res[:, None] * (b @ u)) + b.T @ (res[:, None] * (a @ u)))


def _dense_measurement_gradient(a: np.ndarray, b: np.ndarray, res: np.ndarray) -> np.ndarray:
    return symmetrize(a.T @ (res[:, None] * b))


def qm_grad_dense(inst: QuadMeasInstance, x, tau: float | None = None) -> np.ndarray:
    """Materialized grad f(tau X), n x n."""
    res = qm_residuals(inst, x, tau)
    return _dense_measurement_gradient(inst.a, inst.b, res)


# ---------------------------------------------------------------------------
# the solver-facing contract (unit-trace scale)


class RecoveryObjective:
    """Effective objective g(X) = f(tau X) on the unit-trace cone.

    grad_apply applies tau * grad f(tau X); `grad_operator` caches the
    residuals of the current iterate so Lanczos inner loops pay one set of
    measurement products per step.  At desk scale (n <= dense_cap) the
    gradient matrix is materialized once per step, which is much faster
    than repeated O(m n) applications.
    """

    def __init__(self, inst: QuadMeasInstance, smoothness_hint: float, dense_cap: int = 1024):
        self.inst = inst
        self.dim = inst.n
        self.tau = inst.tau
        self.smoothness_hint = smoothness_hint
        self.dense_cap = dense_cap
        self._cache_key: object = None
        self._cache_res: np.ndarray | None = None

    @classmethod
    def preset_beta(cls, n: int, r: int) -> float:
        """Smoothness preset 0.4 sqrt(r n) used by the experiment protocol."""
        return 0.4 * math.sqrt(r * n)

    def residuals(self, x) -> np.ndarray:
        if self._cache_key is not x:
            self._cache_res = qm_residuals(self.inst, x)
            self._cache_key = x
        return self._cache_res

    def value(self, x) -> float:
        res = self.residuals(x)
        return 0.5 * float(res @ res)

    def grad_operator(self, x) -> SymmetricOperator:
        """tau * grad f(tau X) as a symmetric operator, residuals fixed."""
        res = self.residuals(x)
        return self._operator_from_residuals(res, weight=self.tau)

    def _operator_from_residuals(self, res: np.ndarray, weight: float) -> SymmetricOperator:
        inst = self.inst
        if inst.n <= self.dense_cap:
            g = weight * _dense_measurement_gradient(inst.a, inst.b, res)
            return SymmetricOperator(inst.n, lambda u: g @ u)
        return SymmetricOperator(
            inst.n, lambda u: weight * _apply_measurement_gradient(inst.a, inst.b, res, u)
        )

    def grad_apply(self, x, u: np.ndarray) -> np.ndarray:
        return self.grad_operator(x).apply(u)

    def grad_dense(self, x) -> np.ndarray:
        """Materialized tau * grad f(tau X).  Dense-shadow path."""
        return self.tau * _dense_measurement_gradient(self.inst.a, self.inst.b, self.residuals(x))


# ---------------------------------------------------------------------------
# stochastic oracle


class StochasticOracle:
    """Mini-batch gradient estimator over the measurements.

    Batches of size L are drawn uniformly with replacement and scaled by
    m/L, which keeps the estimator unbiased.  The degenerate full batch
    L == m uses every index exactly once so it reproduces the deterministic
    gradient bit for bit.
    """

    def __init__(self, objective: RecoveryObjective, L: int, seed: int = 0):
        if L < 1:
            raise ParameterError(f"mini-batch size must be >= 1, got {L}")
        self.objective = objective
        self.inst = objective.inst
        self.L = L
        self.rng = np.random.default_rng(seed)

    def sample_batch(self) -> np.ndarray:
        if self.L == self.inst.m:
            return np.arange(self.inst.m)
        return self.rng.integers(0, self.inst.m, size=self.L)

    def grad_operator(self, x, batch: np.ndarray) -> SymmetricOperator:
        """tau * batch estimate of grad f(tau X) as a symmetric operator."""
        inst = self.inst
        res = self.objective.residuals(x)[batch]
        scale = inst.m / batch.size
        a, b = inst.a[batch], inst.b[batch]
        if inst.n <= self.objective.dense_cap:
            g = self.objective.tau * scale * _dense_measurement_gradient(a, b, res)
            return SymmetricOperator(inst.n, lambda u: g @ u)
        return SymmetricOperator(
            inst.n,
            lambda u: self.objective.tau * scale * _apply_measurement_gradient(a, b, res, u),
        )


def stochastic_grad_apply(oracle: StochasticOracle, x, u: np.ndarray, batch: np.ndarray) -> np.ndarray:
    """Apply the mini-batch estimate of grad f(tau X): (m/L) sum over the batch.

    Raw objective scale (no leading tau), matching `qm_grad_apply`.
    """
    batch = np.asarray(batch)
    if batch.size < 1:
        raise ParameterError("batch must contain at least one index")
    inst = oracle.inst
    res = qm_residuals(inst, x)[batch]
    scale = inst.m / batch.size
    return scale * _apply_measurement_gradient(inst.a[batch], inst.b[batch], res, u)


# ---------------------------------------------------------------------------
# initialization, gap, error


def spectral_init(inst: QuadMeasInstance, r: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Start factor from the top eigenvectors of minus the gradient at a random probe.

    Draws a Gaussian n x r probe U with unit Frobenius norm, takes the top-r
    eigenpairs of -grad f(tau U U^T), projects the negated eigenvalues onto
    the tau-simplex, and renormalizes the weights to sum to one (the trace
    budget is carried by the harness scaling).  Zero weights are lifted to
    1e-12 so the structured iterate stays strictly positive on its range.
    """
    if not 1 <= r < inst.n:
        raise ParameterError(f"need 1 <= r < n, got r={r}, n={inst.n}")
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((inst.n, r))
    u /= np.linalg.norm(u)
    probe = inst.tau * u @ u.T
    res = _measure_dense(inst, probe) - inst.y
    grad = _dense_measurement_gradient(inst.a, inst.b, res)
    top = lanczos_top_r(SymmetricOperator.from_dense(-grad), r, seed=seed)
    weights = init_weights_from_top_eigs(top.eigenvalues, inst.tau)
    return top.eigenvectors, weights


def init_weights_from_top_eigs(top_eigs: np.ndarray, tau: float, floor: float = 1e-12) -> np.ndarray:
    """Simplex-projected negated eigenvalues, floored and renormalized to sum 1."""
    w = project_simplex(-np.asarray(top_eigs, dtype=float), tau)
    w = w / w.sum()
    w = np.maximum(w, floor)
    return w / w.sum()


def dual_gap(inst: QuadMeasInstance, x, seed: int = 0) -> float:
    """Linear optimization gap of tau X over the tau-scaled unit-trace cone.

    Tr((tau X - tau v v^T) grad f(tau X)) with v the bottom eigenvector of
    the gradient, found as the top eigenvector of its negation.  Upper
    bounds the suboptimality of tau X; non-negative up to solver tolerance.
    """
    res = qm_residuals(inst, x)
    grad = _dense_measurement_gradient(inst.a, inst.b, res)
    return _dual_gap_core(grad, trace_term=float(res @ (res + inst.y)), tau=inst.tau, seed=seed)


def _dual_gap_core(grad: np.ndarray, trace_term: float, tau: float, seed: int = 0) -> float:
    top = lanczos_top_r(SymmetricOperator.from_dense(-grad), 1, seed=seed)
    v = top.eigenvectors[:, 0]
    return trace_term - tau * float(v @ grad @ v)


def recovery_error(inst: QuadMeasInstance, x) -> float:
    """|| Tr(M)/tau * (tau X) - M ||_F^2 / ||M||_F^2, from factors.

    Accepts a structured iterate, a (V, lam) factor pair, or a dense
    unit-trace matrix.
    """
    n = inst.n
    vm = inst.V_factor
    m_norm_sq = n**2 * float(np.sum((vm.T @ vm) ** 2))
    if isinstance(x, LowRankIterate):
        lam_kept = (1.0 - x.eps) * x.lam
        x_norm_sq = float(np.sum(lam_kept**2)) + x.tail_value**2 * (n - x.r)
        cross_v = x.V.T @ vm
        inner = float(lam_kept @ np.sum(cross_v**2, axis=1)) + x.tail_value * (
            1.0 - float(np.sum(cross_v**2))
        )
        inner *= n
    elif isinstance(x, tuple):
        v, lam = x
        x_norm_sq = float(np.sum(lam**2))
        cross_v = v.T @ vm
        inner = n * float(lam @ np.sum(cross_v**2, axis=1))
    else:
        xd = symmetrize(x)
        x_norm_sq = float(np.sum(xd**2))
        inner = n * float(np.sum((xd @ vm) * vm))
    return (n**2 * x_norm_sq - 2.0 * n * inner + m_norm_sq) / m_norm_sq


# ---------------------------------------------------------------------------
# serialization ("SPECMEG-QMI v1")


def save_instance(inst: QuadMeasInstance, path: str) -> None:
    """Write the versioned container: magic line, JSON header, raw float64 arrays."""
    header = {
        "n": inst.n,
        "r_true": inst.r_true,
        "m": inst.m,
        "kappa": inst.kappa,
        "tau": inst.tau,
        "seed": inst.seed,
    }
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("ascii"))
        for arr in (inst.V_factor, inst.a, inst.b, inst.y0, inst.y):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_instance(path: str) -> QuadMeasInstance:
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a SPECMEG-QMI v1 container (magic {magic!r})")
        header = json.loads(fh.readline().decode("ascii"))
        n, r_true, m = header["n"], header["r_true"], header["m"]
        blob = fh.read()
    sizes = [n * r_true, m * n, m * n, m, m]
    if len(blob) != 8 * sum(sizes):
        raise ValueError(f"{path}: truncated container ({len(blob)} payload bytes)")
    parts = []
    offset = 0
    for size in sizes:
        parts.append(np.frombuffer(blob, dtype="<f8", count=size, offset=8 * offset).copy())
        offset += size
    v, a, b, y0, y = parts
    return QuadMeasInstance(
        n=n,
        r_true=r_true,
        m=m,
        a=a.reshape(m, n),
        b=b.reshape(m, n),
        y0=y0,
        y=y,
        V_factor=v.reshape(n, r_true),
        kappa=header["kappa"],
        tau=header["tau"],
        seed=header["seed"],
    )
