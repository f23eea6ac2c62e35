import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from specmeg.linalg import (
    LanczosError,
    ParameterError,
    RankDeficiencyError,
    SymmetricOperator,
    full_eigh,
    lanczos_top_r,
    orthonormalize,
    project_simplex,
    symmetrize,
)


def random_symmetric(n, rng, scale=1.0):
    return symmetrize(rng.standard_normal((n, n))) * scale


def assert_symmetric_operator(op, rng, pairs=20, tol=1e-8):
    """Randomized symmetry probe: <u, Av> == <v, Au> up to scale."""
    norm_est = 0.0
    samples = []
    for _ in range(pairs):
        u = rng.standard_normal(op.dim)
        v = rng.standard_normal(op.dim)
        au, av = op.apply(u), op.apply(v)
        norm_est = max(norm_est, np.linalg.norm(au) / np.linalg.norm(u))
        samples.append((u, v, au, av))
    norm_est = max(norm_est, 1e-30)
    for u, v, au, av in samples:
        lhs = abs(u @ av - v @ au)
        assert lhs <= tol * np.linalg.norm(u) * np.linalg.norm(v) * norm_est


class TestFullEigh:
    def test_diagonal(self):
        dec = full_eigh(np.diag([3.0, 1.0, 2.0]))
        assert np.allclose(dec.eigenvalues, [3.0, 2.0, 1.0], atol=1e-14)
        # eigenvectors are signed permutation columns of the identity
        assert np.allclose(np.abs(dec.eigenvectors), np.eye(3)[:, [0, 2, 1]], atol=1e-12)

    def test_identity(self):
        dec = full_eigh(np.eye(7))
        assert np.allclose(dec.eigenvalues, 1.0, atol=1e-14)
        v = dec.eigenvectors
        assert np.max(np.abs(v.T @ v - np.eye(7))) <= 1e-10

    def test_reconstruction_random(self):
        rng = np.random.default_rng(0)
        a = random_symmetric(50, rng)
        dec = full_eigh(a)
        recon = dec.eigenvectors @ np.diag(dec.eigenvalues) @ dec.eigenvectors.T
        assert np.max(np.abs(recon - a)) <= 1e-8 * max(1.0, np.max(np.abs(a)))
        assert np.max(np.abs(dec.eigenvectors.T @ dec.eigenvectors - np.eye(50))) <= 1e-10
        assert np.all(np.diff(dec.eigenvalues) <= 1e-12)


class TestLanczos:
    def test_diagonal_top2(self):
        op = SymmetricOperator.from_dense(np.diag([5.0, 4.0, 3.0, 2.0, 1.0]))
        top = lanczos_top_r(op, r=2, seed=1)
        assert np.allclose(top.eigenvalues, [5.0, 4.0], atol=1e-10)
        assert np.allclose(np.abs(top.eigenvectors), np.eye(5)[:, :2], atol=1e-8)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(7)
        a = random_symmetric(100, rng)
        dec = full_eigh(a)
        top = lanczos_top_r(SymmetricOperator.from_dense(a), r=5, seed=3)
        scale = max(1.0, np.abs(dec.eigenvalues).max())
        assert np.max(np.abs(top.eigenvalues - dec.eigenvalues[:5])) <= 1e-8 * scale
        # principal angles between the two 5-dim subspaces
        overlap = dec.eigenvectors[:, :5].T @ top.eigenvectors
        angles = np.arccos(np.clip(np.linalg.svd(overlap, compute_uv=False), -1, 1))
        assert np.max(angles) <= 1e-6
        assert np.max(np.abs(top.eigenvectors.T @ top.eigenvectors - np.eye(5))) <= 1e-10

    def test_algebraic_not_magnitude(self):
        n = 12
        op = SymmetricOperator.from_dense(-np.diag(np.arange(1.0, n + 1)))
        top = lanczos_top_r(op, r=1, seed=5)
        assert np.allclose(top.eigenvalues, [-1.0], atol=1e-10)
        assert np.allclose(np.abs(top.eigenvectors[:, 0]), np.eye(n)[:, 0], atol=1e-7)

    def test_repeated_eigenvalues(self):
        # a single Krylov sequence sees one copy; restarts must find the rest
        op = SymmetricOperator.from_dense(np.diag([2.0, 2.0, 2.0, 1.0, 0.0]))
        top = lanczos_top_r(op, r=3, seed=11)
        assert np.allclose(top.eigenvalues, [2.0, 2.0, 2.0], atol=1e-9)

    def test_parameter_error(self):
        op = SymmetricOperator.from_dense(np.eye(4))
        with pytest.raises(ParameterError):
            lanczos_top_r(op, r=4)
        with pytest.raises(ParameterError):
            lanczos_top_r(op, r=0)

    def test_failure_carries_residuals(self):
        rng = np.random.default_rng(2)
        a = random_symmetric(60, rng)
        op = SymmetricOperator.from_dense(a)
        with pytest.raises(LanczosError) as err:
            lanczos_top_r(op, r=3, tol=1e-16, subspace=6, max_iter=8, restarts=1)
        assert err.value.residual_norms.shape == (3,)

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(4)
        a = random_symmetric(40, rng)
        op = SymmetricOperator.from_dense(a)
        t1 = lanczos_top_r(op, r=3, seed=9)
        t2 = lanczos_top_r(op, r=3, seed=9)
        assert np.array_equal(t1.eigenvalues, t2.eigenvalues)
        assert np.array_equal(t1.eigenvectors, t2.eigenvectors)

    @settings(max_examples=25, deadline=None, derandomize=True)
    @given(n=st.integers(2, 120), r_frac=st.floats(0.01, 0.99), seed=st.integers(0, 10_000))
    def test_property_matches_dense(self, n, r_frac, seed):
        r = max(1, min(n - 1, int(round(r_frac * n))))
        rng = np.random.default_rng(seed)
        a = random_symmetric(n, rng)
        dec = full_eigh(a)
        top = lanczos_top_r(SymmetricOperator.from_dense(a), r=r, seed=seed)
        scale = max(1.0, np.abs(dec.eigenvalues).max())
        assert np.max(np.abs(top.eigenvalues - dec.eigenvalues[:r])) <= 1e-8 * scale

    def test_large_instance_matches_dense(self):
        rng = np.random.default_rng(17)
        a = random_symmetric(200, rng)
        dec = full_eigh(a)
        top = lanczos_top_r(SymmetricOperator.from_dense(a), r=8, seed=2)
        scale = max(1.0, np.abs(dec.eigenvalues).max())
        assert np.max(np.abs(top.eigenvalues - dec.eigenvalues[:8])) <= 1e-8 * scale

    def test_operator_symmetry_probe(self):
        rng = np.random.default_rng(6)
        op = SymmetricOperator.from_dense(random_symmetric(30, rng))
        assert_symmetric_operator(op, rng)


def simplex_projection_oracle(z, tau):
    """Exact active-set enumeration, independent of sort-and-threshold.

    The projection keeps some support set S active; for each candidate S the
    equality-constrained minimizer shifts z_S uniformly to reach total mass
    tau.  The projection is the feasible candidate closest to z.
    """
    z = np.asarray(z, dtype=float)
    r = z.size
    best, best_dist = None, np.inf
    for mask in range(1, 2**r):
        idx = [i for i in range(r) if mask >> i & 1]
        w = np.zeros(r)
        w[idx] = z[idx] + (tau - z[idx].sum()) / len(idx)
        if np.any(w[idx] < -1e-12):
            continue
        dist = np.linalg.norm(np.maximum(w, 0.0) - z)
        if dist < best_dist:
            best, best_dist = np.maximum(w, 0.0), dist
    return best, best_dist


class TestProjectSimplex:
    def test_interior_shift(self):
        assert np.allclose(project_simplex(np.array([0.2, 0.3]), 1.0), [0.45, 0.55], atol=1e-12)

    def test_clipping(self):
        assert np.allclose(project_simplex(np.array([2.0, -1.0]), 1.0), [1.0, 0.0], atol=1e-12)

    def test_idempotent_on_feasible(self):
        z = np.array([0.1, 0.2, 0.7])
        assert np.allclose(project_simplex(z, 1.0), z, atol=1e-12)

    def test_feasibility_and_tau(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            z = rng.standard_normal(6) * 3
            tau = float(rng.uniform(0.1, 5))
            w = project_simplex(z, tau)
            assert np.all(w >= 0)
            assert abs(w.sum() - tau) <= 1e-12 * max(1, tau)

    @settings(max_examples=60, deadline=None, derandomize=True)
    @given(
        z=st.lists(st.floats(-10, 10), min_size=1, max_size=5),
        tau=st.floats(0.01, 10),
    )
    def test_matches_enumeration_oracle(self, z, tau):
        z = np.asarray(z)
        w = project_simplex(z, tau)
        _, best_dist = simplex_projection_oracle(z, tau)
        assert np.all(w >= 0)
        assert abs(w.sum() - tau) <= 1e-9
        assert np.linalg.norm(w - z) <= best_dist + 1e-9

    def test_parameter_errors(self):
        with pytest.raises(ParameterError):
            project_simplex(np.array([1.0]), 0.0)
        with pytest.raises(ParameterError):
            project_simplex(np.array([]), 1.0)


class TestOrthonormalize:
    def test_already_orthonormal(self):
        b = np.eye(6)[:, :3]
        assert np.allclose(orthonormalize(b), b, atol=1e-14)

    def test_gram_schmidt_by_hand(self):
        e1 = np.eye(4)[:, 0]
        e2 = np.eye(4)[:, 1]
        q = orthonormalize(np.column_stack([e1, e1 + e2]))
        assert np.allclose(np.abs(q[:, 0]), e1, atol=1e-14)
        assert np.allclose(np.abs(q[:, 1]), e2, atol=1e-14)

    def test_random_span_preserved(self):
        rng = np.random.default_rng(8)
        b = rng.standard_normal((30, 4))
        q = orthonormalize(b)
        assert np.max(np.abs(q.T @ q - np.eye(4))) <= 1e-12
        # same span: compare orthogonal projectors
        pb = b @ np.linalg.solve(b.T @ b, b.T)
        assert np.max(np.abs(q @ q.T - pb)) <= 1e-10

    def test_rank_deficiency_names_column(self):
        b = np.column_stack([np.eye(5)[:, 0], np.eye(5)[:, 1], np.eye(5)[:, 0] + np.eye(5)[:, 1]])
        with pytest.raises(RankDeficiencyError) as err:
            orthonormalize(b)
        assert err.value.column == 2
