import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from regsaddle.factor import (
    NotPositiveDefinite,
    PivotBreakdown,
    analyze_order,
    cholesky,
    default_pivot_threshold,
    ldlt,
    solve_chol,
    solve_ldlt,
    symbolic_nnz,
)
from regsaddle.sparse import DimensionError, Permutation, SparseMatrix


def sym(M):
    return SparseMatrix.from_dense(M, "symmetric-lower")


def arrow(n):
    M = np.eye(n) * 4.0
    M[-1, :] = M[:, -1] = 1.0
    M[-1, -1] = float(n)
    return M


def quasi_definite(rng, n, m, delta=0.1, rho=0.1, density=0.5):
    A = np.where(rng.random((m, n)) < density, rng.standard_normal((m, n)), 0.0)
    R = rng.standard_normal((n, n)) * (rng.random((n, n)) < 0.3)
    Q = R @ R.T + np.diag(rng.uniform(0, 1, n))
    return np.block([[-(Q + rho * np.eye(n)), A.T], [A, delta * np.eye(m)]])


def reconstruct_chol(f):
    L = f.L.toarray()
    return L @ L.T


def permuted(S, perm):
    return S[np.ix_(perm.forward, perm.forward)]


class TestOrdering:
    def test_diagonal(self):
        S = sym(np.diag([1.0, 2.0, 3.0]))
        assert symbolic_nnz(S, analyze_order(S)) == 3

    def test_arrow_puts_hub_last(self):
        n = 30
        S = sym(arrow(n))
        order = analyze_order(S)
        assert order.forward[-1] == n - 1
        assert symbolic_nnz(S, order) == 2 * n - 1
        # eliminating the hub first fills the whole lower triangle
        worst = Permutation(np.r_[n - 1, np.arange(n - 1)])
        assert symbolic_nnz(S, worst) == n * (n + 1) // 2

    @pytest.mark.parametrize("n", [10, 17, 40])
    def test_arrow_family_not_worse_than_natural(self, n):
        S = sym(arrow(n)[::-1, ::-1].copy())  # hub first in natural order
        assert symbolic_nnz(S, analyze_order(S)) <= symbolic_nnz(S, Permutation.identity(n))

    def test_tridiagonal(self):
        n = 25
        S = sym(sp.diags([1.0, 4.0, 1.0], [-1, 0, 1], (n, n)).toarray())
        assert cholesky(S).nnz_L <= 2 * n - 1

    def test_symbolic_matches_numeric_count(self):
        rng = np.random.default_rng(0)
        B = np.where(rng.random((20, 20)) < 0.15, rng.standard_normal((20, 20)), 0.0)
        S = sym(B @ B.T + 20 * np.eye(20))
        order = analyze_order(S)
        assert cholesky(S, order).nnz_L == symbolic_nnz(S, order)


class TestCholesky:
    def test_diagonal(self):
        f = cholesky(sym(np.diag([1.5, 1.5])))
        np.testing.assert_allclose(f.L.toarray(), np.sqrt(1.5) * np.eye(2), rtol=1e-15)

    def test_scalar(self):
        assert cholesky(sym([[1.1]])).L.toarray()[0, 0] == pytest.approx(np.sqrt(1.1), rel=1e-15)

    def test_random_reconstruction(self):
        rng = np.random.default_rng(3)
        B = rng.standard_normal((20, 20))
        S = B.T @ B + np.eye(20)
        f = cholesky(sym(S))
        assert np.all(np.diag(f.L.toarray()) > 0)
        err = np.linalg.norm(reconstruct_chol(f) - permuted(S, f.perm)) / np.linalg.norm(S)
        assert err <= 1e-12

    def test_not_positive_definite(self):
        with pytest.raises(NotPositiveDefinite) as exc:
            cholesky(sym([[1.0, 2.0], [2.0, 1.0]]))
        assert exc.value.pivot <= 0

    def test_solve_trivial(self):
        f = cholesky(SparseMatrix.identity(4))
        b = np.arange(4.0)
        np.testing.assert_array_equal(solve_chol(f, b), b)
        np.testing.assert_array_equal(solve_chol(f, np.zeros(4)), np.zeros(4))

    def test_solve_dimension(self):
        with pytest.raises(DimensionError):
            solve_chol(cholesky(SparseMatrix.identity(3)), np.ones(4))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 50), st.integers(0, 2**31 - 1))
    def test_round_trip(self, n, seed):
        rng = np.random.default_rng(seed)
        B = np.where(rng.random((n, n)) < 0.2, rng.standard_normal((n, n)), 0.0)
        S = B @ B.T + np.eye(n)
        b = rng.standard_normal(n)
        x = solve_chol(cholesky(sym(S)), b)
        assert np.linalg.norm(S @ x - b) <= 1e-10 * np.linalg.norm(b)

    def test_block_right_hand_side(self):
        rng = np.random.default_rng(8)
        B = rng.standard_normal((6, 6))
        S = B @ B.T + np.eye(6)
        X = solve_chol(cholesky(sym(S)), np.eye(6))
        np.testing.assert_allclose(X, np.linalg.inv(S), atol=1e-10)


class TestLdlt:
    def test_hand_example(self):
        f = ldlt(sym([[-1.0, 1.0], [1.0, 1.0]]), order=Permutation.identity(2))
        np.testing.assert_allclose(f.L.toarray(), [[1, 0], [-1, 1]])
        np.testing.assert_allclose(f.d, [-1, 2])
        assert f.inertia() == (1, 0, 1)

    def test_diagonal(self):
        f = ldlt(sym(np.diag([-2.0, 3.0])))
        np.testing.assert_array_equal(f.L.toarray(), np.eye(2))
        assert sorted(f.d.tolist()) == [-2.0, 3.0]

    def test_random_quasi_definite(self):
        rng = np.random.default_rng(11)
        n, m = 9, 6
        K = quasi_definite(rng, n, m)
        f = ldlt(sym(K))
        assert not f.used_2x2
        L = f.L.toarray()
        err = np.linalg.norm(L @ np.diag(f.d) @ L.T - permuted(K, f.perm)) / np.linalg.norm(K)
        assert err <= 1e-9
        assert f.inertia() == (n, 0, m)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 12), st.integers(1, 10), st.integers(0, 2**31 - 1))
    def test_quasi_definite_never_needs_2x2(self, n, m, seed):
        K = quasi_definite(np.random.default_rng(seed), n, m, delta=1e-4, rho=1e-4)
        thr, _ = default_pivot_threshold(1e-4, 1e-4)
        f = ldlt(sym(K), thr, allow_2x2=False)
        assert not f.used_2x2
        assert f.inertia() == (n, 0, m)
        b = np.random.default_rng(seed + 1).standard_normal(n + m)
        x = solve_ldlt(f, b)
        assert np.linalg.norm(K @ x - b) <= 1e-8 * np.linalg.norm(b) * np.linalg.cond(K) ** 0.5

    def test_zero_diagonal_needs_2x2(self):
        K = sym([[0.0, 1.0], [1.0, 0.0]])
        with pytest.raises(PivotBreakdown):
            ldlt(K, 1e-6, allow_2x2=False)
        f = ldlt(K, 1e-6, allow_2x2=True)
        assert f.used_2x2
        assert f.inertia() == (1, 0, 1)
        np.testing.assert_allclose(solve_ldlt(f, np.array([2.0, 3.0])), [3.0, 2.0])

    def test_delayed_pivot(self):
        # first pivot is tiny but becomes fine once moved behind its neighbour
        K = np.array([[1e-12, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, -3.0]])
        f = ldlt(sym(K), 1e-6, order=Permutation.identity(3))
        assert f.perm.forward[0] != 0 and not f.used_2x2
        L = f.L.toarray()
        np.testing.assert_allclose(L @ np.diag(f.d) @ L.T, permuted(K, f.perm), atol=1e-12)

    def test_solve_with_2x2_blocks(self):
        rng = np.random.default_rng(5)
        B = rng.standard_normal((8, 8))
        K = B + B.T
        np.fill_diagonal(K, 0.0)
        f = ldlt(sym(K), 1e-3, allow_2x2=True)
        L = f.L.toarray()
        np.testing.assert_allclose(L @ f.D_dense() @ L.T, permuted(K, f.perm), atol=1e-9)
        b = rng.standard_normal(8)
        np.testing.assert_allclose(K @ solve_ldlt(f, b), b, atol=1e-8)


class TestPivotPolicy:
    def test_default(self):
        assert default_pivot_threshold(1e-2, 1e-3) == (pytest.approx(1e-5), False)
        assert default_pivot_threshold(1.0, 1.0) == (pytest.approx(1e-5), False)
        assert default_pivot_threshold(1e-6, 1e-6) == (pytest.approx(1e-7), False)

    def test_implicit_normal_switch(self):
        assert default_pivot_threshold(1e-9, 1e-6, implicit_normal=True) == (1e-6, True)
        assert default_pivot_threshold(1e-9, 1e-6, implicit_normal=False)[1] is False
        assert default_pivot_threshold(1e-7, 1e-7, implicit_normal=True)[1] is False
