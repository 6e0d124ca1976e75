import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regsaddle.precond import (
    Partition,
    apply_inverse,
    build_pas,
    build_pk,
    build_pne_chol,
    build_pne_ldl,
    density_plan,
    make_plan,
    partition_variables,
    sparsify_hessian,
)
from regsaddle.sparse import DimensionError, SparseMatrix


def sym(M):
    return SparseMatrix.from_dense(M, "symmetric-lower")


def random_data(rng, m, n, density=0.5, diagonal=False):
    A = np.where(rng.random((m, n)) < density, rng.standard_normal((m, n)), 0.0)
    A[np.arange(m), rng.choice(n, m, replace=False)] += 1.0  # full row rank
    if diagonal:
        H = np.diag(rng.uniform(0, 2, n))
    else:
        R = rng.standard_normal((n, n)) * (rng.random((n, n)) < 0.3)
        H = R @ R.T
    return A, H, rng.uniform(0.1, 3.0, n)


def plan_for(m, n, drop=(), rows=()):
    return make_plan(m, n, drop, rows)


def saddle(A, Q, rho, delta):
    m, n = A.shape
    return np.block([[-(Q + rho * np.eye(n)), A.T], [A, delta * np.eye(m)]])


class TestPartition:
    def test_small_g_is_nonbasic(self):
        p = partition_variables([1e-7], 1e-6)
        assert p.nonbasic.tolist() == [0]

    def test_mid_range_is_undecided(self):
        p = partition_variables([1.0], 1e-6)
        assert p.undecided.tolist() == [0]

    def test_large_g_is_basic(self):
        assert partition_variables([1e7], 1e-6).basic.tolist() == [0]

    def test_degenerate_mu_one(self):
        # both tests hold at g = mu = 1; the basic test wins
        p = partition_variables(np.ones(4), 1.0)
        assert p.basic.tolist() == [0, 1, 2, 3] and len(p.nonbasic) == 0

    def test_free_variables_never_nonbasic(self):
        p = partition_variables([1e-9, 1e-9], 1e-3, ineq_mask=[True, False])
        assert p.nonbasic.tolist() == [0] and p.undecided.tolist() == [1]

    def test_rejects_nonpositive_mu(self):
        with pytest.raises(ValueError):
            partition_variables([1.0], 0.0)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(1e-12, 1e12), min_size=1, max_size=30), st.floats(1e-10, 10), st.floats(0.1, 10))
    def test_is_a_partition(self, g, mu, kappa):
        p = partition_variables(g, mu, kappa)
        parts = np.concatenate([p.basic, p.nonbasic, p.undecided])
        assert sorted(parts.tolist()) == list(range(len(g)))
        np.testing.assert_array_equal(p.kept, np.setdiff1d(np.arange(len(g)), p.nonbasic))


class TestDensityPlan:
    def test_one_full_column(self):
        D = np.eye(10, 12)
        D[:, 5] = 1.0
        assert density_plan(SparseMatrix.from_dense(D)).cols.tolist() == [5]

    def test_all_sparse(self):
        plan = density_plan(SparseMatrix.from_dense(np.eye(10, 12)))
        assert len(plan.cols) == 0 and len(plan.rows) == 0

    def test_densest_first_with_index_tie_break(self):
        rng = np.random.default_rng(0)
        D = np.zeros((20, 40))
        D[np.arange(20), rng.integers(0, 40, 20)] = 1.0
        D[:, [7, 3, 30]] = 0.0
        for j in (7, 3, 30):
            D[:10, j] = 1.0  # 50% dense
        D[10, 30] = 1.0  # column 30 is the densest
        plan = density_plan(SparseMatrix.from_dense(D), max_drop=2)
        assert plan.cols.tolist() == [30, 3]

    def test_dense_row(self):
        D = np.eye(8, 16)
        D[2, :] = 1.0
        plan = density_plan(SparseMatrix.from_dense(D), col_density=1.0)
        assert plan.rows.tolist() == [2] and len(plan.cols) == 0

    def test_max_drop_zero(self):
        D = np.ones((4, 4))
        plan = density_plan(SparseMatrix.from_dense(D), max_drop=0)
        assert len(plan.cols) == 0 and len(plan.rows) == 0

    @pytest.mark.parametrize("cd,rd", [(0.0, 0.5), (0.5, 1.5)])
    def test_threshold_range(self, cd, rd):
        with pytest.raises(ValueError):
            density_plan(SparseMatrix.identity(2, symmetry="general"), cd, rd)


class TestPlan:
    def test_permutations_put_selection_first(self):
        plan = plan_for(4, 6, drop=[4, 1], rows=[3])
        assert plan.perm_c.forward[:2].tolist() == [4, 1]
        assert plan.perm_r.forward[0] == 3
        assert plan.kc == 2 and plan.kr == 1
        assert plan.kept_cols.tolist() == [0, 2, 3, 5]
        assert plan.partition.nonbasic.tolist() == [1, 4]

    @pytest.mark.parametrize("drop,rows", [([1, 1], []), ([6], []), ([], [4])])
    def test_invalid(self, drop, rows):
        with pytest.raises(ValueError):
            plan_for(4, 6, drop, rows)

    def test_partition_must_cover(self):
        bad = Partition(np.array([0]), np.array([1]), np.array([], dtype=int))
        with pytest.raises(ValueError):
            make_plan(2, 3, partition=bad)


class TestSparsifyHessian:
    def test_diagonal_h_is_exact(self):
        H = sym(np.diag([1.0, 2.0, 0.0]))
        th = np.array([0.5, 0.0, 1.0])
        plan = plan_for(1, 3, drop=[0])
        for mode in ("diag-all", "diag-on-N-full-on-B", "block-diag-custom"):
            q = sparsify_hessian(H, th, 1e-2, plan, mode)
            np.testing.assert_array_equal(q.qhat.toarray(), np.diag([1.5, 2.0, 1.0]))

    def test_diag_all(self):
        q = sparsify_hessian(sym([[2.0, 1.0], [1.0, 2.0]]), np.zeros(2), 1.0, plan_for(1, 2))
        np.testing.assert_array_equal(q.qhat.toarray(), np.diag([2.0, 2.0]))
        assert q.is_diagonal()

    def test_masking_on_nonbasic(self):
        rng = np.random.default_rng(1)
        R = rng.standard_normal((4, 4))
        Q = R @ R.T
        plan = plan_for(2, 4, drop=[0, 1])
        q = sparsify_hessian(sym(Q), np.zeros(4), 1.0, plan, "diag-on-N-full-on-B").qhat.toarray()
        mask = np.eye(4, dtype=bool)
        mask[2:, 2:] = True
        np.testing.assert_allclose(q, np.where(mask, Q, 0.0), atol=1e-15)

    def test_block_custom_keeps_dropped_block(self):
        Q = np.full((3, 3), 0.5) + np.eye(3)
        q = sparsify_hessian(sym(Q), np.zeros(3), 1.0, plan_for(1, 3, drop=[0, 2]), "block-diag-custom").qhat.toarray()
        expected = Q.copy()
        expected[1, [0, 2]] = expected[[0, 2], 1] = 0.0
        np.testing.assert_array_equal(q, expected)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            sparsify_hessian(sym(np.eye(2)), np.zeros(2), 1.0, plan_for(1, 2), "banded")

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.sampled_from(["diag-all", "diag-on-N-full-on-B", "block-diag-custom"]))
    def test_psd_and_decoupled(self, seed, mode):
        rng = np.random.default_rng(seed)
        n = 7
        R = rng.standard_normal((n, n))
        drop = rng.choice(n, 3, replace=False)
        plan = plan_for(2, n, drop=drop)
        q = sparsify_hessian(sym(R @ R.T), rng.uniform(0, 1, n), 1.0, plan, mode).qhat.toarray()
        assert np.linalg.eigvalsh(q).min() >= -1e-10
        kept = plan.kept_cols
        assert np.all(q[np.ix_(drop, kept)] == 0.0)


class TestPneChol:
    def test_no_sparsification_is_exact(self):
        rng = np.random.default_rng(2)
        A, _, g = random_data(rng, 4, 9)
        h = build_pne_chol(SparseMatrix.from_dense(A), g, 0.1, plan_for(4, 9))
        M = A @ np.diag(g) @ A.T + 0.1 * np.eye(4)
        np.testing.assert_allclose(h.inverse_dense() @ M, np.eye(4), atol=1e-10)

    def test_scalar_example(self):
        A = SparseMatrix.from_dense([[1.0, 1.0]])
        h = build_pne_chol(A, np.array([1.0, 1e-6]), 0.1, plan_for(1, 2, drop=[1]))
        np.testing.assert_allclose(h.inverse_dense(), [[1 / 1.1]], rtol=1e-15)
        ratio = 1.100001 / 1.1
        assert ratio == pytest.approx(1 + 1e-6 / 1.1, rel=1e-14)
        assert (h(np.array([1.100001])) - ratio)[0] == pytest.approx(0.0, abs=1e-15)

    def test_row_sparsification_interval(self):
        rng = np.random.default_rng(3)
        A, _, g = random_data(rng, 3, 5, density=0.8)
        delta = 0.1
        plan = plan_for(3, 5, rows=[1])
        h = build_pne_chol(SparseMatrix.from_dense(A), g, delta, plan)
        M = A @ np.diag(g) @ A.T + delta * np.eye(3)
        ev = np.linalg.eigvals(h.inverse_dense() @ M).real
        smax2 = np.linalg.norm(A @ np.diag(np.sqrt(g)), 2) ** 2
        assert ev.min() >= delta / (delta + smax2) * (1 - 1e-9)
        assert ev.max() <= 2 * (1 + 1e-9)

    def test_block_structure(self):
        rng = np.random.default_rng(4)
        A, _, g = random_data(rng, 5, 10)
        plan = plan_for(5, 10, drop=[0, 3], rows=[2, 4])
        P = np.linalg.inv(build_pne_chol(SparseMatrix.from_dense(A), g, 0.2, plan).inverse_dense())
        R, S = [2, 4], [0, 1, 3]
        kept = plan.kept_cols
        np.testing.assert_allclose(P[np.ix_(R, S)], 0.0, atol=1e-10)
        np.testing.assert_allclose(P[np.ix_(R, R)], A[R] @ np.diag(g) @ A[R].T + 0.2 * np.eye(2), atol=1e-10)
        AS = A[np.ix_(S, kept)]
        np.testing.assert_allclose(P[np.ix_(S, S)], AS @ np.diag(g[kept]) @ AS.T + 0.2 * np.eye(3), atol=1e-10)

    def test_dimension_checks(self):
        A = SparseMatrix.from_dense([[1.0, 1.0]])
        with pytest.raises(DimensionError):
            build_pne_chol(A, np.ones(3), 0.1, plan_for(1, 2))
        h = build_pne_chol(A, np.ones(2), 0.1, plan_for(1, 2))
        with pytest.raises(DimensionError):
            apply_inverse(h, np.ones(2))


class TestPneLdl:
    def test_hand_example(self):
        A = SparseMatrix.from_dense([[1.0]])
        h = build_pne_ldl(A, sym([[0.0]]), np.zeros(1), 1.0, 1.0, plan_for(1, 1))
        assert h(np.array([3.0]))[0] == pytest.approx(1.5, rel=1e-14)
        assert h(np.zeros(1))[0] == 0.0

    def test_matches_explicit_normal_matrix(self):
        rng = np.random.default_rng(5)
        A, H, th = random_data(rng, 6, 12, diagonal=True)
        rho, delta = 1e-2, 1e-3
        h = build_pne_ldl(SparseMatrix.from_dense(A), sym(H), th, rho, delta, plan_for(6, 12))
        G = np.diag(1 / (np.diag(H) + th + rho))
        y = rng.standard_normal(6)
        ref = np.linalg.solve(A @ G @ A.T + delta * np.eye(6), y)
        np.testing.assert_allclose(h(y), ref, rtol=1e-9, atol=1e-9 * np.linalg.norm(ref))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(0, 4))
    def test_equals_chol_with_nonbasic_dropped(self, seed, n_drop):
        rng = np.random.default_rng(seed)
        m, n = 5, 12
        A, H, th = random_data(rng, m, n, diagonal=True)
        rho, delta = 1e-2, 1e-2
        plan = plan_for(m, n, drop=rng.choice(n, n_drop, replace=False))
        g = 1 / (np.diag(H) + th + rho)
        As = SparseMatrix.from_dense(A)
        y = rng.standard_normal(m)
        a = build_pne_ldl(As, sym(H), th, rho, delta, plan)(y)
        b = build_pne_chol(As, g, delta, plan)(y)
        assert np.linalg.norm(a - b) <= 1e-8 * np.linalg.norm(y)

    def test_block_rhs(self):
        rng = np.random.default_rng(6)
        A, H, th = random_data(rng, 3, 6)
        h = build_pne_ldl(SparseMatrix.from_dense(A), sym(H), th, 0.1, 0.1, plan_for(3, 6))
        Y = rng.standard_normal((3, 2))
        np.testing.assert_allclose(h(Y), np.column_stack([h(Y[:, 0]), h(Y[:, 1])]), atol=1e-13)


class TestPas:
    def test_identity_blocks(self):
        A = SparseMatrix.from_dense(np.zeros((2, 3)))
        ne = build_pne_chol(A, np.ones(3), 1.0, plan_for(2, 3))
        q = sparsify_hessian(sym(np.zeros((3, 3))), np.zeros(3), 1.0, ne.plan)
        h = build_pas(q, 1.0, ne)
        r = np.arange(5.0)
        np.testing.assert_allclose(h(r), r, atol=1e-15)
        assert h.kind == "pas-chol"

    def test_dense_oracle(self):
        rng = np.random.default_rng(7)
        A, H, th = random_data(rng, 3, 5)
        rho, delta = 0.1, 0.05
        plan = plan_for(3, 5, drop=[2])
        As = SparseMatrix.from_dense(A)
        q = sparsify_hessian(sym(H), th, rho, plan, "diag-on-N-full-on-B")
        Fhat = q.qhat.toarray() + rho * np.eye(5)
        g = 1 / (np.diag(H) + th + rho)
        ne = build_pne_chol(As, g, delta, plan)
        h = build_pas(q, rho, ne)
        kept = plan.kept_cols
        Pne = A[:, kept] @ np.diag(g[kept]) @ A[:, kept].T + delta * np.eye(3)
        P = np.block([[Fhat, np.zeros((5, 3))], [np.zeros((3, 5)), Pne]])
        r = rng.standard_normal(8)
        np.testing.assert_allclose(h(r), np.linalg.solve(P, r), rtol=1e-11, atol=1e-11)

    def test_top_block_only(self):
        rng = np.random.default_rng(8)
        A, H, th = random_data(rng, 2, 4)
        plan = plan_for(2, 4)
        ne = build_pne_ldl(SparseMatrix.from_dense(A), sym(H), th, 0.1, 0.1, plan)
        h = build_pas(sparsify_hessian(sym(H), th, 0.1, plan), 0.1, ne)
        out = h(np.r_[rng.standard_normal(4), np.zeros(2)])
        assert np.all(out[4:] == 0.0) and h.kind == "pas-ldl"

    def test_requires_normal_handle(self):
        rng = np.random.default_rng(9)
        A, H, th = random_data(rng, 2, 4, diagonal=True)
        plan = plan_for(2, 4)
        q = sparsify_hessian(sym(H), th, 0.1, plan)
        pk = build_pk(SparseMatrix.from_dense(A), q, 0.1, 0.1, plan)
        with pytest.raises(ValueError):
            build_pas(q, 0.1, pk)


class TestPk:
    def test_hand_example(self):
        A = SparseMatrix.from_dense([[1.0]])
        plan = plan_for(1, 1)
        q = sparsify_hessian(sym([[0.0]]), np.zeros(1), 1.0, plan)
        h = build_pk(A, q, 1.0, 1.0, plan)
        K = np.array([[-1.0, 1.0], [1.0, 1.0]])
        assert sorted(h.factor.d.tolist()) == [-1.0, 2.0]
        np.testing.assert_allclose(np.linalg.eigvalsh(h.two_sided_dense(K)), [-1.0, 1.0], atol=1e-14)

    @pytest.mark.parametrize("seed", range(5))
    def test_exact_factor_gives_two_eigenvalues(self, seed):
        rng = np.random.default_rng(seed)
        m, n = 4, 9
        A, H, th = random_data(rng, m, n)
        rho, delta = 1e-2, 1e-2
        plan = plan_for(m, n)
        q = sparsify_hessian(sym(H), th, rho, plan, "diag-on-N-full-on-B")
        h = build_pk(SparseMatrix.from_dense(A), q, rho, delta, plan)
        ev = np.linalg.eigvalsh(h.two_sided_dense(saddle(A, H + np.diag(th), rho, delta)))
        np.testing.assert_allclose(ev[:n], -1.0, atol=1e-10)
        np.testing.assert_allclose(ev[n:], 1.0, atol=1e-10)

    def test_dropping_one_column(self):
        rng = np.random.default_rng(10)
        A, H, th = random_data(rng, 2, 3, diagonal=True)
        rho, delta = 0.1, 0.1
        plan = plan_for(2, 3, drop=[1])
        q = sparsify_hessian(sym(H), th, rho, plan, "diag-on-N-full-on-B")
        h = build_pk(SparseMatrix.from_dense(A), q, rho, delta, plan)
        ev = np.linalg.eigvalsh(h.two_sided_dense(saddle(A, H + np.diag(th), rho, delta)))
        # one dropped column: at least m - 1 eigenvalues at +1 and n - 2 at -1
        assert np.sum(np.abs(ev - 1) <= 1e-9) >= 1
        assert np.sum(np.abs(ev + 1) <= 1e-9) >= 1
        assert np.sum(ev < 0) == 3

    def test_apply_inverse_is_product(self):
        rng = np.random.default_rng(11)
        A, H, th = random_data(rng, 3, 6)
        plan = plan_for(3, 6, drop=[0])
        q = sparsify_hessian(sym(H), th, 0.1, plan, "diag-on-N-full-on-B")
        h = build_pk(SparseMatrix.from_dense(A), q, 0.1, 0.1, plan)
        L = h.factor.L.toarray()
        Pi = np.eye(9)[h.factor.perm.forward]
        P = Pi.T @ L @ np.diag(np.abs(h.factor.d)) @ L.T @ Pi
        np.testing.assert_allclose(h.inverse_dense(), np.linalg.inv(P), atol=1e-9)


def _all_handles(seed):
    rng = np.random.default_rng(seed)
    m, n = 4, 9
    A, H, th = random_data(rng, m, n)
    rho, delta = rng.uniform(1e-3, 1), rng.uniform(1e-3, 1)
    As, Hs = SparseMatrix.from_dense(A), sym(H)
    plan = plan_for(m, n, drop=rng.choice(n, 2, replace=False), rows=[int(rng.integers(m))])
    g = 1 / (np.diag(H) + th + rho)
    chol = build_pne_chol(As, g, delta, plan)
    ldl = build_pne_ldl(As, Hs, th, rho, delta, plan)
    q = sparsify_hessian(Hs, th, rho, plan, "diag-on-N-full-on-B")
    return [chol, ldl, build_pas(q, rho, chol), build_pas(q, rho, ldl), build_pk(As, q, rho, delta, plan)]


class TestApplyContract:
    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_symmetric_positive_definite(self, seed):
        rng = np.random.default_rng(seed + 1)
        for h in _all_handles(seed):
            r, s = rng.standard_normal((2, h.size))
            a, b = r @ apply_inverse(h, s), s @ apply_inverse(h, r)
            assert abs(a - b) <= 1e-12 * max(1.0, abs(a)), h.kind
            V = rng.standard_normal((h.size, 200))
            assert np.all(np.einsum("ij,ij->j", V, h(V)) > 0), h.kind

    def test_zero_and_determinism(self):
        for h in _all_handles(3):
            assert np.all(h(np.zeros(h.size)) == 0.0)
            r = np.random.default_rng(0).standard_normal(h.size)
            np.testing.assert_array_equal(h(r), h(r))

    def test_nnz_positive(self):
        for h in _all_handles(4):
            assert h.nnz >= h.size
