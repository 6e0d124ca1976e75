"""Positive definite preconditioners for regularized saddle-point systems.

Four families are provided:

``pne-chol``
    Block-diagonal Cholesky preconditioner for the normal equations
    ``M = A G A^T + delta I``. Selected columns of ``A`` are dropped and
    selected rows of ``M`` are decoupled from the rest.
``pne-ldl``
    The same normal-equations preconditioner restricted to column-dropping,
    applied implicitly through an LDL^T factorization of a reduced
    saddle-point matrix, so ``G`` never has to be formed.
``pas-chol`` / ``pas-ldl``
    Block-diagonal preconditioner ``diag(Qhat + rho I, P_NE)`` for the full
    saddle-point matrix, for use with MINRES.
``pk``
    ``L |D| L^T`` from an LDL^T factorization (1x1 pivots only) of a
    sparsified saddle-point matrix.

Every preconditioner exposes ``apply_inverse``; the result is a symmetric
positive definite linear map.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import scipy.sparse as sp

from .factor import CholFactor, LdlFactor, cholesky, default_pivot_threshold, ldlt
from .sparse import DimensionError, Permutation, SparseMatrix, nnz_profile, normal_matrix

PrecondKind = Literal["pne-chol", "pne-ldl", "pas-chol", "pas-ldl", "pk"]
PRECOND_KINDS: tuple[str, ...] = ("pne-chol", "pne-ldl", "pas-chol", "pas-ldl", "pk")
HessianMode = Literal["diag-all", "diag-on-N-full-on-B", "block-diag-custom"]

_EMPTY = np.array([], dtype=np.int64)


@dataclass(frozen=True)
class Partition:
    """Basic / non-basic / undecided split of the variables."""

    basic: np.ndarray
    nonbasic: np.ndarray
    undecided: np.ndarray

    @property
    def kept(self) -> np.ndarray:
        """Indices outside the non-basic set, sorted."""
        return np.sort(np.concatenate([self.basic, self.undecided]))


def partition_variables(g, mu: float, kappa: float = 1.0, ineq_mask=None) -> Partition:
    """Classify variables by the size of the scaling diagonal ``g``.

    ``j`` is basic when ``g_j >= 1/(kappa mu)``, non-basic when
    ``g_j <= kappa mu`` and undecided otherwise. When both tests hold
    (only possible for ``kappa mu >= 1``) the variable is basic. Variables
    outside ``ineq_mask`` are never non-basic.
    """
    g = np.asarray(g, dtype=np.float64)
    if not (mu > 0 and kappa > 0):
        raise ValueError("mu and kappa must be positive")
    basic = g >= 1.0 / (kappa * mu)
    nonbasic = (g <= kappa * mu) & ~basic
    if ineq_mask is not None:
        nonbasic &= np.asarray(ineq_mask, dtype=bool)
    undecided = ~(basic | nonbasic)
    return Partition(np.flatnonzero(basic), np.flatnonzero(nonbasic), np.flatnonzero(undecided))


@dataclass(frozen=True)
class DensityPlan:
    """Dense columns to drop and dense rows to sparsify, densest first."""

    cols: np.ndarray
    rows: np.ndarray


def _densest(counts, threshold, max_drop):
    idx = np.flatnonzero(counts >= threshold)
    # descending count, ascending index on ties
    idx = idx[np.lexsort((idx, -counts[idx]))]
    return idx[:max_drop]


def density_plan(A: SparseMatrix, col_density: float = 0.15, row_density: float = 0.25, max_drop: int = 30) -> DensityPlan:
    """Pick columns with at least ``col_density * m`` and rows with at least
    ``row_density * n`` structural nonzeros, at most ``max_drop`` of each."""
    if not (0 < col_density <= 1 and 0 < row_density <= 1):
        raise ValueError("density thresholds must lie in (0, 1]")
    col_counts, row_counts = nnz_profile(A)
    cols = _densest(col_counts, col_density * A.nrows, max_drop)
    rows = _densest(row_counts, row_density * A.ncols, max_drop)
    return DensityPlan(cols.astype(np.int64), rows.astype(np.int64))


@dataclass(frozen=True)
class SparsificationPlan:
    """Which columns of ``A`` are dropped and which rows of ``M`` are decoupled.

    ``perm_c`` brings ``drop_cols`` to the front, ``perm_r`` brings
    ``sparsify_rows`` to the front.
    """

    m: int
    n: int
    drop_cols: np.ndarray
    sparsify_rows: np.ndarray
    partition: Partition
    perm_c: Permutation = field(init=False)
    perm_r: Permutation = field(init=False)

    def __post_init__(self):
        drop = np.asarray(self.drop_cols, dtype=np.int64)
        rows = np.asarray(self.sparsify_rows, dtype=np.int64)
        if len(np.unique(drop)) != len(drop) or len(np.unique(rows)) != len(rows):
            raise ValueError("duplicate indices in sparsification plan")
        if len(drop) and (drop.min() < 0 or drop.max() >= self.n):
            raise ValueError("dropped column out of range")
        if len(rows) and (rows.min() < 0 or rows.max() >= self.m):
            raise ValueError("sparsified row out of range")
        parts = np.concatenate([self.partition.basic, self.partition.nonbasic, self.partition.undecided])
        if not np.array_equal(np.sort(parts), np.arange(self.n)):
            raise ValueError("partition must split 0..n-1 into disjoint sets")
        object.__setattr__(self, "drop_cols", drop)
        object.__setattr__(self, "sparsify_rows", rows)
        object.__setattr__(self, "perm_c", Permutation.leading(drop, self.n))
        object.__setattr__(self, "perm_r", Permutation.leading(rows, self.m))

    @property
    def kc(self) -> int:
        return len(self.drop_cols)

    @property
    def kr(self) -> int:
        return len(self.sparsify_rows)

    @property
    def kept_cols(self) -> np.ndarray:
        return self.perm_c.forward[self.kc:]

    @property
    def other_rows(self) -> np.ndarray:
        return self.perm_r.forward[self.kr:]


def make_plan(m: int, n: int, drop_cols=(), sparsify_rows=(), partition: Partition | None = None) -> SparsificationPlan:
    """Convenience constructor; without a partition the dropped columns are the non-basic set."""
    drop = np.asarray(drop_cols, dtype=np.int64)
    if partition is None:
        rest = np.setdiff1d(np.arange(n), drop)
        partition = Partition(rest, np.sort(drop), _EMPTY)
    return SparsificationPlan(m, n, drop, np.asarray(sparsify_rows, dtype=np.int64), partition)


@dataclass(frozen=True, eq=False)
class HessianApprox:
    """Block-separable approximation ``Qhat`` of ``Q = H + Diag(theta_inv)``."""

    qhat: SparseMatrix
    mode: HessianMode
    rho: float

    def is_diagonal(self) -> bool:
        return self.qhat.is_diagonal()


def sparsify_hessian(H: SparseMatrix, theta_inv, rho: float, plan: SparsificationPlan, mode: HessianMode = "diag-all") -> HessianApprox:
    """Approximate ``Q = H + Diag(theta_inv)`` by a block-separable matrix.

    ``diag-all``
        ``Diag(Q)``.
    ``diag-on-N-full-on-B``
        ``Diag(Q)`` on the non-basic set, ``Q`` untouched on the rest, and
        no coupling between the two.
    ``block-diag-custom``
        ``Q`` untouched on both the dropped columns and the kept columns,
        with the coupling between them removed.
    """
    n = H.nrows
    theta_inv = np.asarray(theta_inv, dtype=np.float64)
    Q = (H.full + sp.diags(theta_inv)).tocoo()
    r, c, v = Q.row, Q.col, Q.data
    if mode == "diag-all":
        keep = r == c
    elif mode == "diag-on-N-full-on-B":
        nonbasic = np.zeros(n, dtype=bool)
        nonbasic[plan.partition.nonbasic] = True
        keep = (r == c) | ~(nonbasic[r] | nonbasic[c])
    elif mode == "block-diag-custom":
        dropped = np.zeros(n, dtype=bool)
        dropped[plan.drop_cols] = True
        keep = dropped[r] == dropped[c]
    else:
        raise ValueError(f"unknown Hessian approximation mode {mode!r}")
    keep &= r >= c
    qhat = SparseMatrix.from_triplets(n, n, r[keep], c[keep], v[keep], "symmetric-lower")
    return HessianApprox(qhat, mode, rho)


class Preconditioner:
    """Common interface: ``apply_inverse`` plus bookkeeping."""

    kind: str
    size: int
    plan: SparsificationPlan | None

    @property
    def nnz(self) -> int:
        """Entries stored in the factors used to apply the inverse."""
        raise NotImplementedError

    def apply_inverse(self, r) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, r) -> np.ndarray:
        return self.apply_inverse(r)

    def inverse_dense(self) -> np.ndarray:
        """``P^{-1}`` as a dense matrix (desk-scale diagnostics only)."""
        out = self.apply_inverse(np.eye(self.size))
        return 0.5 * (out + out.T)

    def _check(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=np.float64)
        if r.ndim not in (1, 2) or r.shape[0] != self.size:
            raise DimensionError(f"{self.kind}: expected a vector of length {self.size}, got {r.shape}")
        return r


class NormalCholPreconditioner(Preconditioner):
    """``P_NE = blockdiag(M11, M22 - B21 B21^T)`` applied with two Cholesky factors."""

    kind = "pne-chol"

    def __init__(self, rows_1, rows_2, f11: CholFactor, f22: CholFactor, plan: SparsificationPlan):
        self.rows_1, self.rows_2 = rows_1, rows_2
        self.f11, self.f22 = f11, f22
        self.plan = plan
        self.size = len(rows_1) + len(rows_2)

    @property
    def nnz(self) -> int:
        return self.f11.nnz_L + self.f22.nnz_L

    def apply_inverse(self, r) -> np.ndarray:
        r = self._check(r)
        out = np.empty_like(r)
        out[self.rows_1] = self.f11.solve(r[self.rows_1])
        out[self.rows_2] = self.f22.solve(r[self.rows_2])
        return out


def _rows(A: SparseMatrix, rows) -> sp.csr_matrix:
    return A.full.tocsr()[np.asarray(rows, dtype=np.int64), :]


def build_pne_chol(A: SparseMatrix, ghat, delta: float, plan: SparsificationPlan) -> NormalCholPreconditioner:
    """Cholesky-based normal-equations preconditioner for a diagonal ``Ghat``.

    The sparsified rows keep their full diagonal block
    ``M11 = A_R Ghat A_R^T + delta I``; the remaining rows get
    ``A_S,K Ghat_K A_S,K^T + delta I`` with the dropped columns removed.
    """
    ghat = np.asarray(ghat, dtype=np.float64)
    if ghat.shape != (A.ncols,):
        raise DimensionError("ghat must have one entry per column of A")
    if plan.m != A.nrows or plan.n != A.ncols:
        raise DimensionError("plan does not match the shape of A")
    rows_1, rows_2 = plan.sparsify_rows, plan.other_rows
    kept = plan.kept_cols
    A1 = SparseMatrix.from_scipy(_rows(A, rows_1))
    A2 = SparseMatrix.from_scipy(_rows(A, rows_2)[:, kept])
    M11 = normal_matrix(A1, ghat, delta)
    M22 = normal_matrix(A2, ghat[kept], delta)
    return NormalCholPreconditioner(rows_1, rows_2, cholesky(M11), cholesky(M22), plan)


class NormalLdlPreconditioner(Preconditioner):
    """Implicit ``P_NE = A_B (Q_BB + rho I)^{-1} A_B^T + delta I`` via LDL^T.

    Solving with right-hand side ``(0, y)`` and keeping the trailing block
    gives ``P_NE^{-1} y``.
    """

    kind = "pne-ldl"

    def __init__(self, factor: LdlFactor, nb: int, m: int, plan: SparsificationPlan):
        self.factor = factor
        self.nb = nb
        self.size = m
        self.plan = plan

    @property
    def nnz(self) -> int:
        return self.factor.nnz_L

    def apply_inverse(self, r) -> np.ndarray:
        r = self._check(r)
        rhs = np.concatenate([np.zeros((self.nb,) + r.shape[1:]), r])
        return self.factor.solve(rhs)[self.nb:]


def _saddle_lower(F: sp.spmatrix, A: sp.spmatrix, delta: float) -> SparseMatrix:
    m = A.shape[0]
    K = sp.bmat([[-F, None], [A, delta * sp.identity(m)]], format="csc")
    return SparseMatrix.from_scipy(K, "symmetric-lower")


def build_pne_ldl(
    A: SparseMatrix,
    H: SparseMatrix,
    theta_inv,
    rho: float,
    delta: float,
    plan: SparsificationPlan,
    pivot_thr: float | None = None,
    allow_2x2: bool | None = None,
) -> NormalLdlPreconditioner:
    """Normal-equations preconditioner dropping the non-basic columns, applied by LDL^T.

    Factorizes ``[[-(Q_BB + rho I), A_B^T], [A_B, delta I]]`` where ``B``
    is every column outside ``plan.partition.nonbasic`` and
    ``Q = H + Diag(theta_inv)``.
    """
    kept = plan.partition.kept
    theta_inv = np.asarray(theta_inv, dtype=np.float64)
    Q = (H.full + sp.diags(theta_inv)).tocsr()
    F = Q[kept, :][:, kept] + rho * sp.identity(len(kept))
    AB = A.full[:, kept]
    thr, two = default_pivot_threshold(delta, rho, implicit_normal=True)
    if pivot_thr is not None:
        thr = pivot_thr
    if allow_2x2 is not None:
        two = allow_2x2
    factor = ldlt(_saddle_lower(F, AB, delta), thr, two)
    return NormalLdlPreconditioner(factor, len(kept), A.nrows, plan)


class AugmentedBlockPreconditioner(Preconditioner):
    """``P_AS = blockdiag(Qhat + rho I, P_NE)``."""

    def __init__(self, f11: CholFactor, ne: Preconditioner, plan):
        self.f11 = f11
        self.ne = ne
        self.n = f11.n
        self.size = f11.n + ne.size
        self.plan = plan
        self.kind = "pas-chol" if ne.kind == "pne-chol" else "pas-ldl"

    @property
    def nnz(self) -> int:
        return self.f11.nnz_L + self.ne.nnz

    def apply_inverse(self, r) -> np.ndarray:
        r = self._check(r)
        return np.concatenate([self.f11.solve(r[: self.n]), self.ne.apply_inverse(r[self.n:])])


def build_pas(qhat: HessianApprox, rho: float, ne_handle: Preconditioner) -> AugmentedBlockPreconditioner:
    """Block-diagonal saddle-point preconditioner around a normal-equations preconditioner."""
    if ne_handle.kind not in ("pne-chol", "pne-ldl"):
        raise ValueError("build_pas needs a pne-chol or pne-ldl preconditioner")
    n = qhat.qhat.nrows
    F = SparseMatrix.from_scipy(qhat.qhat.full + rho * sp.identity(n), "symmetric-lower")
    return AugmentedBlockPreconditioner(cholesky(F), ne_handle, ne_handle.plan)


class FactorPreconditioner(Preconditioner):
    """``P = Phat_K Phat_K^T`` with ``Phat_K = Pi^T L |D|^{1/2}`` from ``Khat = Pi^T L D L^T Pi``."""

    kind = "pk"

    def __init__(self, factor: LdlFactor, plan):
        if factor.used_2x2:
            raise ValueError("the pk preconditioner needs a strictly diagonal D")
        self.factor = factor
        self.size = factor.n
        self.plan = plan
        self._sqrt_abs_d = np.sqrt(np.abs(factor.d))

    @property
    def nnz(self) -> int:
        return self.factor.nnz_L

    def solve_factor(self, r) -> np.ndarray:
        """``Phat_K^{-1} r``."""
        f = self.factor
        y = f._tri.lower(f.perm.apply(self._check(r)))
        return y / self._scale(y)

    def solve_factor_t(self, r) -> np.ndarray:
        """``Phat_K^{-T} r``."""
        f = self.factor
        r = self._check(r)
        return f.perm.apply_inverse(f._tri.upper(r / self._scale(r)))

    def _scale(self, v):
        return self._sqrt_abs_d if v.ndim == 1 else self._sqrt_abs_d[:, None]

    def apply_inverse(self, r) -> np.ndarray:
        return self.solve_factor_t(self.solve_factor(r))

    def two_sided_dense(self, K) -> np.ndarray:
        """``Phat_K^{-1} K Phat_K^{-T}`` for a dense or sparse ``K`` (diagnostics)."""
        K = K.toarray() if hasattr(K, "toarray") else np.asarray(K, dtype=np.float64)
        # Phat^{-1} K Phat^{-T} = Phat^{-1} (Phat^{-1} K)^T for symmetric K
        out = self.solve_factor(self.solve_factor(K).T)
        return 0.5 * (out + out.T)


def build_pk(
    A: SparseMatrix,
    qhat: HessianApprox,
    rho: float,
    delta: float,
    plan: SparsificationPlan,
    pivot_thr: float | None = None,
) -> FactorPreconditioner:
    """Factorization-based preconditioner from ``Khat`` with non-basic columns of ``A`` zeroed.

    Only 1x1 pivots are allowed; :class:`~regsaddle.factor.PivotBreakdown`
    signals that regularization was too small for a stable factorization.
    """
    n = A.ncols
    mask = np.ones(n)
    mask[plan.partition.nonbasic] = 0.0
    Ahat = (A.full @ sp.diags(mask)).tocsc()
    Ahat.eliminate_zeros()
    F = qhat.qhat.full + rho * sp.identity(n)
    thr = default_pivot_threshold(delta, rho)[0] if pivot_thr is None else pivot_thr
    factor = ldlt(_saddle_lower(F, Ahat, delta), thr, allow_2x2=False)
    return FactorPreconditioner(factor, plan)


def apply_inverse(handle: Preconditioner, r) -> np.ndarray:
    """Apply ``P^{-1}`` for any preconditioner kind."""
    return handle.apply_inverse(r)
