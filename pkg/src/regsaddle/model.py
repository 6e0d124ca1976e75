"""LP/QP problem data, interior-point iterates and the regularized saddle operator.

Problems are held in the standard form::

    min  c^T x + 1/2 x^T H x   s.t.  A x = b,  x[I] >= 0,  x[F] free

where ``I`` (``ineq_set``) and ``F`` (``free_set``) partition the variables.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .sparse import DimensionError, SparseMatrix, spmv


@dataclass(frozen=True, eq=False)
class ProblemQP:
    """A convex QP (or LP when ``H`` is empty) in standard form.

    ``offset`` is a constant added to the objective; it records the
    contribution of variables fixed or shifted while standardizing a file.
    """

    A: SparseMatrix
    b: np.ndarray
    c: np.ndarray
    H: SparseMatrix | None = None
    free_set: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))
    name: str = "problem"
    offset: float = 0.0

    def __post_init__(self):
        m, n = self.A.shape
        b = np.asarray(self.b, dtype=np.float64)
        c = np.asarray(self.c, dtype=np.float64)
        if b.shape != (m,) or c.shape != (n,):
            raise DimensionError("b and c must match the row and column counts of A")
        H = self.H
        if H is None:
            H = SparseMatrix.zeros(n, n, "symmetric-lower")
        elif not H.is_symmetric:
            H = SparseMatrix.from_scipy(H.full, "symmetric-lower")
        if H.shape != (n, n):
            raise DimensionError("H must be n x n")
        free = np.unique(np.asarray(self.free_set, dtype=np.int64))
        if len(free) and (free.min() < 0 or free.max() >= n):
            raise ValueError("free variable index out of range")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "free_set", free)

    @property
    def m(self) -> int:
        return self.A.nrows

    @property
    def n(self) -> int:
        return self.A.ncols

    @property
    def ineq_set(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n), self.free_set)

    @property
    def ineq_mask(self) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[self.free_set] = False
        return mask

    @property
    def is_lp(self) -> bool:
        return self.H.nnz == 0

    def hessian_is_diagonal(self) -> bool:
        return self.H.is_diagonal()

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        return float(self.c @ x + 0.5 * x @ spmv(self.H, x) + self.offset)


@dataclass(frozen=True, eq=False)
class IterateState:
    """Primal-dual iterate ``(x, y, z)`` with regularization ``delta``/``rho``.

    ``mu`` is derived: ``x[I]^T z[I] / n``, divided by the total variable
    count rather than ``|I|``.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    delta: float
    rho: float
    ineq_mask: np.ndarray

    def __post_init__(self):
        for name in ("x", "y", "z"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if not (self.delta > 0 and self.rho > 0):
            raise ValueError("regularization parameters delta and rho must be positive")
        mask = np.asarray(self.ineq_mask, dtype=bool)
        object.__setattr__(self, "ineq_mask", mask)
        if len(self.x) != len(self.z) or len(mask) != len(self.x):
            raise DimensionError("x, z and the inequality mask must have equal length")

    @property
    def mu(self) -> float:
        m = self.ineq_mask
        return float(self.x[m] @ self.z[m]) / max(len(self.x), 1)

    def is_interior(self) -> bool:
        m = self.ineq_mask
        return bool(np.all(self.x[m] > 0) and np.all(self.z[m] > 0) and np.all(self.z[~m] == 0))

    def replace(self, **changes) -> IterateState:
        fields = dict(x=self.x, y=self.y, z=self.z, delta=self.delta, rho=self.rho, ineq_mask=self.ineq_mask)
        fields.update(changes)
        return IterateState(**fields)


@dataclass(frozen=True)
class ScalingDiagonal:
    """Diagonal ``G = (Q + rho I)^{-1}`` used by the normal equations (``Q`` diagonal)."""

    g: np.ndarray


def barrier_diagonal(state: IterateState) -> np.ndarray:
    """``Theta^{-1} = z / x`` on the inequality set, zero on free variables."""
    theta_inv = np.zeros_like(state.x)
    m = state.ineq_mask
    theta_inv[m] = state.z[m] / state.x[m]
    return theta_inv


def build_scaling(state: IterateState, problem: ProblemQP) -> ScalingDiagonal:
    """``g_j = 1/(rho + H_jj + z_j/x_j)``; ``H_jj`` vanishes for LPs.

    Only meaningful when ``H`` is diagonal.
    """
    if not state.rho > 0:
        raise ValueError("rho must be positive")
    denom = state.rho + problem.H.diagonal() + barrier_diagonal(state)
    return ScalingDiagonal(1.0 / denom)


@dataclass(frozen=True, eq=False)
class SaddleOperator:
    """``K = [[-(Q + rho I), A^T], [A, delta I]]`` with ``Q = H + Diag(theta_inv)``."""

    problem: ProblemQP
    theta_inv: np.ndarray
    delta: float
    rho: float

    @property
    def size(self) -> int:
        return self.problem.n + self.problem.m

    def __call__(self, v) -> np.ndarray:
        return apply_saddle(self, v)

    def to_sparse(self) -> SparseMatrix:
        """The lower triangle of ``K`` as a symmetric-lower matrix."""
        p = self.problem
        F = p.H.full + sp.diags(self.theta_inv + self.rho)
        K = sp.bmat([[-F, None], [p.A.full, self.delta * sp.identity(p.m)]], format="csc")
        return SparseMatrix.from_scipy(K, "symmetric-lower")


def apply_saddle(op: SaddleOperator, v) -> np.ndarray:
    p = op.problem
    n, m = p.n, p.m
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (n + m,):
        raise DimensionError(f"expected a vector of length {n + m}")
    v1, v2 = v[:n], v[n:]
    top = -(spmv(p.H, v1) + (op.theta_inv + op.rho) * v1) + spmv(p.A, v2, transpose=True)
    bottom = spmv(p.A, v1) + op.delta * v2
    return np.concatenate([top, bottom])


def residuals(state: IterateState, problem: ProblemQP) -> tuple[np.ndarray, np.ndarray, float]:
    """Primal ``Ax - b``, dual ``c + Hx - A^T y - z`` and the complementarity ``mu``."""
    primal = spmv(problem.A, state.x) - problem.b
    dual = problem.c + spmv(problem.H, state.x) - spmv(problem.A, state.y, transpose=True) - state.z
    return primal, dual, state.mu
