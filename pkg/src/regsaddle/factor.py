"""Sparse Cholesky and threshold-pivoted LDL^T factorizations.

Both factorizations run a right-looking elimination over an explicit
symmetric adjacency structure, following a fill-reducing minimum-degree
order. The LDL^T variant may delay a pivot to the end of the order or,
when allowed, pair it with a neighbour into a 2x2 block.
"""

from __future__ import annotations

import heapq
import logging
from collections import deque
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .sparse import DimensionError, Permutation, SparseMatrix

logger = logging.getLogger(__name__)

#: Absolute pivot threshold used when no regularization information is given.
DEFAULT_PIVOT_THRESHOLD = 1e-12


class NotPositiveDefinite(ArithmeticError):
    """A Cholesky pivot was not strictly positive."""

    def __init__(self, index: int, pivot: float):
        super().__init__(f"non-positive pivot {pivot:.3e} at index {index}")
        self.index = index
        self.pivot = pivot


class PivotBreakdown(ArithmeticError):
    """No admissible pivot remained in an LDL^T factorization."""

    def __init__(self, remaining, pivot_thr: float):
        super().__init__(
            f"LDL^T breakdown: {len(remaining)} remaining pivots all below threshold {pivot_thr:.1e}"
        )
        self.remaining = list(remaining)
        self.pivot_thr = pivot_thr


def _adjacency(S: SparseMatrix):
    """Diagonal values and symmetric off-diagonal dictionaries of ``S``."""
    n = S.nrows
    if S.nrows != S.ncols:
        raise DimensionError("factorization requires a square matrix")
    lower = sp.tril(S.full, format="coo") if not S.is_symmetric else S.stored.tocoo()
    diag = np.zeros(n)
    off: list[dict[int, float]] = [dict() for _ in range(n)]
    for i, j, v in zip(lower.row.tolist(), lower.col.tolist(), lower.data.tolist()):
        if i == j:
            diag[i] += v
        else:
            off[i][j] = off[i].get(j, 0.0) + v
            off[j][i] = off[j].get(i, 0.0) + v
    return diag, off


def analyze_order(S: SparseMatrix) -> Permutation:
    """Minimum-degree ordering of the symmetric pattern of ``S``.

    Eliminates, at every step, a node of smallest current degree in the
    elimination graph (ties broken by lowest index) and joins its
    neighbours into a clique.
    """
    n = S.nrows
    _, off = _adjacency(S)
    adj = [set(o) for o in off]
    heap = [(len(adj[i]), i) for i in range(n)]
    heapq.heapify(heap)
    done = np.zeros(n, dtype=bool)
    order = []
    while heap:
        deg, p = heapq.heappop(heap)
        if done[p] or deg != len(adj[p]):
            continue
        done[p] = True
        order.append(p)
        nbrs = adj[p]
        for i in nbrs:
            adj[i].discard(p)
            adj[i].update(nbrs)
            adj[i].discard(i)
            heapq.heappush(heap, (len(adj[i]), i))
        adj[p] = set()
    return Permutation(np.array(order, dtype=np.int64))


def symbolic_nnz(S: SparseMatrix, order: Permutation | None = None) -> int:
    """Number of entries of the Cholesky factor (diagonal included) under ``order``."""
    n = S.nrows
    _, off = _adjacency(S)
    adj = [set(o) for o in off]
    if order is None:
        order = Permutation.identity(n)
    count = 0
    for p in order.forward.tolist():
        nbrs = adj[p]
        count += 1 + len(nbrs)
        for i in nbrs:
            adj[i].discard(p)
            adj[i].update(nbrs)
            adj[i].discard(i)
        adj[p] = set()
    return count


@dataclass(frozen=True, eq=False)
class CholFactor:
    """``P S P^T = L L^T`` with ``L`` lower triangular in permuted coordinates."""

    L: SparseMatrix
    perm: Permutation

    @property
    def nnz_L(self) -> int:
        return self.L.nnz

    @property
    def n(self) -> int:
        return self.L.nrows

    @cached_property
    def _lower(self):
        return self.L.full.tocsr()

    @cached_property
    def _upper(self):
        return self.L.full.T.tocsr()

    @cached_property
    def _tri(self):
        return _TriangularSolver(self.L)

    def solve(self, b) -> np.ndarray:
        return solve_chol(self, b)


@dataclass(frozen=True, eq=False)
class LdlFactor:
    """``P K P^T = L D L^T`` with unit lower ``L`` and block-diagonal ``D``.

    ``d`` holds the diagonal of ``D`` and ``e[k]`` the entry ``D[k+1, k]``,
    nonzero only where a 2x2 block starts at ``k``.
    """

    L: SparseMatrix
    d: np.ndarray
    e: np.ndarray
    perm: Permutation
    pivot_thr: float
    used_2x2: bool

    @property
    def nnz_L(self) -> int:
        return self.L.nnz

    @property
    def n(self) -> int:
        return self.L.nrows

    @cached_property
    def _lower(self):
        return self.L.full.tocsr()

    @cached_property
    def _upper(self):
        return self.L.full.T.tocsr()

    @cached_property
    def _tri(self):
        return _TriangularSolver(self.L)

    @cached_property
    def blocks(self) -> list[tuple[int, int]]:
        """``(start, size)`` for each diagonal block of ``D``."""
        out, k, n = [], 0, len(self.d)
        while k < n:
            size = 2 if k + 1 < n and self.e[k] != 0.0 else 1
            out.append((k, size))
            k += size
        return out

    def D_dense(self) -> np.ndarray:
        D = np.diag(self.d)
        idx = np.flatnonzero(self.e)
        D[idx + 1, idx] = self.e[idx]
        D[idx, idx + 1] = self.e[idx]
        return D

    def inertia(self) -> tuple[int, int, int]:
        """(negative, zero, positive) eigenvalue counts of ``D``."""
        neg = zero = pos = 0
        for k, size in self.blocks:
            if size == 1:
                ev = [self.d[k]]
            else:
                ev = np.linalg.eigvalsh(np.array([[self.d[k], self.e[k]], [self.e[k], self.d[k + 1]]]))
            for v in ev:
                neg += v < 0
                zero += v == 0
                pos += v > 0
        return int(neg), int(zero), int(pos)

    def solve_D(self, v) -> np.ndarray:
        out = np.empty_like(v)
        if not self.used_2x2:
            if np.any(self.d == 0):
                raise ZeroDivisionError("singular D block")
            return v / (self.d if v.ndim == 1 else self.d[:, None])
        for k, size in self.blocks:
            if size == 1:
                if self.d[k] == 0:
                    raise ZeroDivisionError("singular D block")
                out[k] = v[k] / self.d[k]
            else:
                a, b, c = self.d[k], self.e[k], self.d[k + 1]
                det = a * c - b * b
                if det == 0:
                    raise ZeroDivisionError("singular D block")
                out[k] = (c * v[k] - b * v[k + 1]) / det
                out[k + 1] = (a * v[k + 1] - b * v[k]) / det
        return out

    def solve(self, b) -> np.ndarray:
        return solve_ldlt(self, b)


def _eliminate(S: SparseMatrix, order: Permutation, *, cholesky: bool, pivot_thr: float, allow_2x2: bool):
    """Right-looking symmetric elimination.

    Returns the final elimination order, the L columns keyed by original
    index, the diagonal/sub-diagonal of D in elimination order and whether
    a 2x2 block was taken.
    """
    n = S.nrows
    diag, off = _adjacency(S)
    queue = deque(order.forward.tolist())
    eliminated = np.zeros(n, dtype=bool)
    elim_order: list[int] = []
    lcols: dict[int, dict[int, float]] = {}
    d_out: list[float] = []
    e_out: list[float] = []
    used_2x2 = False
    stalls = 0

    def take_1x1(p):
        dp = diag[p]
        nbrs = off[p]
        lcols[p] = {i: v / dp for i, v in nbrs.items()}
        items = list(nbrs.items())
        for i, vi in items:
            row = off[i]
            del row[p]
            diag[i] -= vi * vi / dp
            for j, vj in items:
                if j < i:
                    upd = vi * vj / dp
                    row[j] = row.get(j, 0.0) - upd
                    off[j][i] = off[j].get(i, 0.0) - upd
        off[p] = {}
        eliminated[p] = True
        elim_order.append(p)
        d_out.append(dp)
        e_out.append(0.0)

    def take_2x2(p, r):
        a, b, c = diag[p], off[p][r], diag[r]
        det = a * c - b * b
        inv = np.array([[c, -b], [-b, a]]) / det
        del off[p][r]
        del off[r][p]
        nbr_set = set(off[p]) | set(off[r])
        coup = {i: (off[p].get(i, 0.0), off[r].get(i, 0.0)) for i in nbr_set}
        lp, lr = {}, {}
        for i, (ci0, ci1) in coup.items():
            l0 = ci0 * inv[0, 0] + ci1 * inv[1, 0]
            l1 = ci0 * inv[0, 1] + ci1 * inv[1, 1]
            lp[i], lr[i] = l0, l1
        items = list(coup.items())
        for i, (ci0, ci1) in items:
            row = off[i]
            row.pop(p, None)
            row.pop(r, None)
            diag[i] -= lp[i] * ci0 + lr[i] * ci1
            for j, (cj0, cj1) in items:
                if j < i:
                    upd = lp[i] * cj0 + lr[i] * cj1
                    row[j] = row.get(j, 0.0) - upd
                    off[j][i] = off[j].get(i, 0.0) - upd
        lcols[p], lcols[r] = lp, lr
        off[p], off[r] = {}, {}
        eliminated[p] = eliminated[r] = True
        elim_order.extend([p, r])
        d_out.extend([a, c])
        e_out.extend([b, 0.0])

    while queue:
        p = queue.popleft()
        if eliminated[p]:
            continue
        dp = diag[p]
        if cholesky:
            if not dp > 0:
                raise NotPositiveDefinite(p, dp)
            take_1x1(p)
            continue
        if abs(dp) >= pivot_thr and dp != 0.0:
            take_1x1(p)
            stalls = 0
            continue
        if allow_2x2 and off[p]:
            r = max(off[p], key=lambda i: (abs(off[p][i]), -i))
            b = off[p][r]
            det = dp * diag[r] - b * b
            if b != 0.0 and abs(b) >= pivot_thr and abs(det) >= pivot_thr * abs(b) and det != 0.0:
                take_2x2(p, r)
                used_2x2 = True
                stalls = 0
                continue
        remaining = [q for q in queue if not eliminated[q]]
        stalls += 1
        if stalls > len(remaining):
            raise PivotBreakdown([p] + remaining, pivot_thr)
        logger.debug("delaying pivot %d (|d|=%.2e < %.2e)", p, abs(dp), pivot_thr)
        queue.append(p)
    e_arr = np.array(e_out[:-1] if e_out else [], dtype=np.float64)
    return np.array(elim_order, dtype=np.int64), lcols, np.array(d_out), e_arr, used_2x2


def _assemble_L(n, elim_order, lcols, unit: bool, scale=None) -> SparseMatrix:
    pos = np.empty(n, dtype=np.int64)
    pos[elim_order] = np.arange(n)
    rows, cols, vals = [], [], []
    for k, p in enumerate(elim_order.tolist()):
        s = 1.0 if scale is None else scale[k]
        rows.append(k)
        cols.append(k)
        vals.append(s)
        for i, v in lcols[p].items():
            rows.append(pos[i])
            cols.append(k)
            vals.append(v * s)
    return SparseMatrix.from_triplets(n, n, rows, cols, vals)


def cholesky(S: SparseMatrix, order: Permutation | None = None) -> CholFactor:
    """Sparse Cholesky factorization ``P S P^T = L L^T``.

    Raises :class:`NotPositiveDefinite` at the first pivot that is not
    strictly positive.
    """
    if order is None:
        order = analyze_order(S)
    elim, lcols, d, _, _ = _eliminate(S, order, cholesky=True, pivot_thr=0.0, allow_2x2=False)
    L = _assemble_L(S.nrows, elim, lcols, unit=False, scale=np.sqrt(d))
    return CholFactor(L, Permutation(elim))


def ldlt(
    K: SparseMatrix,
    pivot_thr: float = DEFAULT_PIVOT_THRESHOLD,
    allow_2x2: bool = False,
    order: Permutation | None = None,
) -> LdlFactor:
    """Sparse ``P K P^T = L D L^T`` with threshold pivoting.

    A diagonal pivot is accepted when its magnitude reaches ``pivot_thr``.
    Otherwise a 2x2 pivot with its largest neighbour is tried (if
    ``allow_2x2``) and, failing that, the pivot is moved to the end of the
    order. :class:`PivotBreakdown` is raised once every remaining pivot has
    been rejected.
    """
    if pivot_thr < 0:
        raise ValueError("pivot_thr must be nonnegative")
    if order is None:
        order = analyze_order(K)
    elim, lcols, d, e, used = _eliminate(K, order, cholesky=False, pivot_thr=pivot_thr, allow_2x2=allow_2x2)
    L = _assemble_L(K.nrows, elim, lcols, unit=True)
    return LdlFactor(L, d, e, Permutation(elim), pivot_thr, used)


def default_pivot_threshold(delta: float, rho: float, implicit_normal: bool = False) -> tuple[float, bool]:
    """Pivot threshold and 2x2 switch for a regularized saddle-point factorization.

    The threshold is ``0.1 * min(delta, rho, 1e-4)``. For the implicit
    normal-equations factorization, once ``min(delta, rho) <= 1e-8`` 2x2
    pivots are enabled with a fixed threshold of ``1e-6``.
    """
    if implicit_normal and min(delta, rho) <= 1e-8:
        return 1e-6, True
    return 0.1 * min(delta, rho, 1e-4), False


class _TriangularSolver:
    """Forward and backward substitution with a sparse lower-triangular ``L``.

    SuperLU with the natural order and no row pivoting reproduces ``L``
    as ``L D^{-1} . D``, so one handle solves with both ``L`` and ``L^T``
    in compiled code.
    """

    def __init__(self, L: SparseMatrix):
        self._lu = splu(L.full.tocsc(), permc_spec="NATURAL", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
        perm = self._lu.perm_r
        if not np.array_equal(perm, np.arange(L.nrows)):
            raise ArithmeticError("triangular factor was row-pivoted")

    def lower(self, b):
        return self._lu.solve(b)

    def upper(self, b):
        return self._lu.solve(b, trans="T")


def _check_rhs(n, b):
    b = np.asarray(b, dtype=np.float64)
    if b.ndim not in (1, 2) or b.shape[0] != n:
        raise DimensionError(f"expected right-hand side with {n} rows")
    return b


def solve_chol(f: CholFactor, b) -> np.ndarray:
    """``S^{-1} b`` for a vector or a block of column vectors."""
    b = _check_rhs(f.n, b)
    if f.n == 0:
        return b.copy()
    y = f._tri.lower(f.perm.apply(b))
    return f.perm.apply_inverse(f._tri.upper(y))


def solve_ldlt(f: LdlFactor, b) -> np.ndarray:
    """``K^{-1} b`` for a vector or a block of column vectors."""
    b = _check_rhs(f.n, b)
    if f.n == 0:
        return b.copy()
    y = f.solve_D(f._tri.lower(f.perm.apply(b)))
    return f.perm.apply_inverse(f._tri.upper(y))
