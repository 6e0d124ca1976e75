"""Immutable compressed-sparse-column storage and the kernels built on it.

`SparseMatrix` is a thin, validated CSC container. Numerical kernels
delegate to :mod:`scipy.sparse`; the container keeps the invariants
(sorted row indices, summed duplicates, explicit zeros kept) and a
symmetry tag so that symmetric matrices can be stored by their lower
triangle only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import numpy as np
import scipy.sparse as sp

Symmetry = Literal["general", "symmetric-lower"]


class DimensionError(ValueError):
    """Raised when operand shapes do not agree."""


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Compressed sparse column matrix with an explicit symmetry tag.

    With ``symmetry="symmetric-lower"`` only entries on or below the
    diagonal are stored and every kernel acts with the full symmetric
    operator.
    """

    nrows: int
    ncols: int
    col_ptr: np.ndarray
    row_idx: np.ndarray
    values: np.ndarray
    symmetry: Symmetry = "general"
    _checked: bool = field(default=True, repr=False)

    def __post_init__(self):
        col_ptr = np.asarray(self.col_ptr, dtype=np.int64)
        row_idx = np.asarray(self.row_idx, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        for name, arr in (("col_ptr", col_ptr), ("row_idx", row_idx), ("values", values)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self._checked:
            self._validate()

    def _validate(self):
        n, m = self.ncols, self.nrows
        cp, ri = self.col_ptr, self.row_idx
        if cp.shape != (n + 1,) or cp[0] != 0 or cp[-1] != len(self.values):
            raise ValueError("col_ptr must have length ncols+1, start at 0 and end at nnz")
        if len(ri) != len(self.values):
            raise ValueError("row_idx and values must have equal length")
        if np.any(np.diff(cp) < 0):
            raise ValueError("col_ptr must be non-decreasing")
        if len(ri) and (ri.min() < 0 or ri.max() >= m):
            raise ValueError("row index out of range")
        cols = np.repeat(np.arange(n), np.diff(cp))
        if len(ri) > 1:
            same_col = cols[1:] == cols[:-1]
            if np.any(same_col & (ri[1:] <= ri[:-1])):
                raise ValueError("row indices must be strictly increasing within a column")
        if self.symmetry == "symmetric-lower":
            if m != n:
                raise ValueError("symmetric-lower storage requires a square matrix")
            if np.any(ri < cols):
                raise ValueError("symmetric-lower storage holds entries above the diagonal")
        elif self.symmetry != "general":
            raise ValueError(f"unknown symmetry tag {self.symmetry!r}")

    # -- construction -------------------------------------------------------

    @classmethod
    def from_triplets(cls, nrows, ncols, rows, cols, vals, symmetry: Symmetry = "general"):
        """Build from coordinate triplets; duplicates are summed.

        For ``symmetric-lower`` entries above the diagonal are mirrored
        into the lower triangle before summation.
        """
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=np.float64).ravel()
        if not (len(rows) == len(cols) == len(vals)):
            raise ValueError("triplet arrays must have equal length")
        if len(rows) and (rows.min() < 0 or rows.max() >= nrows or cols.min() < 0 or cols.max() >= ncols):
            raise ValueError("triplet index out of range")
        if symmetry == "symmetric-lower":
            rows, cols = np.maximum(rows, cols), np.minimum(rows, cols)
        order = np.lexsort((rows, cols))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if len(rows):
            start = np.ones(len(rows), dtype=bool)
            start[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            idx = np.flatnonzero(start)
            vals = np.add.reduceat(vals, idx)
            rows, cols = rows[idx], cols[idx]
        col_ptr = np.zeros(ncols + 1, dtype=np.int64)
        np.cumsum(np.bincount(cols, minlength=ncols), out=col_ptr[1:])
        return cls(nrows, ncols, col_ptr, rows, vals, symmetry)

    @classmethod
    def from_dense(cls, M, symmetry: Symmetry = "general"):
        """Build from a dense array, storing its structurally nonzero entries."""
        M = np.atleast_2d(np.asarray(M, dtype=np.float64))
        if symmetry == "symmetric-lower":
            M = np.tril(M)
        r, c = np.nonzero(M)
        return cls.from_triplets(M.shape[0], M.shape[1], r, c, M[r, c], symmetry)

    @classmethod
    def from_scipy(cls, S, symmetry: Symmetry = "general"):
        """Build from any scipy sparse matrix; explicit zeros are kept."""
        S = sp.coo_matrix(S)
        r, c, v = S.row, S.col, S.data
        if symmetry == "symmetric-lower":
            keep = r >= c
            r, c, v = r[keep], c[keep], v[keep]
        return cls.from_triplets(S.shape[0], S.shape[1], r, c, v, symmetry)

    @classmethod
    def identity(cls, n: int, scale: float = 1.0, symmetry: Symmetry = "symmetric-lower"):
        idx = np.arange(n)
        return cls(n, n, np.arange(n + 1), idx, np.full(n, float(scale)), symmetry)

    @classmethod
    def diag(cls, d, symmetry: Symmetry = "symmetric-lower"):
        d = np.asarray(d, dtype=np.float64)
        n = len(d)
        return cls(n, n, np.arange(n + 1), np.arange(n), d, symmetry)

    @classmethod
    def zeros(cls, nrows: int, ncols: int, symmetry: Symmetry = "general"):
        return cls(nrows, ncols, np.zeros(ncols + 1, dtype=np.int64), [], [], symmetry)

    # -- views --------------------------------------------------------------

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nrows, self.ncols)

    @property
    def nnz(self) -> int:
        return len(self.values)

    @property
    def is_symmetric(self) -> bool:
        return self.symmetry == "symmetric-lower"

    @cached_property
    def stored(self) -> sp.csc_matrix:
        """The stored entries as a scipy CSC matrix (lower triangle only if symmetric)."""
        return sp.csc_matrix((self.values, self.row_idx, self.col_ptr), shape=self.shape)

    @cached_property
    def full(self) -> sp.csc_matrix:
        """The full operator as a scipy CSC matrix."""
        S = self.stored
        if self.is_symmetric:
            strict = sp.tril(S, k=-1, format="csc")
            S = (S + strict.T).tocsc()
        return S

    @cached_property
    def _full_t(self) -> sp.csr_matrix:
        return self.full.T.tocsr()

    def toarray(self) -> np.ndarray:
        return self.full.toarray()

    def diagonal(self) -> np.ndarray:
        return self.stored.diagonal()

    def is_diagonal(self) -> bool:
        """True when every stored entry lies on the diagonal (structural test)."""
        cols = np.repeat(np.arange(self.ncols), np.diff(self.col_ptr))
        return bool(np.all(self.row_idx == cols))

    def __repr__(self):
        return f"SparseMatrix({self.nrows}x{self.ncols}, nnz={self.nnz}, {self.symmetry})"


@dataclass(frozen=True, eq=False)
class Permutation:
    """A bijection on ``0..size-1``.

    ``forward[i]`` is the original index placed at position ``i``, so the
    permuted vector is ``x[forward]`` and the symmetrically permuted matrix
    is ``S[forward][:, forward]``.
    """

    forward: np.ndarray

    def __post_init__(self):
        fwd = np.asarray(self.forward, dtype=np.int64).ravel()
        n = len(fwd)
        if n and not np.array_equal(np.sort(fwd), np.arange(n)):
            raise ValueError("permutation must be a bijection on 0..size-1")
        fwd.setflags(write=False)
        object.__setattr__(self, "forward", fwd)

    @classmethod
    def identity(cls, n: int) -> Permutation:
        return cls(np.arange(n))

    @classmethod
    def leading(cls, first, n: int) -> Permutation:
        """Permutation moving the indices ``first`` (in the given order) to the front."""
        first = np.asarray(first, dtype=np.int64)
        rest = np.setdiff1d(np.arange(n), first)
        return cls(np.concatenate([first, rest]))

    @property
    def size(self) -> int:
        return len(self.forward)

    @cached_property
    def inverse_array(self) -> np.ndarray:
        inv = np.empty_like(self.forward)
        inv[self.forward] = np.arange(len(self.forward))
        return inv

    def inverse(self) -> Permutation:
        return Permutation(self.inverse_array)

    def compose(self, other: Permutation) -> Permutation:
        """Apply ``other`` first, then ``self``."""
        return Permutation(other.forward[self.forward])

    def apply(self, x):
        return np.asarray(x)[self.forward]

    def apply_inverse(self, x):
        return np.asarray(x)[self.inverse_array]


def _check_vec(x, n, what):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or len(x) != n:
        raise DimensionError(f"{what}: expected a vector of length {n}, got shape {x.shape}")
    return x


def spmv(A: SparseMatrix, x, transpose: bool = False) -> np.ndarray:
    """Return ``A @ x`` (or ``A.T @ x``); symmetric storage acts as the full operator."""
    if transpose:
        x = _check_vec(x, A.nrows, "spmv")
        if A.is_symmetric:
            return A.full @ x
        return A._full_t @ x
    x = _check_vec(x, A.ncols, "spmv")
    return A.full @ x


def extract_columns(A: SparseMatrix, cols) -> SparseMatrix:
    """The ``m x len(cols)`` submatrix with columns in the given order."""
    cols = np.asarray(cols, dtype=np.int64).ravel()
    if len(cols) and (cols.min() < 0 or cols.max() >= A.ncols):
        raise IndexError("column index out of range")
    sub = A.full[:, cols] if len(cols) else sp.csc_matrix((A.nrows, 0))
    return SparseMatrix.from_scipy(sub)


def extract_submatrix(A: SparseMatrix, rows, cols, symmetry: Symmetry = "general") -> SparseMatrix:
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    sub = A.full.tocsr()[rows, :].tocsc()[:, cols]
    return SparseMatrix.from_scipy(sub, symmetry)


def normal_matrix(A: SparseMatrix, g, delta: float) -> SparseMatrix:
    """``A diag(g) A^T + delta I`` as a symmetric-lower matrix."""
    g = _check_vec(g, A.ncols, "normal_matrix")
    if not delta > 0:
        raise ValueError("delta must be positive")
    if np.any(g <= 0):
        raise ValueError("scaling vector g must be entrywise positive")
    Af = A.full
    M = (Af @ sp.diags(g) @ Af.T + delta * sp.identity(A.nrows)).tocsc()
    return SparseMatrix.from_scipy(M, "symmetric-lower")


def nnz_profile(A: SparseMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Structural per-column and per-row counts of the full operator (stored zeros count)."""
    S = A.full
    col_counts = np.diff(S.indptr).astype(np.int64)
    row_counts = np.bincount(S.indices, minlength=A.nrows).astype(np.int64)
    return col_counts, row_counts
