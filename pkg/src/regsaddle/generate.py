"""Random feasible, bounded LP/QP instances in standard form."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .model import ProblemQP
from .sparse import SparseMatrix


def random_problem(
    m: int,
    n: int,
    density: float = 0.1,
    seed: int | None = 0,
    qp: bool = False,
    dense_cols: int = 0,
    dense_rows: int = 0,
    diagonal_hessian: bool = False,
    name: str | None = None,
) -> ProblemQP:
    """Generate ``min c^T x + 1/2 x^T H x, A x = b, x >= 0`` with a known KKT point.

    A strictly complementary primal-dual pair ``(x0, y0, z0)`` is planted,
    so the instance is feasible and has a finite optimum. Every row and
    column of ``A`` gets at least one nonzero; ``dense_cols``/``dense_rows``
    of them are filled completely.
    """
    if m > n:
        raise ValueError("need m <= n for a standard-form instance with full row rank")
    if not 0 < density <= 1:
        raise ValueError("density must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    mask = rng.random((m, n)) < density
    mask[np.arange(m), rng.permutation(n)[:m]] = True
    for j in np.flatnonzero(~mask.any(axis=0)):
        mask[rng.integers(m), j] = True
    if dense_cols:
        mask[:, rng.choice(n, dense_cols, replace=False)] = True
    if dense_rows:
        mask[rng.choice(m, dense_rows, replace=False), :] = True
    Ad = np.where(mask, rng.standard_normal((m, n)), 0.0)
    A = SparseMatrix.from_dense(Ad)

    basic = rng.permutation(n)[:m]
    x0 = np.zeros(n)
    x0[basic] = rng.uniform(0.5, 2.0, m)
    z0 = rng.uniform(0.5, 2.0, n)
    z0[basic] = 0.0
    y0 = rng.standard_normal(m)

    if qp:
        if diagonal_hessian:
            H = sp.diags(rng.uniform(0.1, 2.0, n))
        else:
            R = sp.random(n, n, density=min(1.0, 3.0 / n), random_state=rng.integers(2**31)).toarray()
            H = sp.csc_matrix(R @ R.T + 1e-2 * np.eye(n))
        Hm = SparseMatrix.from_scipy(H, "symmetric-lower")
    else:
        Hm = None
    Hx = Hm.full @ x0 if Hm is not None else 0.0
    c = Ad.T @ y0 + z0 - Hx
    b = Ad @ x0
    return ProblemQP(A, b, c, Hm, name=name or f"rand_{'qp' if qp else 'lp'}_{m}x{n}_s{seed}")
