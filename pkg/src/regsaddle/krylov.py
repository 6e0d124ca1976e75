"""Preconditioned CG and MINRES with a caller-supplied iteration sink.

Both solvers start from zero, use the short recurrences only (no restarts,
no reorthogonalization) and confirm convergence with one true residual
``||b - A x|| / ||b||`` before reporting ``converged``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

Operator = Callable[[np.ndarray], np.ndarray]
Sink = Callable[[int, float], None]
KrylovStatus = Literal["converged", "max_iter", "breakdown"]


@dataclass
class KrylovResult:
    """Outcome of a Krylov solve.

    ``final_relres`` is the true relative residual ``||b - A x|| / ||b||``
    of the returned solution. ``history`` holds the recurrence estimate
    after every iteration (for MINRES this is measured in the
    preconditioner norm).
    """

    solution: np.ndarray
    iterations: int
    final_relres: float
    status: KrylovStatus
    history: list[float] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def adaptive_tol(mu: float, rhs_norm: float, tol: float = 1e-6) -> float:
    """Relative tolerance ``min(1e-3, max(0.1 mu, tol)) / max(1, rhs_norm)``."""
    return min(1e-3, max(0.1 * mu, tol)) / max(1.0, rhs_norm)


def _true_relres(apply_A, b, x, bnorm):
    return float(np.linalg.norm(b - apply_A(x))) / bnorm


def _trivial(b):
    return KrylovResult(np.zeros_like(b), 0, 0.0, "converged", [])


def pcg(apply_A: Operator, apply_Pinv: Operator, b, tol: float = 1e-6, max_iter: int = 100, sink: Sink | None = None) -> KrylovResult:
    """Preconditioned conjugate gradients for an SPD ``A`` and SPD ``P``.

    Returns ``breakdown`` on nonpositive curvature ``p^T A p <= 0`` or a
    nonpositive ``r^T P^{-1} r``, both of which mean an operator is not SPD.
    """
    b = np.asarray(b, dtype=np.float64)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return _trivial(b)
    x = np.zeros_like(b)
    r = b.copy()
    z = apply_Pinv(r)
    p = z.copy()
    rz = float(r @ z)
    history: list[float] = []
    target = tol
    if not rz > 0:
        return KrylovResult(x, 0, 1.0, "breakdown", history)
    for k in range(1, max_iter + 1):
        q = apply_A(p)
        pq = float(p @ q)
        if not pq > 0:
            return KrylovResult(x, k - 1, _true_relres(apply_A, b, x, bnorm), "breakdown", history)
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        est = float(np.linalg.norm(r)) / bnorm
        history.append(est)
        if sink is not None:
            sink(k, est)
        if est <= target:
            true = _true_relres(apply_A, b, x, bnorm)
            if true <= tol:
                return KrylovResult(x, k, true, "converged", history)
            # recurrence drifted; demand more from it before checking again
            target = est * tol / true
        if k == max_iter:
            break
        z = apply_Pinv(r)
        rz_new = float(r @ z)
        if not rz_new > 0:
            return KrylovResult(x, k, _true_relres(apply_A, b, x, bnorm), "breakdown", history)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return KrylovResult(x, max_iter, _true_relres(apply_A, b, x, bnorm), "max_iter", history)


def minres(apply_A: Operator, apply_Pinv: Operator, b, tol: float = 1e-6, max_iter: int = 200, sink: Sink | None = None) -> KrylovResult:
    """Preconditioned MINRES for symmetric (possibly indefinite) ``A`` and SPD ``P``.

    Follows the Paige-Saunders recurrences; the estimate ``phibar`` is the
    residual in the ``P^{-1}`` norm and never increases. The stopping test
    compares ``phibar / ||b||_{P^{-1}}`` with ``tol`` and is then confirmed
    on the true residual.
    """
    b = np.asarray(b, dtype=np.float64)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return _trivial(b)
    n = len(b)
    x = np.zeros(n)
    r1 = b.copy()
    y = apply_Pinv(r1)
    beta1 = float(r1 @ y)
    history: list[float] = []
    if not beta1 > 0:
        return KrylovResult(x, 0, 1.0, "breakdown", history)
    beta1 = math.sqrt(beta1)
    oldb, beta = 0.0, beta1
    dbar = epsln = 0.0
    phibar = beta1
    cs, sn = -1.0, 0.0
    w = np.zeros(n)
    w2 = np.zeros(n)
    r2 = r1
    target = tol
    eps = np.finfo(float).eps
    for k in range(1, max_iter + 1):
        v = y / beta
        y = apply_A(v)
        if k >= 2:
            y = y - (beta / oldb) * r1
        alfa = float(v @ y)
        y = y - (alfa / beta) * r2
        r1, r2 = r2, y
        y = apply_Pinv(r2)
        oldb = beta
        beta_sq = float(r2 @ y)
        if beta_sq < 0:
            return KrylovResult(x, k - 1, _true_relres(apply_A, b, x, bnorm), "breakdown", history)
        beta = math.sqrt(beta_sq)

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(math.hypot(gbar, beta), eps)
        cs, sn = gbar / gamma, beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1, w2 = w2, w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w

        est = phibar / beta1
        history.append(est)
        if sink is not None:
            sink(k, est)
        if est <= target or beta == 0.0:
            true = _true_relres(apply_A, b, x, bnorm)
            if true <= tol:
                return KrylovResult(x, k, true, "converged", history)
            if beta == 0.0:
                return KrylovResult(x, k, true, "breakdown", history)
            target = est * tol / true
    return KrylovResult(x, max_iter, _true_relres(apply_A, b, x, bnorm), "max_iter", history)
