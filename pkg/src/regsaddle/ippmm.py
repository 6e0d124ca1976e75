"""Regularized primal-dual interior point method (IP-PMM) for LP and convex QP.

Each iteration solves a predictor and a corrector Newton system with the
same preconditioner, either through the normal equations (PCG, diagonal
``H`` only) or through the full saddle-point matrix (MINRES). The
proximal terms ``rho (x - zeta)`` and ``delta (y - lam)`` regularize the
system; ``delta = rho = max(mu, reg_floor)`` track the barrier parameter.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
import scipy.sparse as sp

from . import precond as pc
from .factor import NotPositiveDefinite, PivotBreakdown, cholesky
from .krylov import KrylovResult, adaptive_tol, minres, pcg
from .model import IterateState, ProblemQP, SaddleOperator, apply_saddle, barrier_diagonal
from .sparse import SparseMatrix, spmv

log = logging.getLogger(__name__)

SolveStatus = Literal["converged", "iteration_limit", "ill_posed"]
TAU = 0.995
ACCEPT_RELRES = 1e-3  # three correct digits
SIGMA_MIN, SIGMA_MAX = 0.01, 0.8


class IllPosed(RuntimeError):
    """The factorization broke down even after raising the regularization."""


class IterationLimit(RuntimeError):
    """The IPM stopped before reaching the requested accuracy."""


@dataclass(frozen=True)
class SolverOptions:
    precond_kind: str = "pne-chol"
    tol: float = 1e-6
    max_ipm_iters: int = 100
    max_pcg: int = 100
    max_minres: int = 200
    col_density: float = 0.15
    row_density: float = 0.25
    max_drop: int = 30
    kappa: float = 1.0
    reg_floor: float = 1e-10
    hessian_mode: str | None = None
    prox_reset: Literal["factor10", "always"] = "always"
    krylov_sink: Callable[[int, float], None] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.precond_kind not in pc.PRECOND_KINDS:
            raise ValueError(f"unknown preconditioner {self.precond_kind!r}")
        for name in ("tol", "kappa", "reg_floor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("max_ipm_iters", "max_pcg", "max_minres"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.max_drop < 0:
            raise ValueError("max_drop must be nonnegative")
        for name in ("col_density", "row_density"):
            if not 0 < getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")
        if self.hessian_mode not in (None, "diag-all", "diag-on-N-full-on-B", "block-diag-custom"):
            raise ValueError(f"unknown Hessian mode {self.hessian_mode!r}")
        if self.prox_reset not in ("factor10", "always"):
            raise ValueError("prox_reset must be 'factor10' or 'always'")


@dataclass(frozen=True)
class IpmRecord:
    iteration: int
    mu: float
    delta: float
    rho: float
    krylov_iters_predictor: int
    krylov_iters_corrector: int
    factor_nnz: int
    primal_res: float
    dual_res: float
    alpha_primal: float
    alpha_dual: float
    seconds: float


@dataclass
class IpmTrace:
    records: list[IpmRecord] = field(default_factory=list)
    status: SolveStatus | None = None
    route: str = ""
    precond_kind: str = ""

    def __len__(self):
        return len(self.records)

    @property
    def krylov_solves(self) -> list[tuple[int, int]]:
        return [(r.krylov_iters_predictor, r.krylov_iters_corrector) for r in self.records]

    @property
    def total_krylov(self) -> int:
        return sum(p + c for p, c in self.krylov_solves)

    @property
    def max_factor_nnz(self) -> int:
        return max((r.factor_nnz for r in self.records), default=0)

    @property
    def seconds(self) -> float:
        return sum(r.seconds for r in self.records)


@dataclass(frozen=True)
class Direction:
    dx: np.ndarray
    dy: np.ndarray
    dz: np.ndarray


# -- small building blocks ----------------------------------------------------


def update_regularization(state: IterateState | None, mu_new: float, reg_floor: float = 1e-10) -> tuple[float, float]:
    """``delta = rho = max(mu_new, reg_floor)``."""
    if not mu_new > 0:
        raise ValueError("mu_new must be positive")
    reg = max(mu_new, reg_floor)
    return reg, reg


def _ratio(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, TAU * float(np.min(-v[neg] / dv[neg])))


def step_lengths(state: IterateState, direction: Direction) -> tuple[float, float]:
    """Fraction-to-boundary steps keeping ``x[I]`` and ``z[I]`` above ``(1 - tau)`` of their values."""
    m = state.ineq_mask
    return _ratio(state.x[m], direction.dx[m]), _ratio(state.z[m], direction.dz[m])


def route_for(problem: ProblemQP, kind: str) -> tuple[str, str]:
    """(Krylov method, effective preconditioner kind) for a problem."""
    if not problem.hessian_is_diagonal() and kind.startswith("pne-"):
        kind = "pas-" + kind[4:]
    return ("pcg" if kind.startswith("pne-") else "minres"), kind


def starting_point(problem: ProblemQP) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mehrotra-style starting point from a least-norm primal and least-squares dual estimate."""
    A, m = problem.A, problem.m
    mask = problem.ineq_mask
    AAt = (A.full @ A.full.T).tocsc()
    shift = 1e-8 * max(1.0, float(AAt.diagonal().max(initial=0.0)))
    f = cholesky(SparseMatrix.from_scipy(AAt + shift * sp.identity(m), "symmetric-lower"))
    x = spmv(A, f.solve(problem.b), transpose=True)
    y = f.solve(spmv(A, problem.c + spmv(problem.H, x)))
    z = problem.c + spmv(problem.H, x) - spmv(A, y, transpose=True)
    z[~mask] = 0.0
    if not np.any(mask):
        return x, y, z
    xi, zi = x[mask], z[mask]
    xi = xi + max(-1.5 * xi.min(), 0.0)
    zi = zi + max(-1.5 * zi.min(), 0.0)
    if xi.max() <= 0:
        xi = np.ones_like(xi)
    if zi.max() <= 0:
        zi = np.ones_like(zi)
    xz = float(xi @ zi)
    xi = xi + 0.5 * xz / zi.sum()
    zi = zi + 0.5 * xz / xi.sum()
    x[mask] = np.maximum(xi, 1e-2)
    z[mask] = np.maximum(zi, 1e-2)
    return x, y, z


# -- per-iteration linear algebra ---------------------------------------------


@dataclass
class _Context:
    """Everything a Newton solve needs at the current iterate."""

    problem: ProblemQP
    state: IterateState
    opts: SolverOptions
    dense: pc.DensityPlan
    method: str
    kind: str
    theta_inv: np.ndarray = field(init=False)
    handle: pc.Preconditioner = field(init=False)

    def __post_init__(self):
        self.theta_inv = barrier_diagonal(self.state)
        self.handle = build_preconditioner(self.problem, self.state, self.opts, self.dense, self.kind, self.theta_inv)

    @property
    def g(self) -> np.ndarray:
        return 1.0 / (self.state.rho + self.problem.H.diagonal() + self.theta_inv)


def build_preconditioner(problem: ProblemQP, state: IterateState, opts: SolverOptions, dense: pc.DensityPlan, kind: str, theta_inv=None) -> pc.Preconditioner:
    """Partition the variables and build the requested preconditioner at ``state``."""
    if theta_inv is None:
        theta_inv = barrier_diagonal(state)
    A, H, m, n = problem.A, problem.H, problem.m, problem.n
    delta, rho = state.delta, state.rho
    g = 1.0 / (rho + H.diagonal() + theta_inv)
    part = pc.partition_variables(g, state.mu if state.mu > 0 else opts.reg_floor, opts.kappa, problem.ineq_mask)
    nonbasic = part.nonbasic
    if kind == "pne-chol" or kind == "pas-chol":
        extra = np.setdiff1d(nonbasic, dense.cols)
        plan = pc.SparsificationPlan(m, n, np.concatenate([dense.cols, extra]), dense.rows, part)
    else:
        plan = pc.SparsificationPlan(m, n, nonbasic, pc._EMPTY, part)
    if kind == "pne-chol":
        return pc.build_pne_chol(A, g, delta, plan)
    if kind == "pne-ldl":
        return pc.build_pne_ldl(A, H, theta_inv, rho, delta, plan)
    mode = opts.hessian_mode or ("diag-all" if kind == "pas-chol" else "diag-on-N-full-on-B")
    qhat = pc.sparsify_hessian(H, theta_inv, rho, plan, mode)
    if kind == "pk":
        return pc.build_pk(A, qhat, rho, delta, plan)
    if kind == "pas-chol":
        ghat = 1.0 / (qhat.qhat.diagonal() + rho)
        ne = pc.build_pne_chol(A, ghat, delta, plan)
    else:
        ne = pc.build_pne_ldl(A, H, theta_inv, rho, delta, plan)
    return pc.build_pas(qhat, rho, ne)


def _solve_system(ctx: _Context, xi1, xi2) -> tuple[np.ndarray, np.ndarray, KrylovResult]:
    p, st, opts = ctx.problem, ctx.state, ctx.opts
    if ctx.method == "pcg":
        g = ctx.g
        rhs = xi2 + spmv(p.A, g * xi1)

        def apply_M(v):
            return spmv(p.A, g * spmv(p.A, v, transpose=True)) + st.delta * v

        tol = adaptive_tol(st.mu, float(np.linalg.norm(rhs)), opts.tol)
        res = pcg(apply_M, ctx.handle.apply_inverse, rhs, tol, opts.max_pcg, opts.krylov_sink)
        dy = res.solution
        dx = g * (spmv(p.A, dy, transpose=True) - xi1)
        return dx, dy, res
    op = SaddleOperator(p, ctx.theta_inv, st.delta, st.rho)
    rhs = np.concatenate([xi1, xi2])
    tol = adaptive_tol(st.mu, float(np.linalg.norm(rhs)), opts.tol)
    res = minres(lambda v: apply_saddle(op, v), ctx.handle.apply_inverse, rhs, tol, opts.max_minres, opts.krylov_sink)
    return res.solution[: p.n], res.solution[p.n:], res


def _kkt_pieces(problem: ProblemQP, state: IterateState, zeta, lam):
    """Regularized residuals ``F1`` (dual) and ``F2`` (primal)."""
    A = problem.A
    F1 = problem.c + spmv(problem.H, state.x) + state.rho * (state.x - zeta) - spmv(A, state.y, transpose=True) - state.z
    F2 = spmv(A, state.x) - problem.b + state.delta * (state.y - lam)
    return F1, F2


def _assemble(ctx: _Context, r3, zeta, lam) -> tuple[Direction, KrylovResult]:
    """Newton direction for the complementarity target ``X Z e + X dz + Z dx = XZe + r3``."""
    st = ctx.state
    mask = st.ineq_mask
    F1, F2 = _kkt_pieces(ctx.problem, st, zeta, lam)
    xi1 = F1.copy()
    xi1[mask] -= r3[mask] / st.x[mask]
    dx, dy, res = _solve_system(ctx, xi1, -F2)
    dz = np.zeros_like(dx)
    dz[mask] = (r3[mask] - st.z[mask] * dx[mask]) / st.x[mask]
    return Direction(dx, dy, dz), res


def newton_step(state: IterateState, problem: ProblemQP, opts: SolverOptions, predictor: bool, *, zeta=None, lam=None, sigma: float = 0.0, affine: Direction | None = None, context: _Context | None = None) -> tuple[Direction, int]:
    """One predictor (``sigma = 0``) or corrector Newton solve.

    Returns the direction and the Krylov iterations spent. The proximal
    centers default to the current iterate.
    """
    zeta = state.x if zeta is None else zeta
    lam = state.y if lam is None else lam
    if context is None:
        method, kind = route_for(problem, opts.precond_kind)
        dense = pc.density_plan(problem.A, opts.col_density, opts.row_density, opts.max_drop)
        context = _Context(problem, state, opts, dense, method, kind)
    r3 = _target(state, sigma, None if predictor else affine)
    d, res = _assemble(context, r3, zeta, lam)
    if not (res.converged or res.final_relres <= ACCEPT_RELRES):
        raise _KrylovFailure(res)
    return d, res.iterations


def _target(state: IterateState, sigma: float, affine: Direction | None) -> np.ndarray:
    r3 = sigma * state.mu - state.x * state.z
    if affine is not None:
        r3 = r3 - affine.dx * affine.dz
    r3[~state.ineq_mask] = 0.0
    return r3


class _KrylovFailure(Exception):
    def __init__(self, result: KrylovResult):
        self.result = result
        self.spent = result.iterations


# -- outer loop ---------------------------------------------------------------


def _scaled_residuals(problem: ProblemQP, state: IterateState) -> tuple[float, float]:
    A = problem.A
    rp = spmv(A, state.x) - problem.b
    rd = problem.c + spmv(problem.H, state.x) - spmv(A, state.y, transpose=True) - state.z
    return (
        float(np.linalg.norm(rp)) / (1.0 + float(np.linalg.norm(problem.b))),
        float(np.linalg.norm(rd)) / (1.0 + float(np.linalg.norm(problem.c))),
    )


def centering(mu: float, mu_aff: float, infeas: float) -> float:
    """Mehrotra's ``(mu_aff / mu)^3`` clipped to ``[SIGMA_MIN, SIGMA_MAX]``.

    While ``mu`` is below the scaled infeasibility ``infeas`` the value is
    raised to at least ``0.1 infeas / mu`` so that complementarity does not
    run ahead of feasibility; inexact directions cannot catch up once the
    regularization has reached its floor.
    """
    sigma = min(max((mu_aff / mu) ** 3, SIGMA_MIN), SIGMA_MAX)
    if mu < infeas:
        sigma = max(sigma, min(SIGMA_MAX, 0.1 * infeas / mu))
    return sigma


def _iterate(problem, state, opts, dense, method, kind, zeta, lam):
    """Predictor and corrector at ``state``; returns (direction, iters_pred, iters_corr, nnz)."""
    ctx = _Context(problem, state, opts, dense, method, kind)
    spent = [0, 0]
    aff = None
    try:
        aff, spent[0] = newton_step(state, problem, opts, True, zeta=zeta, lam=lam, context=ctx)
    except _KrylovFailure as exc:
        exc.spent = spent[0] + exc.result.iterations
        raise
    ap, ad = step_lengths(state, aff)
    mask = state.ineq_mask
    n = len(state.x)
    mu_aff = float((state.x[mask] + ap * aff.dx[mask]) @ (state.z[mask] + ad * aff.dz[mask])) / n
    sigma = centering(state.mu, mu_aff, max(_scaled_residuals(problem, state))) if state.mu > 0 else SIGMA_MIN
    try:
        d, spent[1] = newton_step(state, problem, opts, False, zeta=zeta, lam=lam, sigma=sigma, affine=aff, context=ctx)
    except _KrylovFailure as exc:
        exc.spent = spent[0] + exc.result.iterations
        raise
    return d, spent[0], spent[1], ctx.handle.nnz


def solve(problem: ProblemQP, opts: SolverOptions | None = None, *, strict: bool = False) -> tuple[IterateState, IpmTrace, SolveStatus]:
    """Solve ``problem`` to relative accuracy ``opts.tol``.

    The status is ``converged`` when the scaled primal and dual residuals
    and ``mu`` are all at most ``opts.tol``. Failures are reported through
    the status (``iteration_limit``, ``ill_posed``); with ``strict=True``
    they raise :class:`IterationLimit` / :class:`IllPosed` instead.
    """
    opts = opts or SolverOptions()
    method, kind = route_for(problem, opts.precond_kind)
    trace = IpmTrace(route=method, precond_kind=kind)
    dense = pc.density_plan(problem.A, opts.col_density, opts.row_density, opts.max_drop)
    mask = problem.ineq_mask

    x, y, z = starting_point(problem)
    probe = IterateState(x, y, z, 1.0, 1.0, mask)
    reg = update_regularization(probe, max(probe.mu, opts.reg_floor), opts.reg_floor)
    state = probe.replace(delta=reg[0], rho=reg[1])
    zeta, lam = state.x.copy(), state.y.copy()
    res_ref = max(_scaled_residuals(problem, state))
    status: SolveStatus = "iteration_limit"

    for it in range(opts.max_ipm_iters + 1):
        pres, dres = _scaled_residuals(problem, state)
        if pres <= opts.tol and dres <= opts.tol and state.mu <= opts.tol:
            status = "converged"
            break
        if it == opts.max_ipm_iters:
            break
        t0 = time.perf_counter()
        work = state
        spent_pred = spent_corr = 0
        outcome = None
        for attempt in range(2):
            try:
                d, ip, ic, nnz = _iterate(problem, work, opts, dense, method, kind, zeta, lam)
                spent_pred += ip
                spent_corr += ic
                outcome = d
                break
            except _KrylovFailure as exc:
                spent_pred += exc.spent
                log.debug("iteration %d: Krylov solve failed (relres %.2e)", it, exc.result.final_relres)
            except (PivotBreakdown, NotPositiveDefinite) as exc:
                log.debug("iteration %d: factorization failed: %s", it, exc)
                if attempt == 1:
                    status = "ill_posed"
            work = work.replace(delta=10 * work.delta, rho=10 * work.rho)
        if outcome is None:
            if status != "ill_posed":
                status = "iteration_limit"
            break
        ap, ad = step_lengths(work, outcome)
        x_new = work.x + ap * outcome.dx
        z_new = work.z + ad * outcome.dz
        z_new[~mask] = 0.0
        y_new = work.y + ad * outcome.dy
        probe = work.replace(x=x_new, y=y_new, z=z_new)
        delta, rho = update_regularization(probe, max(probe.mu, opts.reg_floor), opts.reg_floor)
        state = probe.replace(delta=delta, rho=rho)

        res_now = max(_scaled_residuals(problem, state))
        if opts.prox_reset == "always" or res_now <= 0.1 * res_ref:
            zeta, lam = state.x.copy(), state.y.copy()
            res_ref = res_now
        trace.records.append(
            IpmRecord(it, state.mu, work.delta, work.rho, spent_pred, spent_corr, nnz, pres, dres, ap, ad, time.perf_counter() - t0)
        )
        log.info("it %3d  mu %.2e  pres %.2e  dres %.2e  krylov %d+%d", it, state.mu, pres, dres, spent_pred, spent_corr)

    trace.status = status
    if strict and status == "ill_posed":
        raise IllPosed("factorization failed after raising the regularization")
    if strict and status == "iteration_limit":
        raise IterationLimit(f"no convergence after {len(trace)} iterations")
    return state, trace, status
