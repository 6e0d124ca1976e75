"""Dense spectral checks of the preconditioned operators on small instances.

Each ``check_*`` function builds a preconditioner through :mod:`regsaddle.precond`,
extracts the preconditioned spectrum with a dense symmetric eigensolver and
compares it with eigenvalue bounds computed independently from dense
blocks of the instance.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import precond as pc
from .sparse import SparseMatrix

UNIT_TOL = 1e-7
ENDPOINT_RTOL = 1e-9
MAX_DENSE_DIM = 500

CSV_FIELDS = ["theorem", "seed", "m", "n", "kc", "kr", "delta", "rho", "lo", "hi", "eig_min", "eig_max", "unit_count", "guaranteed", "clamped", "pass"]


@dataclass(frozen=True, eq=False)
class SaddleInstance:
    """Dense data ``A`` (m x n) and ``Q`` (n x n, PSD) of ``K = [[-(Q + rho I), A^T], [A, delta I]]``."""

    A: np.ndarray
    Q: np.ndarray
    delta: float
    rho: float
    seed: int | None = None

    def __post_init__(self):
        if not (self.delta > 0 and self.rho > 0):
            raise ValueError("delta and rho must be positive")
        if self.Q.shape != (self.n, self.n):
            raise ValueError("Q must be n x n")

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def F(self) -> np.ndarray:
        return self.Q + self.rho * np.eye(self.n)

    @property
    def K(self) -> np.ndarray:
        return np.block([[-self.F, self.A.T], [self.A, self.delta * np.eye(self.m)]])

    def sparse_A(self) -> SparseMatrix:
        return SparseMatrix.from_dense(self.A)

    def sparse_Q(self) -> SparseMatrix:
        return SparseMatrix.from_dense(self.Q, "symmetric-lower")


def random_instance(
    m: int, n: int, seed: int = 0, delta: float = 1e-2, rho: float = 1e-2, density: float = 0.3, diagonal: bool = True, spread: float = 4.0
) -> SaddleInstance:
    """Random instance whose diagonal mimics IPM barrier terms.

    The diagonal of ``Q`` is ``10**u`` with ``u`` uniform on
    ``[-spread, spread]``.
    """
    rng = np.random.default_rng(seed)
    A = np.where(rng.random((m, n)) < density, rng.standard_normal((m, n)), 0.0)
    A[np.arange(m), rng.permutation(n)[:m]] = rng.standard_normal(m)
    Q = np.diag(10.0 ** rng.uniform(-spread, spread, n))
    if not diagonal:
        R = np.where(rng.random((n, n)) < 2.0 / n, rng.standard_normal((n, n)), 0.0)
        Q = Q + R @ R.T
    return SaddleInstance(A, Q, delta, rho, seed)


@dataclass
class SpectralReport:
    """Preconditioned spectrum compared with its theoretical enclosure."""

    theorem: str
    eigenvalues: np.ndarray
    intervals: list[tuple[float, float]]
    unit_count: int
    guaranteed_unit_count: int
    passed: bool
    clamped: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def interval_lo(self) -> float:
        return min(lo for lo, _ in self.intervals)

    @property
    def interval_hi(self) -> float:
        return max(hi for _, hi in self.intervals)

    def to_line(self) -> str:
        iv = " U ".join(f"[{lo:.6g}, {hi:.6g}]" for lo, hi in self.intervals)
        ev = self.eigenvalues
        tag = "PASS" if self.passed else "FAIL"
        extra = " clamped" if self.clamped else ""
        meta = " ".join(f"{k}={v}" for k, v in self.meta.items())
        return (
            f"{tag} {self.theorem} {meta} eig=[{ev.min():.6g}, {ev.max():.6g}] in {iv} "
            f"unit={self.unit_count}>={self.guaranteed_unit_count}{extra}"
        )

    def csv_row(self) -> dict:
        row = {k: self.meta.get(k, "") for k in ("seed", "m", "n", "kc", "kr", "delta", "rho")}
        row.update(
            theorem=self.theorem,
            lo=repr(self.interval_lo),
            hi=repr(self.interval_hi),
            eig_min=repr(float(self.eigenvalues.min())),
            eig_max=repr(float(self.eigenvalues.max())),
            unit_count=self.unit_count,
            guaranteed=self.guaranteed_unit_count,
            clamped=int(self.clamped),
            **{"pass": int(self.passed)},
        )
        return row


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue()


def dense_eigs(S) -> np.ndarray:
    """All eigenvalues of a dense symmetric matrix, ascending."""
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("expected a square matrix")
    if S.shape[0] > MAX_DENSE_DIM:
        raise ValueError(f"dense eigensolver limited to dimension {MAX_DENSE_DIM}")
    return np.linalg.eigvalsh(0.5 * (S + S.T))


def preconditioned_eigs(handle: pc.Preconditioner, S) -> np.ndarray:
    """Eigenvalues of ``P^{-1} S`` via the similar symmetric ``C^T S C`` with ``C C^T = P^{-1}``."""
    C = np.linalg.cholesky(handle.inverse_dense())
    return dense_eigs(C.T @ np.asarray(S) @ C)


def _inside(ev, intervals) -> bool:
    ok = np.zeros(len(ev), dtype=bool)
    for lo, hi in intervals:
        ok |= (ev >= lo - ENDPOINT_RTOL * max(abs(lo), 1e-300)) & (ev <= hi + ENDPOINT_RTOL * max(abs(hi), 1e-300))
    return bool(ok.all())


def _lmax(S) -> float:
    return float(np.linalg.eigvalsh(S)[-1]) if S.size else 0.0


def _lmin(S) -> float:
    return float(np.linalg.eigvalsh(S)[0]) if S.size else 0.0


def _meta(inst: SaddleInstance, plan: pc.SparsificationPlan | None = None) -> dict:
    meta = {"seed": inst.seed, "m": inst.m, "n": inst.n, "delta": inst.delta, "rho": inst.rho}
    if plan is not None:
        meta.update(kc=plan.kc, kr=plan.kr)
    return meta


def pne_interval(B: np.ndarray, kc: int, kr: int, delta: float) -> tuple[float, float]:
    """Eigenvalue enclosure for ``P_NE^{-1} M_hat`` given the permuted ``B``."""
    if kc == 0 and kr == 0:
        return 1.0, 1.0
    m = B.shape[0]
    B21 = B[kr:, :kc]
    B22 = B[kr:, kc:]
    ratio = _lmax(B21 @ B21.T) / (delta + _lmin(B22 @ B22.T)) if m > kr else 0.0
    lo_r = delta / (delta + float(np.linalg.norm(B, 2)) ** 2)
    if kr == 0:
        return 1.0, 1.0 + ratio
    if kc == 0:
        return lo_r, 2.0
    return lo_r, 2.0 + ratio


def check_pne_intervals(inst: SaddleInstance, plan: pc.SparsificationPlan, ghat=None) -> SpectralReport:
    """Spectrum of the column-dropped, row-sparsified normal-equations preconditioner.

    ``ghat`` defaults to ``1 / (diag(Q) + rho)``.
    """
    if inst.m > 100:
        raise ValueError("check_pne_intervals is limited to m <= 100")
    ghat = 1.0 / (np.diag(inst.Q) + inst.rho) if ghat is None else np.asarray(ghat, dtype=np.float64)
    Mhat = inst.A @ np.diag(ghat) @ inst.A.T + inst.delta * np.eye(inst.m)
    handle = pc.build_pne_chol(inst.sparse_A(), ghat, inst.delta, plan)
    ev = preconditioned_eigs(handle, Mhat)
    pr, pcol = plan.perm_r.forward, plan.perm_c.forward
    B = (inst.A * np.sqrt(ghat))[pr][:, pcol]
    lo, hi = pne_interval(B, plan.kc, plan.kr, inst.delta)
    unit = int(np.sum(np.abs(ev - 1.0) <= UNIT_TOL))
    need = max(inst.m - (2 * plan.kr + plan.kc), 0)
    ok = _inside(ev, [(lo, hi)]) and unit >= need
    return SpectralReport("pne", ev, [(lo, hi)], unit, need, ok, meta=_meta(inst, plan))


def pas_intervals(alpha_f, beta_f, alpha_ne, beta_ne) -> tuple[list[tuple[float, float]], bool]:
    """Enclosure ``I_- U I_+`` of the block-diagonal saddle-point preconditioned spectrum."""
    clamped = beta_ne < 1.0
    minus = (-beta_f - math.sqrt(beta_ne), -alpha_f)
    plus = (0.5 * (-beta_f + math.sqrt(beta_f**2 + 4.0 * alpha_ne)), 1.0 + math.sqrt(max(beta_ne - 1.0, 0.0)))
    return [minus, plus], clamped


def pas_handle(inst: SaddleInstance, plan: pc.SparsificationPlan, mode: str):
    """P_AS for the instance: Cholesky-based P_NE when ``Qhat`` is diagonal, LDL-based otherwise."""
    Qs = inst.sparse_Q()
    qhat = pc.sparsify_hessian(Qs, np.zeros(inst.n), inst.rho, plan, mode)
    A = inst.sparse_A()
    if qhat.is_diagonal():
        ne = pc.build_pne_chol(A, 1.0 / (qhat.qhat.diagonal() + inst.rho), inst.delta, plan)
    else:
        ne = pc.build_pne_ldl(A, Qs, np.zeros(inst.n), inst.rho, inst.delta, plan)
    return pc.build_pas(qhat, inst.rho, ne), qhat.qhat.toarray()


def _dense_pne(inst: SaddleInstance, Fhat: np.ndarray, plan: pc.SparsificationPlan, ldl: bool) -> np.ndarray:
    """``P_NE`` formed densely from its definition."""
    A, d, m = inst.A, inst.delta, inst.m
    if ldl:
        keep = plan.partition.kept
        AB = A[:, keep]
        return AB @ np.linalg.solve(Fhat[np.ix_(keep, keep)], AB.T) + d * np.eye(m)
    g = 1.0 / np.diag(Fhat)
    R, S, kept = plan.sparsify_rows, plan.other_rows, plan.kept_cols
    P = np.zeros((m, m))
    P[np.ix_(R, R)] = (A[R] * g) @ A[R].T
    P[np.ix_(S, S)] = (A[np.ix_(S, kept)] * g[kept]) @ A[np.ix_(S, kept)].T
    return P + d * np.eye(m)


def check_pas_intervals(inst: SaddleInstance, plan: pc.SparsificationPlan | None = None, mode: str = "diag-all") -> SpectralReport:
    """Spectrum of ``P_AS^{-1} K`` against the two-interval enclosure.

    Also records ``mean(eig(Fhat^{-1} F))`` in ``meta["trace_mean"]``.
    """
    if inst.n + inst.m > 200:
        raise ValueError("check_pas_intervals is limited to n + m <= 200")
    plan = plan or pc.make_plan(inst.m, inst.n)
    handle, Qhat = pas_handle(inst, plan, mode)
    Fhat = Qhat + inst.rho * np.eye(inst.n)
    ev = preconditioned_eigs(handle, inst.K)

    Lf = np.linalg.cholesky(Fhat)
    Li = np.linalg.inv(Lf)
    ef = dense_eigs(Li @ inst.F @ Li.T)
    Mhat = inst.A @ np.linalg.solve(Fhat, inst.A.T) + inst.delta * np.eye(inst.m)
    Pne = _dense_pne(inst, Fhat, plan, ldl=handle.ne.kind == "pne-ldl")
    Lp = np.linalg.inv(np.linalg.cholesky(Pne))
    ene = dense_eigs(Lp @ Mhat @ Lp.T)
    intervals, clamped = pas_intervals(ef[0], ef[-1], ene[0], ene[-1])
    ok = _inside(ev, intervals)
    meta = _meta(inst, plan)
    meta.update(mode=mode, trace_mean=float(ef.mean()))
    return SpectralReport("pas", ev, intervals, 0, 0, ok, clamped, meta)


def pk_guaranteed(m: int, n: int, n_dropped: int) -> tuple[int, int]:
    """Eigenvalues guaranteed at ``+1`` and ``-1`` when ``n_dropped`` columns are zeroed."""
    return max(m - n_dropped, 0), max(n - 2 * n_dropped, 0)


def check_pk_spectrum(inst: SaddleInstance, plan: pc.SparsificationPlan | None = None, tol: float = 1e-9) -> SpectralReport:
    """Spectrum of ``Phat_K^{-1} K Phat_K^{-T}``; all of it sits at +-1 without dropping."""
    if inst.n + inst.m > 200:
        raise ValueError("check_pk_spectrum is limited to n + m <= 200")
    plan = plan or pc.make_plan(inst.m, inst.n)
    qhat = pc.sparsify_hessian(inst.sparse_Q(), np.zeros(inst.n), inst.rho, plan, "diag-on-N-full-on-B")
    handle = pc.build_pk(inst.sparse_A(), qhat, inst.rho, inst.delta, plan)
    ev = dense_eigs(handle.two_sided_dense(inst.K))
    plus = int(np.sum(np.abs(ev - 1.0) <= tol))
    minus = int(np.sum(np.abs(ev + 1.0) <= tol))
    g_plus, g_minus = pk_guaranteed(inst.m, inst.n, len(plan.partition.nonbasic))
    ok = plus >= g_plus and minus >= g_minus
    meta = _meta(inst, plan)
    meta.update(plus=plus, minus=minus)
    return SpectralReport("pk", ev, [(-1.0, -1.0), (1.0, 1.0)], plus + minus, g_plus + g_minus, ok, meta=meta)


def check_lp_bound(inst: SaddleInstance, partition: pc.Partition) -> SpectralReport:
    """Eigenvalues of ``P^{-1} M`` when the non-basic columns are dropped (diagonal ``Q``)."""
    if np.count_nonzero(inst.Q - np.diag(np.diag(inst.Q))):
        raise ValueError("check_lp_bound needs a diagonal Q")
    g = 1.0 / (np.diag(inst.Q) + inst.rho)
    M = inst.A @ np.diag(g) @ inst.A.T + inst.delta * np.eye(inst.m)
    plan = pc.SparsificationPlan(inst.m, inst.n, partition.nonbasic, pc._EMPTY, partition)
    ev = preconditioned_eigs(pc.build_pne_chol(inst.sparse_A(), g, inst.delta, plan), M)
    gmax = float(g[partition.nonbasic].max()) if len(partition.nonbasic) else 0.0
    hi = 1.0 + gmax * float(np.linalg.norm(inst.A, 2)) ** 2 / inst.delta
    ok = bool(ev.min() >= 1.0 - 1e-10 and ev.max() <= hi + 1e-9)
    return SpectralReport("lp", ev, [(1.0, hi)], int(np.sum(np.abs(ev - 1.0) <= UNIT_TOL)), 0, ok, meta=_meta(inst))


# -- sweeps used by the CLI and the acceptance suite ---------------------------


def _random_plan(rng, m, n, kc, kr) -> pc.SparsificationPlan:
    return pc.make_plan(m, n, rng.choice(n, kc, replace=False), rng.choice(m, kr, replace=False))


def sweep(theorem: str, seeds=range(30), m: int = 15, n: int = 30, kc: int | None = None, kr: int | None = None, regs=(1e-2, 1e-4)):
    """Yield reports over seeds, regularization values and (kc, kr) pairs.

    ``kc``/``kr`` of ``None`` sweep 0..3. For ``pas`` each ``kc`` is
    checked once per Hessian mode on a non-diagonal, milder-scaled ``Q``
    (the row count cycles with the seed); ``pk`` drops ``kc`` columns;
    ``lp`` classifies the non-basic set from ``g <= 10 delta``.
    """
    kcs = range(4) if kc is None else [kc]
    krs = range(4) if kr is None else [kr]
    for seed in seeds:
        for reg in regs:
            rng = np.random.default_rng([seed, int(-math.log10(reg))])
            if theorem == "pne":
                inst = random_instance(m, n, seed, reg, reg)
                for c in kcs:
                    for r in krs:
                        yield check_pne_intervals(inst, _random_plan(rng, m, n, c, r))
            elif theorem == "pas":
                inst = random_instance(m, n, seed, reg, reg, diagonal=False, spread=2.0)
                for c in kcs:
                    r = (c + seed) % 4 if kr is None else kr
                    yield check_pas_intervals(inst, _random_plan(rng, m, n, c, r), "diag-all")
                    yield check_pas_intervals(inst, _random_plan(rng, m, n, c, 0), "diag-on-N-full-on-B")
            elif theorem == "pk":
                inst = random_instance(m, n, seed, reg, reg, diagonal=False)
                for c in kcs:
                    yield check_pk_spectrum(inst, _random_plan(rng, m, n, c, 0))
            elif theorem == "lp":
                inst = random_instance(m, n, seed, reg, reg, density=0.5)
                g = 1.0 / (np.diag(inst.Q) + inst.rho)
                yield check_lp_bound(inst, pc.partition_variables(g, 10 * reg))
            else:
                raise ValueError(f"unknown theorem {theorem!r}")
