"""MPS / QPS input, conversion to standard form, and CSV result reports.

Conventions
-----------
* Quadratic sections hold entries of ``H`` in the objective
  ``c^T x + 1/2 x^T H x``. ``QUADOBJ`` lists the lower triangle only;
  ``QMATRIX`` lists both triangles and each off-diagonal pair is taken once.
* A right-hand side on the objective row ``v`` contributes the constant
  ``-v`` to the objective.
* ``UP`` with a negative value on a column without an explicit lower bound
  makes the column unbounded below.
* ``RANGES`` value ``R`` on a row with right-hand side ``b`` gives

  ====  =======  ==================
  row   sign R   interval
  ====  =======  ==================
  G     any      [b, b + |R|]
  L     any      [b - |R|, b]
  E     R > 0    [b, b + R]
  E     R < 0    [b + R, b]
  ====  =======  ==================

Only minimization is supported; integer markers, ``BV``/``LI``/``UI``/``SC``
bounds and ``OBJSENSE MAX`` raise :class:`Unsupported`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Literal

import numpy as np
import scipy.sparse as sp

from .model import ProblemQP
from .sparse import SparseMatrix

MpsFormat = Literal["auto", "free", "fixed"]
REPORT_FIELDS = ["name", "status", "ipm_iters", "total_krylov", "avg_krylov", "krylov_last", "max_nnz", "time_seconds", "objective"]

_SECTIONS = {"NAME", "ROWS", "COLUMNS", "RHS", "RANGES", "BOUNDS", "QUADOBJ", "QMATRIX", "QSECTION", "OBJSENSE", "OBJSENSE MIN", "OBJSENSE MAX", "ENDATA"}
_FIXED_FIELDS = ((1, 3), (4, 12), (14, 22), (24, 36), (39, 47), (49, 61))


class ParseError(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class Unsupported(ValueError):
    def __init__(self, feature: str, line: int | None = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"unsupported MPS feature: {feature}{where}")
        self.feature = feature
        self.line = line


class InfeasibleBounds(ValueError):
    """A column has a lower bound above its upper bound."""


@dataclass
class RawInstance:
    """An MPS file as declared, before any transformation."""

    name: str = ""
    rows: list[tuple[str, str]] = field(default_factory=list)
    objective: str | None = None
    col_names: list[str] = field(default_factory=list)
    entries: list[tuple[str, str, float]] = field(default_factory=list)
    rhs: dict[str, float] = field(default_factory=dict)
    ranges: dict[str, float] = field(default_factory=dict)
    bounds: list[tuple[str, str, float | None]] = field(default_factory=list)
    quad: list[tuple[str, str, float]] = field(default_factory=list)

    def hessian_entries(self) -> dict[tuple[int, int], float]:
        """``H`` entries keyed by ``(i, j)`` with ``i >= j`` in column order."""
        idx = {c: k for k, c in enumerate(self.col_names)}
        out: dict[tuple[int, int], float] = {}
        for a, b, v in self.quad:
            i, j = idx[a], idx[b]
            out[(max(i, j), min(i, j))] = v
        return out


def _split(line: str, fmt: str) -> list[str]:
    if fmt == "free":
        return line.split()
    out = []
    for lo, hi in _FIXED_FIELDS:
        tok = line[lo:hi].strip() if len(line) > lo else ""
        out.append(tok)
    while out and not out[-1]:
        out.pop()
    if out and not out[0]:
        out = out[1:]
    return out


def _num(tok: str, lineno: int) -> float:
    try:
        v = float(tok.replace("D", "E").replace("d", "e"))
    except ValueError:
        raise ParseError(lineno, f"not a number: {tok!r}") from None
    if math.isnan(v):
        raise ParseError(lineno, "NaN value")
    return v


def read_mps(source: IO[str] | str | Iterable[str], fmt: MpsFormat = "auto") -> RawInstance:
    """Parse MPS or QPS text.

    ``source`` is a text stream, a string holding the file contents or an
    iterable of lines. ``fmt="auto"`` tries the whitespace-delimited free
    format first and falls back to fixed columns.
    """
    if isinstance(source, str):
        lines = source.splitlines()
    else:
        lines = [ln.rstrip("\n") for ln in source]
    if fmt != "auto":
        return _parse(lines, fmt)
    try:
        return _parse(lines, "free")
    except ParseError as free_err:
        try:
            return _parse(lines, "fixed")
        except ParseError:
            raise free_err from None


def _parse(lines: list[str], fmt: str) -> RawInstance:
    raw = RawInstance()
    senses: dict[str, str] = {}
    cols: dict[str, int] = {}
    section = None
    rhs_set = range_set = bound_set = None
    quad_seen: dict[tuple[str, str], float] = {}
    quad_kind = None
    ended = False

    for lineno, line in enumerate(lines, 1):
        if not line.strip() or line.lstrip().startswith("*"):
            continue
        if not line[0].isspace():
            head = " ".join(line.split()).upper()
            key = head.split()[0]
            if key == "NAME":
                section = "NAME"
                raw.name = line.split(None, 1)[1].strip() if len(line.split()) > 1 else ""
                continue
            if key == "OBJSENSE":
                parts = head.split()
                if len(parts) > 1:
                    if parts[1] in ("MAX", "MAXIMIZE"):
                        raise Unsupported("OBJSENSE MAX", lineno)
                    if parts[1] not in ("MIN", "MINIMIZE"):
                        raise ParseError(lineno, f"unknown objective sense {parts[1]!r}")
                section = "OBJSENSE"
                continue
            if head not in _SECTIONS and key not in ("RHS", "RANGES", "BOUNDS", "QUADOBJ", "QMATRIX", "QSECTION"):
                raise ParseError(lineno, f"unknown section {line.split()[0]!r}")
            section = key
            if key in ("QUADOBJ", "QMATRIX", "QSECTION"):
                quad_kind = "lower" if key == "QUADOBJ" else "both"
            if key == "ENDATA":
                ended = True
                break
            continue

        f = _split(line, fmt)
        if section == "OBJSENSE":
            s = f[0].upper()
            if s in ("MAX", "MAXIMIZE"):
                raise Unsupported("OBJSENSE MAX", lineno)
            if s not in ("MIN", "MINIMIZE"):
                raise ParseError(lineno, f"unknown objective sense {f[0]!r}")
        elif section == "ROWS":
            if len(f) != 2:
                raise ParseError(lineno, "ROWS record needs a sense and a name")
            sense, name = f[0].upper(), f[1]
            if sense not in ("E", "L", "G", "N"):
                raise ParseError(lineno, f"unknown row sense {f[0]!r}")
            if name in senses:
                raise ParseError(lineno, f"duplicate row {name!r}")
            senses[name] = sense
            raw.rows.append((name, sense))
            if sense == "N" and raw.objective is None:
                raw.objective = name
        elif section == "COLUMNS":
            if "'MARKER'" in line.upper():
                raise Unsupported("integer MARKER", lineno)
            if len(f) not in (3, 5):
                raise ParseError(lineno, "COLUMNS record needs a column and one or two (row, value) pairs")
            col = f[0]
            if col not in cols:
                cols[col] = len(raw.col_names)
                raw.col_names.append(col)
            for k in range(1, len(f), 2):
                row = f[k]
                if row not in senses:
                    raise ParseError(lineno, f"undeclared row {row!r}")
                raw.entries.append((col, row, _num(f[k + 1], lineno)))
        elif section in ("RHS", "RANGES"):
            if len(f) in (3, 5):
                setname, pairs = f[0], f[1:]
            elif len(f) in (2, 4):
                setname, pairs = "", f
            else:
                raise ParseError(lineno, f"malformed {section} record")
            if section == "RHS":
                rhs_set = setname if rhs_set is None else rhs_set
                if setname != rhs_set:
                    continue
                target = raw.rhs
            else:
                range_set = setname if range_set is None else range_set
                if setname != range_set:
                    continue
                target = raw.ranges
            for k in range(0, len(pairs), 2):
                row = pairs[k]
                if row not in senses:
                    raise ParseError(lineno, f"undeclared row {row!r}")
                if section == "RANGES" and senses[row] == "N":
                    raise ParseError(lineno, "RANGES on a free row")
                target[row] = _num(pairs[k + 1], lineno)
        elif section == "BOUNDS":
            btype = f[0].upper() if f else ""
            if btype in ("BV", "LI", "UI", "SC"):
                raise Unsupported(f"{btype} bound", lineno)
            if btype in ("FR", "MI", "PL"):
                if len(f) == 3:
                    setname, col, val = f[1], f[2], None
                elif len(f) == 2:
                    setname, col, val = "", f[1], None
                else:
                    raise ParseError(lineno, f"malformed {btype} bound")
            elif btype in ("LO", "UP", "FX"):
                if len(f) == 4:
                    setname, col, val = f[1], f[2], _num(f[3], lineno)
                elif len(f) == 3:
                    setname, col, val = "", f[1], _num(f[2], lineno)
                else:
                    raise ParseError(lineno, f"malformed {btype} bound")
            else:
                raise ParseError(lineno, f"unknown bound type {f[0] if f else ''!r}")
            bound_set = setname if bound_set is None else bound_set
            if setname != bound_set:
                continue
            if col not in cols:
                raise ParseError(lineno, f"undeclared column {col!r}")
            raw.bounds.append((btype, col, val))
        elif section in ("QUADOBJ", "QMATRIX", "QSECTION"):
            if len(f) != 3:
                raise ParseError(lineno, "quadratic record needs two columns and a value")
            a, b = f[0], f[1]
            for c in (a, b):
                if c not in cols:
                    raise ParseError(lineno, f"undeclared column {c!r}")
            v = _num(f[2], lineno)
            if quad_kind == "lower":
                raw.quad.append((a, b, v))
            else:
                quad_seen[(a, b)] = v
        elif section == "NAME":
            raise ParseError(lineno, "unexpected record after NAME")
        else:
            raise ParseError(lineno, "record outside of any section")

    if not ended:
        raise ParseError(len(lines), "missing ENDATA")
    if raw.objective is None:
        raise ParseError(len(lines), "no objective (N) row")
    if quad_seen:
        idx = {c: k for k, c in enumerate(raw.col_names)}
        for (a, b), v in quad_seen.items():
            if idx[a] >= idx[b] or (b, a) not in quad_seen:
                raw.quad.append((a, b, v))
    return raw


@dataclass(frozen=True)
class VariableMap:
    """``x_original = offset + sign * x_std[index]`` (``index = -1`` for fixed columns)."""

    index: np.ndarray
    sign: np.ndarray
    offset: np.ndarray

    def recover(self, x_std) -> np.ndarray:
        x_std = np.asarray(x_std, dtype=np.float64)
        out = self.offset.copy()
        live = self.index >= 0
        out[live] += self.sign[live] * x_std[self.index[live]]
        return out


def _column_bounds(raw: RawInstance) -> tuple[np.ndarray, np.ndarray]:
    n = len(raw.col_names)
    idx = {c: k for k, c in enumerate(raw.col_names)}
    lo, up = np.zeros(n), np.full(n, np.inf)
    lo_set = np.zeros(n, dtype=bool)
    for btype, col, val in raw.bounds:
        j = idx[col]
        if btype == "LO":
            lo[j], lo_set[j] = val, True
        elif btype == "UP":
            up[j] = val
            if val < 0 and not lo_set[j] and lo[j] == 0.0:
                lo[j] = -np.inf
        elif btype == "FX":
            lo[j] = up[j] = val
            lo_set[j] = True
        elif btype == "FR":
            lo[j], up[j] = -np.inf, np.inf
            lo_set[j] = True
        elif btype == "MI":
            lo[j], lo_set[j] = -np.inf, True
        elif btype == "PL":
            up[j] = np.inf
    bad = np.flatnonzero(lo > up)
    if len(bad):
        raise InfeasibleBounds(f"column {raw.col_names[bad[0]]!r} has lower bound {lo[bad[0]]} > upper bound {up[bad[0]]}")
    return lo, up


def standardize_with_map(raw: RawInstance) -> tuple[ProblemQP, VariableMap]:
    """Convert to ``min c^T x + 1/2 x^T H x, A x = b, x[I] >= 0`` and return the variable map."""
    ncol = len(raw.col_names)
    cidx = {c: k for k, c in enumerate(raw.col_names)}
    cons = [(name, s) for name, s in raw.rows if s != "N"]
    ridx = {name: k for k, (name, _) in enumerate(cons)}
    m0 = len(cons)

    c = np.zeros(ncol)
    trip_r, trip_c, trip_v = [], [], []
    for col, row, v in raw.entries:
        if row == raw.objective:
            c[cidx[col]] += v
        elif row in ridx:
            trip_r.append(ridx[row])
            trip_c.append(cidx[col])
            trip_v.append(v)
    lo, up = _column_bounds(raw)
    b = np.array([raw.rhs.get(name, 0.0) for name, _ in cons])

    # one slack per inequality or ranged row: a x - s = 0 with s in [row_lo, row_hi]
    slack_lo, slack_up = [], []
    for i, (name, s) in enumerate(cons):
        r = raw.ranges.get(name)
        if s == "E" and r is None:
            continue
        bi = b[i]
        if r is None:
            interval = (-np.inf, bi) if s == "L" else (bi, np.inf)
        elif s == "G":
            interval = (bi, bi + abs(r))
        elif s == "L":
            interval = (bi - abs(r), bi)
        else:
            interval = (bi, bi + r) if r > 0 else (bi + r, bi)
        trip_r.append(i)
        trip_c.append(ncol + len(slack_lo))
        trip_v.append(-1.0)
        b[i] = 0.0
        slack_lo.append(interval[0])
        slack_up.append(interval[1])
    nall = ncol + len(slack_lo)
    lo = np.concatenate([lo, slack_lo])
    up = np.concatenate([up, slack_up])
    c = np.concatenate([c, np.zeros(len(slack_lo))])
    A0 = sp.csc_matrix((trip_v, (trip_r, trip_c)), shape=(m0, nall))

    H0 = sp.csc_matrix((nall, nall))
    if raw.quad:
        ent = raw.hessian_entries()
        hi_, hj_ = zip(*ent.keys())
        hv = list(ent.values())
        L = sp.coo_matrix((hv, (hi_, hj_)), shape=(nall, nall))
        H0 = (L + sp.triu(L.T, k=1)).tocsc()

    # x = d + T x' with T a signed selection matrix
    d = np.zeros(nall)
    index = np.full(nall, -1, dtype=np.int64)
    sign = np.zeros(nall)
    free, extra = [], []
    k = 0
    for j in range(nall):
        lj, uj = lo[j], up[j]
        if lj == uj:
            d[j] = lj
            continue
        index[j] = k
        if np.isfinite(lj):
            d[j], sign[j] = lj, 1.0
            if np.isfinite(uj):
                extra.append((k, uj - lj))
        elif np.isfinite(uj):
            d[j], sign[j] = uj, -1.0
        else:
            sign[j] = 1.0
            free.append(k)
        k += 1
    nstd = k
    live = index >= 0
    T = sp.csc_matrix((sign[live], (np.flatnonzero(live), index[live])), shape=(nall, nstd))

    A = (A0 @ T).tocsc()
    b = b - A0 @ d
    Hd = H0 @ d
    cstd = T.T @ (c + Hd)
    Hstd = (T.T @ H0 @ T).tocsc()
    offset = float(c @ d + 0.5 * d @ Hd) - raw.rhs.get(raw.objective, 0.0)

    if extra:
        # x'_k + t = u - l with a fresh t >= 0
        ne = len(extra)
        rows = np.arange(ne)
        ks = np.array([e[0] for e in extra])
        B = sp.csc_matrix((np.ones(2 * ne), (np.concatenate([rows, rows]), np.concatenate([ks, nstd + rows]))), shape=(ne, nstd + ne))
        A = sp.vstack([sp.hstack([A, sp.csc_matrix((A.shape[0], ne))]), B]).tocsc()
        b = np.concatenate([b, [e[1] for e in extra]])
        cstd = np.concatenate([cstd, np.zeros(ne)])
        Hstd = sp.block_diag([Hstd, sp.csc_matrix((ne, ne))]).tocsc()

    H = SparseMatrix.from_scipy(Hstd, "symmetric-lower") if Hstd.nnz else None
    problem = ProblemQP(SparseMatrix.from_scipy(A), b, cstd, H, np.array(free, dtype=np.int64), raw.name or "problem", offset)
    vmap = VariableMap(index[:ncol], sign[:ncol], d[:ncol])
    return problem, vmap


def standardize(raw: RawInstance) -> ProblemQP:
    """Standard-form problem with the same optimal value as ``raw``."""
    return standardize_with_map(raw)[0]


def read_problem(path, fmt: MpsFormat = "auto") -> ProblemQP:
    with open(path) as fh:
        return standardize(read_mps(fh, fmt))


def _fmt(v: float) -> str:
    return repr(float(v))


def write_mps(problem: ProblemQP, sink: IO[str]) -> None:
    """Write a standard-form problem as free-format MPS (QUADOBJ when ``H`` is present).

    Rows are ``R0..``, columns ``X0..``, the objective row ``OBJ``.
    """
    A = problem.A.full.tocsc()
    m, n = A.shape
    out = [f"NAME {problem.name}", "ROWS", " N OBJ"]
    out += [f" E R{i}" for i in range(m)]
    out.append("COLUMNS")
    for j in range(n):
        if problem.c[j] != 0.0:
            out.append(f" X{j} OBJ {_fmt(problem.c[j])}")
        for p in range(A.indptr[j], A.indptr[j + 1]):
            out.append(f" X{j} R{A.indices[p]} {_fmt(A.data[p])}")
        if problem.c[j] == 0.0 and A.indptr[j] == A.indptr[j + 1]:
            out.append(f" X{j} OBJ 0.0")
    out.append("RHS")
    for i in range(m):
        if problem.b[i] != 0.0:
            out.append(f" RHS R{i} {_fmt(problem.b[i])}")
    if problem.offset != 0.0:
        out.append(f" RHS OBJ {_fmt(-problem.offset)}")
    if len(problem.free_set):
        out.append("BOUNDS")
        out += [f" FR BND X{j}" for j in problem.free_set]
    if problem.H.nnz:
        out.append("QUADOBJ")
        H = problem.H.stored.tocsc()
        for j in range(n):
            for p in range(H.indptr[j], H.indptr[j + 1]):
                out.append(f" X{H.indices[p]} X{j} {_fmt(H.data[p])}")
    out.append("ENDATA")
    sink.write("\n".join(out) + "\n")


def write_report(trace, state, problem: ProblemQP, sink: IO[str], header: bool = True) -> None:
    """Append one CSV row summarizing a solve; an empty trace writes the header only."""
    w = csv.DictWriter(sink, REPORT_FIELDS, lineterminator="\n")
    if header:
        w.writeheader()
    if trace is None or len(trace) == 0:
        return
    counts = [p + c for p, c in trace.krylov_solves]
    total = sum(counts)
    w.writerow(
        {
            "name": problem.name,
            "status": trace.status or "",
            "ipm_iters": len(trace),
            "total_krylov": total,
            "avg_krylov": _fmt(total / len(trace)),
            "krylov_last": counts[-1],
            "max_nnz": trace.max_factor_nnz,
            "time_seconds": _fmt(round(trace.seconds, 6)),
            "objective": _fmt(problem.objective(state.x)) if state is not None else "",
        }
    )
