"""Krylov solvers (GMRES, CGS, BiCG, BiCGSTAB), ILU(0) and a dense/sparse
direct fallback.

All iterative methods use left preconditioning, ``M^-1 A x = M^-1 b``, but
convergence is always judged on the true relative residual
``||b - A x|| / ||b||`` so that reports from different methods and
preconditioners are comparable.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy import sparse
from scipy.sparse import linalg as spla

METHODS = ("gmres", "cgs", "bicg", "bicgstab", "direct")
PRECONDITIONERS = ("none", "ilu0")

# matrices above this size are kept in CSR form
DENSE_LIMIT = 4096


class LinearSolverError(RuntimeError):
    def __init__(self, message, iterations=0, x=None, residual=np.inf):
        super().__init__(message)
        self.iterations = iterations
        self.x = x
        self.residual = residual


class BreakdownError(LinearSolverError):
    """A Krylov recurrence hit a (near) zero inner product."""


class ConvergenceError(LinearSolverError):
    """``max_iter`` exhausted; ``x`` holds the best iterate seen."""


class ILUFactorizationError(ArithmeticError):
    def __init__(self, row):
        super().__init__(f"zero or denormal pivot in ILU(0) at row {row}")
        self.row = row


@dataclass(frozen=True)
class SolverConfig:
    method: str = "gmres"
    preconditioner: str = "ilu0"
    tol: float = 1e-8
    max_iter: int | None = None  # None -> 10 * N
    restart: int = 30

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown solver method {self.method!r}; choose from {METHODS}")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.restart < 1:
            raise ValueError("restart must be >= 1")


@dataclass(frozen=True)
class LinearSystem:
    A: object
    b: np.ndarray

    def __post_init__(self):
        n, m = self.A.shape
        if n != m:
            raise ValueError(f"matrix must be square, got {self.A.shape}")
        if np.shape(self.b) != (n,):
            raise ValueError(f"right-hand side has shape {np.shape(self.b)}, expected ({n},)")
        data = self.A.data if sparse.issparse(self.A) else self.A
        if not np.all(np.isfinite(data)):
            raise ValueError("matrix has non-finite entries")

    @property
    def n(self) -> int:
        return self.A.shape[0]


@dataclass
class SolveReport:
    x: np.ndarray
    iterations: int
    final_residual: float
    wall_time: float
    method: str = ""
    preconditioner: str = "none"
    history: list = field(default_factory=list, repr=False)


def relative_residual(A, x, b) -> float:
    nb = np.linalg.norm(b)
    r = np.linalg.norm(b - A @ x)
    return r if nb == 0 else r / nb


def to_storage(A):
    """Dense array for ``N <= DENSE_LIMIT``, CSR above."""
    n = A.shape[0]
    if n <= DENSE_LIMIT:
        return A.toarray() if sparse.issparse(A) else np.asarray(A, dtype=float)
    return sparse.csr_matrix(A)


# ---------------------------------------------------------------- ILU(0)


class ILU0:
    """ILU(0) factors stored in one array/CSR: strict lower part is L (unit
    diagonal implied), upper part including the diagonal is U."""

    def __init__(self, LU, dense: bool):
        self.LU = LU
        self.dense = dense
        if dense:
            self._L = np.tril(LU, -1) + np.eye(LU.shape[0])
            self._U = np.triu(LU)
        else:
            n = LU.shape[0]
            self._L = (sparse.tril(LU, -1) + sparse.identity(n)).tocsr()
            self._U = sparse.triu(LU).tocsr()

    @property
    def L(self):
        return self._L

    @property
    def U(self):
        return self._U

    def solve(self, v):
        if self.dense:
            y = sla.solve_triangular(self._L, v, lower=True, unit_diagonal=True, check_finite=False)
            return sla.solve_triangular(self._U, y, lower=False, check_finite=False)
        y = spla.spsolve_triangular(self._L, v, lower=True, unit_diagonal=True)
        return spla.spsolve_triangular(self._U, y, lower=False)

    def solve_T(self, v):
        """Apply ``(LU)^-T``."""
        if self.dense:
            y = sla.solve_triangular(self._U, v, trans="T", lower=False, check_finite=False)
            return sla.solve_triangular(self._L, y, trans="T", lower=True, unit_diagonal=True, check_finite=False)
        y = spla.spsolve_triangular(self._U.T.tocsr(), v, lower=True)
        return spla.spsolve_triangular(self._L.T.tocsr(), y, lower=False, unit_diagonal=True)


def _pivot_ok(p, scale):
    return np.isfinite(p) and abs(p) > max(np.finfo(float).tiny, 1e-300) and abs(p) > 1e-14 * scale


def _ilu0_dense(A):
    a = np.array(A, dtype=float)
    n = a.shape[0]
    pattern = a != 0.0
    scale = np.abs(a).max() if a.size else 1.0
    for k in range(n - 1):
        piv = a[k, k]
        if not _pivot_ok(piv, scale):
            raise ILUFactorizationError(k)
        rows = np.nonzero(pattern[k + 1 :, k])[0] + k + 1
        if rows.size == 0:
            continue
        a[rows, k] /= piv
        cols = np.nonzero(pattern[k, k + 1 :])[0] + k + 1
        if cols.size == 0:
            continue
        upd = np.outer(a[rows, k], a[k, cols])
        # updates are dropped outside the original sparsity pattern
        upd *= pattern[np.ix_(rows, cols)]
        a[np.ix_(rows, cols)] -= upd
    if n and not _pivot_ok(a[n - 1, n - 1], scale):
        raise ILUFactorizationError(n - 1)
    return a


def _ilu0_csr(A):
    a = sparse.csr_matrix(A, dtype=float, copy=True)
    a.sort_indices()
    n = a.shape[0]
    indptr, indices, data = a.indptr, a.indices, a.data
    scale = np.abs(data).max() if data.size else 1.0
    diag_pos = np.full(n, -1)
    for i in range(n):
        hit = np.nonzero(indices[indptr[i] : indptr[i + 1]] == i)[0]
        if hit.size == 0:
            raise ILUFactorizationError(i)
        diag_pos[i] = indptr[i] + hit[0]
    for i in range(n):
        lo, hi = indptr[i], indptr[i + 1]
        cols = indices[lo:hi]
        where = {c: lo + t for t, c in enumerate(cols)}
        for t in range(lo, hi):
            k = indices[t]
            if k >= i:
                break
            piv = data[diag_pos[k]]
            if not _pivot_ok(piv, scale):
                raise ILUFactorizationError(k)
            data[t] /= piv
            lik = data[t]
            for s in range(diag_pos[k] + 1, indptr[k + 1]):
                pos = where.get(indices[s])
                if pos is not None:
                    data[pos] -= lik * data[s]
        if not _pivot_ok(data[diag_pos[i]], scale):
            raise ILUFactorizationError(i)
    return a


def ilu0(A) -> ILU0:
    if sparse.issparse(A):
        return ILU0(_ilu0_csr(A), dense=False)
    return ILU0(_ilu0_dense(A), dense=True)


def ilu0_factor(A):
    """Return ``(L, U)`` with ``L`` unit lower triangular and ``(L @ U)``
    equal to ``A`` on the nonzero pattern of ``A``."""
    f = ilu0(A)
    return f.L, f.U


def apply_preconditioned(A, msolve, v):
    """Left-preconditioned operator ``M^-1 (A v)``; ``msolve=None`` means ``M = I``."""
    w = A @ v
    return w if msolve is None else msolve(w)


# ---------------------------------------------------------------- methods


class _Monitor:
    """Tracks iterations, the best iterate, and true-residual convergence."""

    def __init__(self, A, b, tol, max_iter):
        self.A, self.b, self.tol, self.max_iter = A, b, tol, max_iter
        self.nb = np.linalg.norm(b)
        self.it = 0
        self.best_x = None
        self.best_res = np.inf
        self.history = []

    def true_res(self, x):
        r = relative_residual(self.A, x, self.b)
        if r < self.best_res:
            self.best_res, self.best_x = r, x.copy()
        return r

    def converged(self, x, est):
        """``est`` is the cheap (preconditioned) relative residual estimate."""
        self.history.append(est)
        if est > self.tol:
            return False
        return self.true_res(x) <= self.tol


def _breakdown(mon, x, what):
    mon.true_res(x)
    raise BreakdownError(f"{what} breakdown after {mon.it} iterations", mon.it, mon.best_x, mon.best_res)


def _tiny(a, ref):
    return abs(a) <= 1e-300 or abs(a) <= 1e-30 * ref


def _gmres(A, b, x, msolve, mon, restart):
    op = lambda v: apply_preconditioned(A, msolve, v)
    pc = (lambda v: v) if msolve is None else msolve
    bh = pc(b)
    nbh = np.linalg.norm(bh) or 1.0
    n = b.shape[0]
    inner_tol = mon.tol
    while mon.it < mon.max_iter:
        r = pc(b - A @ x)
        beta = np.linalg.norm(r)
        if beta == 0.0:
            mon.true_res(x)
            return x
        m = min(restart, n, mon.max_iter - mon.it)
        V = np.zeros((m + 1, n))
        Hh = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k_used = 0
        for k in range(m):
            mon.it += 1
            w = op(V[k])
            for j in range(k + 1):
                Hh[j, k] = V[j] @ w
                w = w - Hh[j, k] * V[j]
            Hh[k + 1, k] = np.linalg.norm(w)
            happy = _tiny(Hh[k + 1, k], beta)
            if not happy:
                V[k + 1] = w / Hh[k + 1, k]
            for j in range(k):
                t = cs[j] * Hh[j, k] + sn[j] * Hh[j + 1, k]
                Hh[j + 1, k] = -sn[j] * Hh[j, k] + cs[j] * Hh[j + 1, k]
                Hh[j, k] = t
            den = np.hypot(Hh[k, k], Hh[k + 1, k])
            if den == 0.0:
                _breakdown(mon, x, "GMRES")
            cs[k], sn[k] = Hh[k, k] / den, Hh[k + 1, k] / den
            Hh[k, k] = den
            Hh[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            k_used = k + 1
            est = abs(g[k + 1]) / nbh
            mon.history.append(est)
            if est <= inner_tol or happy:
                break
        y = sla.solve_triangular(Hh[:k_used, :k_used], g[:k_used], check_finite=False)
        x = x + V[:k_used].T @ y
        if mon.true_res(x) <= mon.tol:
            return x
        if est <= inner_tol:
            # preconditioned residual met tol but the true one did not
            inner_tol *= 0.1
    raise ConvergenceError(f"GMRES did not converge in {mon.it} iterations", mon.it, mon.best_x, mon.best_res)


def _bicgstab(A, b, x, msolve, mon):
    op = lambda v: apply_preconditioned(A, msolve, v)
    pc = (lambda v: v) if msolve is None else msolve
    r = pc(b - A @ x)
    nbh = np.linalg.norm(pc(b)) or 1.0
    rt = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    while mon.it < mon.max_iter:
        mon.it += 1
        rho_new = rt @ r
        if _tiny(rho_new, nbh**2 * 1e-10):
            _breakdown(mon, x, "BiCGSTAB rho")
        beta = (rho_new / rho) * (alpha / omega)
        rho = rho_new
        p = r + beta * (p - omega * v)
        v = op(p)
        den = rt @ v
        if den == 0.0:
            _breakdown(mon, x, "BiCGSTAB")
        alpha = rho / den
        s = r - alpha * v
        if mon.converged(x + alpha * p, np.linalg.norm(s) / nbh):
            return x + alpha * p
        t = op(s)
        tt = t @ t
        if tt == 0.0:
            _breakdown(mon, x, "BiCGSTAB omega")
        omega = (t @ s) / tt
        x = x + alpha * p + omega * s
        r = s - omega * t
        if mon.converged(x, np.linalg.norm(r) / nbh):
            return x
        if omega == 0.0:
            _breakdown(mon, x, "BiCGSTAB omega")
    raise ConvergenceError(f"BiCGSTAB did not converge in {mon.it} iterations", mon.it, mon.best_x, mon.best_res)


def _cgs(A, b, x, msolve, mon):
    op = lambda v: apply_preconditioned(A, msolve, v)
    pc = (lambda v: v) if msolve is None else msolve
    r = pc(b - A @ x)
    nbh = np.linalg.norm(pc(b)) or 1.0
    rt = r.copy()
    rho = 1.0
    p = np.zeros_like(b)
    q = np.zeros_like(b)
    first = True
    while mon.it < mon.max_iter:
        mon.it += 1
        rho_new = rt @ r
        if _tiny(rho_new, nbh**2 * 1e-10):
            _breakdown(mon, x, "CGS rho")
        if first:
            u = r.copy()
            p = u.copy()
            first = False
        else:
            beta = rho_new / rho
            u = r + beta * q
            p = u + beta * (q + beta * p)
        rho = rho_new
        v = op(p)
        den = rt @ v
        if den == 0.0:
            _breakdown(mon, x, "CGS")
        alpha = rho / den
        q = u - alpha * v
        uq = u + q
        x = x + alpha * uq
        r = r - alpha * op(uq)
        if mon.converged(x, np.linalg.norm(r) / nbh):
            return x
    raise ConvergenceError(f"CGS did not converge in {mon.it} iterations", mon.it, mon.best_x, mon.best_res)


def _bicg(A, b, x, msolve, msolve_T, mon):
    op = lambda v: apply_preconditioned(A, msolve, v)
    AT = A.T
    opT = (lambda v: AT @ v) if msolve_T is None else (lambda v: AT @ msolve_T(v))
    pc = (lambda v: v) if msolve is None else msolve
    r = pc(b - A @ x)
    nbh = np.linalg.norm(pc(b)) or 1.0
    rt = r.copy()
    p = np.zeros_like(b)
    pt = np.zeros_like(b)
    rho = 1.0
    first = True
    while mon.it < mon.max_iter:
        mon.it += 1
        rho_new = rt @ r
        if _tiny(rho_new, nbh**2 * 1e-10):
            _breakdown(mon, x, "BiCG rho")
        if first:
            p, pt = r.copy(), rt.copy()
            first = False
        else:
            beta = rho_new / rho
            p = r + beta * p
            pt = rt + beta * pt
        rho = rho_new
        q = op(p)
        qt = opT(pt)
        den = pt @ q
        if den == 0.0:
            _breakdown(mon, x, "BiCG")
        alpha = rho / den
        x = x + alpha * p
        r = r - alpha * q
        rt = rt - alpha * qt
        if mon.converged(x, np.linalg.norm(r) / nbh):
            return x
    raise ConvergenceError(f"BiCG did not converge in {mon.it} iterations", mon.it, mon.best_x, mon.best_res)


class LinearSolver:
    """Solver bound to one matrix; factorizations are computed once and
    reused across right-hand sides (the time-stepping matrix is constant)."""

    def __init__(self, A, cfg: SolverConfig | None = None):
        self.cfg = cfg or SolverConfig()
        self.A = A
        self.n = A.shape[0]
        self.factor_time = 0.0
        t0 = time.perf_counter()
        self._lu = None
        self._ilu = None
        if self.cfg.method == "direct":
            if sparse.issparse(A):
                self._lu = spla.splu(sparse.csc_matrix(A))
            else:
                self._lu = sla.lu_factor(A, check_finite=False)
        elif self.cfg.preconditioner == "ilu0":
            self._ilu = ilu0(A)
        self.factor_time = time.perf_counter() - t0

    def solve(self, b, x0=None) -> SolveReport:
        cfg = self.cfg
        b = np.asarray(b, dtype=float)
        t0 = time.perf_counter()
        if not np.any(b):
            x = np.zeros(self.n)
            return SolveReport(x, 0, 0.0, time.perf_counter() - t0, cfg.method, cfg.preconditioner)
        if cfg.method == "direct":
            if sparse.issparse(self.A):
                x = self._lu.solve(b)
            else:
                x = sla.lu_solve(self._lu, b, check_finite=False)
            res = relative_residual(self.A, x, b)
            return SolveReport(x, 1, res, time.perf_counter() - t0, "direct", "none")
        max_iter = cfg.max_iter or 10 * self.n
        mon = _Monitor(self.A, b, cfg.tol, max_iter)
        x = np.zeros(self.n) if x0 is None else np.array(x0, dtype=float)
        if x0 is not None and mon.true_res(x) <= cfg.tol:
            return SolveReport(x, 0, mon.best_res, time.perf_counter() - t0, cfg.method, cfg.preconditioner)
        msolve = self._ilu.solve if self._ilu is not None else None
        if cfg.method == "gmres":
            x = _gmres(self.A, b, x, msolve, mon, cfg.restart)
        elif cfg.method == "bicgstab":
            x = _bicgstab(self.A, b, x, msolve, mon)
        elif cfg.method == "cgs":
            x = _cgs(self.A, b, x, msolve, mon)
        else:
            msolve_T = self._ilu.solve_T if self._ilu is not None else None
            x = _bicg(self.A, b, x, msolve, msolve_T, mon)
        res = relative_residual(self.A, x, b)
        return SolveReport(x, mon.it, res, time.perf_counter() - t0, cfg.method, cfg.preconditioner, mon.history)


def solve(system: LinearSystem, cfg: SolverConfig | None = None, x0=None) -> SolveReport:
    return LinearSolver(system.A, cfg).solve(system.b, x0)
