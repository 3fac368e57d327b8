"""Finite-difference reference solver for the same problems (1D and 2D).

Second-order central differences on a uniform node grid, homogeneous
Neumann conditions through mirrored ghost nodes, implicit diffusion and
explicit reaction/gating (IMEX Euler).  Shares no discretization code with
the collocation solver so that agreement between the two is evidence.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .collocation_solver import ProblemSpec, RunResult


@dataclass(frozen=True)
class FdGrid:
    N: tuple[int, ...]

    def __post_init__(self):
        n = (self.N,) if isinstance(self.N, int) else tuple(self.N)
        if any(k < 3 for k in n):
            raise ValueError("need at least 3 nodes per axis")
        object.__setattr__(self, "N", n)

    def nodes(self, spec: ProblemSpec):
        if len(self.N) == 1 and spec.dim > 1:
            n = self.N * spec.dim
        else:
            n = self.N
        if len(n) != spec.dim:
            raise ValueError(f"grid has {len(n)} axes, problem has {spec.dim}")
        return [np.linspace(b.A, b.B, k) for b, k in zip(spec.bases, n)]

    def spacing(self, spec: ProblemSpec):
        return [x[1] - x[0] for x in self.nodes(spec)]


def neumann_laplacian_1d(n: int, h: float) -> sparse.csr_matrix:
    """Second difference with mirrored ghost nodes at both ends."""
    main = np.full(n, -2.0)
    up = np.ones(n - 1)
    lo = np.ones(n - 1)
    up[0] = 2.0
    lo[-1] = 2.0
    return sparse.diags([lo, main, up], [-1, 0, 1], format="csr") / h**2


def _axis_operator(n_axes, a, L):
    ops = [sparse.identity(n, format="csr") for n in n_axes]
    ops[a] = L
    # C-order flattening over (x, y): kron(Lx, Iy) acts on x
    out = ops[0]
    for m in ops[1:]:
        out = sparse.kron(out, m, format="csr")
    return out


def fd_run(spec: ProblemSpec, grid: FdGrid, solver_cfg=None, probes=(), snapshot_times=()) -> RunResult:
    """IMEX Euler finite-difference run with the collocation run's contract."""
    if spec.dim > 2:
        raise ValueError("the finite-difference oracle covers 1D and 2D only")
    axes = grid.nodes(spec)
    coords = np.meshgrid(*axes, indexing="ij")
    shape = coords[0].shape
    model = spec.model
    params = model.sample(coords)
    eps = spec.epsilon.sample(*coords).ravel()
    diff = [f.sample(*coords).ravel() for f in spec.diffusion]
    dt = spec.dt

    A = sparse.diags(eps / dt)
    for a, (x, da) in enumerate(zip(axes, diff)):
        L = _axis_operator([len(t) for t in axes], a, neumann_laplacian_1d(len(x), x[1] - x[0]))
        A = A - sparse.diags(da) @ L
    lu = spla.splu(sparse.csc_matrix(A))

    def init(val, default):
        if val is None:
            val = default
        if callable(val):
            return np.broadcast_to(np.asarray(val(*coords), dtype=float), shape).copy()
        return np.full(shape, float(val))

    v_rest, w_rest = model.resting_state()
    v = init(spec.initial_v, v_rest)
    w_init = spec.initial_w if spec.initial_w is not None else w_rest
    if not isinstance(w_init, (list, tuple)):
        w_init = [w_init] * model.d
    w = [init(x, None) for x in w_init]

    idx = []
    locs = []
    for p in probes:
        p = np.atleast_1d(np.asarray(p, dtype=float))
        if p.size != spec.dim:
            raise ValueError(f"probe {tuple(p)} is not {spec.dim}-dimensional")
        ix = []
        for x, c in zip(axes, p):
            if c < x[0] or c > x[-1]:
                raise ValueError(f"probe coordinate {c} outside the domain")
            ix.append(int(np.argmin(np.abs(x - c))))
        idx.append(tuple(ix))
        locs.append(tuple(float(x[i]) for x, i in zip(axes, ix)))

    n = spec.n_steps
    series = np.empty((len(idx), n + 1, 1 + model.d))
    snap_steps = {int(round(t / dt)): float(t) for t in snapshot_times}
    snapshots = {}

    def record(step):
        for p, ix in enumerate(idx):
            series[p, step, 0] = v[ix]
            for g, wg in enumerate(w):
                series[p, step, 1 + g] = wg[ix]
        if step in snap_steps:
            snapshots[snap_steps[step]] = (v.copy(), [x.copy() for x in w])

    record(0)
    for s in range(1, n + 1):
        rates = model.gating_rhs(v, w, params)
        w = [wg + dt * np.asarray(r) for wg, r in zip(w, rates)]
        t_new = s * dt
        src = model.reaction(v, w, params) + model.stimulus.value(t_new, s, coords)
        rhs = eps * v.ravel() / dt + np.broadcast_to(src, shape).ravel()
        v = lu.solve(rhs).reshape(shape)
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"non-finite reference solution at t={t_new}")
        record(s)

    return RunResult(times=np.arange(n + 1) * dt, probes=[tuple(np.atleast_1d(p)) for p in probes],
                     locations=locs, series=series, snapshots=snapshots, grid=axes,
                     gate_names=model.gate_names)


@dataclass
class Discrepancy:
    max_abs: list[float]
    mean_abs: list[float]
    t_of_max: list[float]

    @property
    def overall_max(self) -> float:
        return max(self.max_abs) if self.max_abs else 0.0


def compare(a: RunResult, b: RunResult, component: int = 0) -> Discrepancy:
    """Per-probe discrepancy of two runs; ``b`` is linearly interpolated onto
    ``a``'s time grid over the common time range."""
    if len(a.probes) != len(b.probes):
        raise ValueError("runs have different probe sets")
    lo = max(a.times[0], b.times[0])
    hi = min(a.times[-1], b.times[-1])
    if hi < lo:
        raise ValueError("time ranges do not overlap")
    # symmetric: always interpolate onto the union of both grids
    t = np.union1d(a.times, b.times)
    t = t[(t >= lo - 1e-12) & (t <= hi + 1e-12)]
    mx, mean, tmax = [], [], []
    for p in range(len(a.probes)):
        ya = np.interp(t, a.times, a.series[p, :, component])
        yb = np.interp(t, b.times, b.series[p, :, component])
        d = np.abs(ya - yb)
        k = int(np.argmax(d))
        mx.append(float(d[k]))
        mean.append(float(d.mean()))
        tmax.append(float(t[k]))
    return Discrepancy(mx, mean, tmax)
