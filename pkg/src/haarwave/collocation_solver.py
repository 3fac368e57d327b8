"""Haar wavelet collocation time stepping for reaction-diffusion PDEs coupled
to gating ODEs, in 1, 2 or 3 space dimensions with homogeneous Neumann
boundaries.

Per time step ``[t_s, t_s+1)``:

1. gating: expand ``dw/dt`` in a tensor Haar series, solve
   ``(H^T x ... x H^T) beta = g(v_s, w_s)`` and update
   ``w_new = w_s + dt * series(beta)``;
2. membrane: expand the highest mixed derivative ``d/dt d^2/dx^2 ...`` of
   ``v`` in the tensor series and integrate it twice per axis, so that
   ``dv/dt``, ``v`` and every ``d^2 v/dx_a^2`` are linear in the
   coefficients; collocate ``eps v_t - sum d_a v_aa = r(v_s, w_new) + I_app``
   at ``t_s+1`` and solve ``K alpha = b``;
3. update ``v`` and the carried second-derivative caches.

Neumann closure
---------------
Twice integrating ``h_i`` from the left end gives ``p_{2,i}``; for ``i >= 2``
its slope ``p_{1,i}`` vanishes at both ends, while ``p_{2,1}`` does not.  The
Neumann condition at the right end therefore forces the coefficient of
``p_{2,1}`` to zero, and the integration "constant" (the unknown trace of the
field on the ``x = A`` face) takes its place.  Per axis the value basis is
``phi_1 = 1, phi_i = p_{2,i}`` and its second derivative is
``psi_1 = 0, psi_i = h_i``.  Tensor products of these bases satisfy the
Neumann condition on every face, and the tensor entries with some index
equal to 1 carry the boundary-trace functions at the new time level (the
unknown ``v(0, y, z, t)``-type terms); see :func:`boundary_closure`.

Unknowns are flattened x-fastest (Fortran order over ``(x, y, z)`` axes).
Equation rows are permuted so that wavelet ``i`` is paired with the
collocation cell just right of its centre breakpoint; this puts a nonzero
entry on every diagonal and makes ILU(0) usable.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import sparse

from .field_approx import Box, ParameterField, apply_axes
from .haar_core import HaarBasis, build_matrices, haar_integral
from .ionic_models import IonicModel, promote
from .krylov import DENSE_LIMIT, LinearSolver, LinearSystem, SolverConfig


class SimulationError(RuntimeError):
    pass


class ProbeError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemSpec:
    bases: tuple[HaarBasis, ...]
    model: IonicModel
    diffusion: tuple = ()
    epsilon: object = 1.0
    initial_v: object = None  # constant, callable of coordinates, or None (model rest)
    initial_w: tuple | None = None
    T: float = 1.0
    dt: float = 1e-3

    def __post_init__(self):
        bases = (self.bases,) if isinstance(self.bases, HaarBasis) else tuple(self.bases)
        if not 1 <= len(bases) <= 3:
            raise ValueError("dimension must be 1, 2 or 3")
        object.__setattr__(self, "bases", bases)
        dom = self.domain
        diff = tuple(self.diffusion) if isinstance(self.diffusion, (tuple, list)) else (self.diffusion,) * len(bases)
        if len(diff) != len(bases):
            raise ValueError(f"need {len(bases)} diffusion coefficients, got {len(diff)}")
        object.__setattr__(self, "diffusion", tuple(promote(d, len(bases), dom) for d in diff))
        for d in self.diffusion:
            if min([d.base_value] + [r.value for r in d.regions]) < 0:
                raise ValueError("diffusion coefficients must be nonnegative")
        object.__setattr__(self, "epsilon", promote(self.epsilon, len(bases), dom))
        object.__setattr__(self, "model", self.model.with_dim(len(bases), dom))
        if not self.dt > 0 or not self.T >= self.dt * (1 - 1e-12):
            raise ValueError("need dt > 0 and T >= dt")

    @property
    def dim(self) -> int:
        return len(self.bases)

    @property
    def domain(self) -> Box:
        return tuple((b.A, b.B) for b in self.bases)

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))


@dataclass
class SimulationState:
    t: float
    v: np.ndarray
    w: list
    aux: list  # d^2 v / dx_a^2 at the collocation points, one per axis
    step: int = 0

    def copy(self) -> "SimulationState":
        return SimulationState(self.t, self.v.copy(), [x.copy() for x in self.w],
                               [x.copy() for x in self.aux], self.step)


@dataclass
class StepCoefficients:
    alpha: np.ndarray
    beta: list


@dataclass(frozen=True)
class BoundaryClosure:
    axis: int
    rule: str
    trace_index: int = 1


def boundary_closure(spec: ProblemSpec, axis: int) -> BoundaryClosure:
    """How the unknown face traces along ``axis`` are eliminated."""
    if not 0 <= axis < spec.dim:
        raise ValueError(f"axis {axis} outside 0..{spec.dim - 1}")
    return BoundaryClosure(
        axis,
        "homogeneous Neumann: p_{2,1} coefficient forced to zero by the far-face "
        "condition; the near-face trace at the new time level is an unknown "
        "expanded in the lower-dimensional basis and occupies wavelet index 1",
    )


def hierarchical_rows(basis: HaarBasis) -> np.ndarray:
    """Collocation cell paired with each wavelet (0-based)."""
    perm = [0]
    for i in range(2, basis.num_wavelets + 1):
        _, m, k = basis.decode(i)
        perm.append((2 * k + 1) * (basis.M // m))
    return np.array(perm)


def _kron_all(mats):
    # Fortran flattening over (x, y, z) => kron(Mz, My, Mx)
    out = mats[-1]
    for m in reversed(mats[:-1]):
        out = np.kron(out, m)
    return out


class Discretization:
    """Per-axis value/second-derivative bases and their tensor operators."""

    def __init__(self, bases: Sequence[HaarBasis]):
        self.bases = tuple(bases)
        self.mats = [build_matrices(b) for b in self.bases]
        self.shape = tuple(b.num_wavelets for b in self.bases)
        self.size = int(np.prod(self.shape))
        self.phi_T = []  # values at points  = phi_T @ coeffs
        self.psi_T = []
        self.h_T = []
        self.h_inv_T = []
        for m in self.mats:
            phi = m.P2.copy()
            phi[0] = 1.0
            psi = m.H.copy()
            psi[0] = 0.0
            self.phi_T.append(phi.T)
            self.psi_T.append(psi.T)
            self.h_T.append(m.H.T.copy())
            self.h_inv_T.append(m.H / np.sum(m.H * m.H, axis=1)[:, None])
        self.phi_T_inv = [np.linalg.inv(p) for p in self.phi_T]
        axis_rows = [hierarchical_rows(b) for b in self.bases]
        # row r of K enforces the equation at flat collocation index row_order[r]
        grid = np.meshgrid(*axis_rows, indexing="ij")
        self.row_order = np.ravel_multi_index(tuple(grid), self.shape, order="F").ravel(order="F")
        self.coords = np.meshgrid(*[b.collocation for b in self.bases], indexing="ij")

    # tensor helpers -------------------------------------------------------

    def flat(self, t: np.ndarray) -> np.ndarray:
        return np.asarray(t).ravel(order="F")

    def unflat(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x).reshape(self.shape, order="F")

    def values(self, coeffs):
        return apply_axes(self.phi_T, coeffs)

    def second_derivative(self, coeffs, axis: int):
        mats = [self.psi_T[a] if a == axis else self.phi_T[a] for a in range(len(self.bases))]
        return apply_axes(mats, coeffs)

    def value_coefficients(self, values):
        """Coefficients in the Neumann value basis interpolating ``values``."""
        return apply_axes(self.phi_T_inv, values)

    def operator(self, axis: int | None = None):
        """Dense tensor operator: values (axis None) or d^2/dx_axis^2."""
        mats = [self.psi_T[a] if a == axis else self.phi_T[a] for a in range(len(self.bases))]
        return _kron_all(mats)

    def phi_at(self, a: int, x: float) -> np.ndarray:
        b = self.bases[a]
        col = np.array([1.0] + [0.0] * (b.num_wavelets - 1))
        for i in range(2, b.num_wavelets + 1):
            col[i - 1] = haar_integral(b, i, 2, x)
        return col

    def evaluate(self, coeffs, point) -> float:
        out = coeffs
        for a, x in enumerate(point):
            out = np.tensordot(self.phi_at(a, float(x)), out, axes=(0, 0))
        return float(out)


class HaarSolver:
    """Time stepper bound to one :class:`ProblemSpec`.  The collocation matrix
    ``K`` depends only on ``eps``, ``D`` and ``dt`` and is assembled and
    factored once."""

    def __init__(self, spec: ProblemSpec, solver_cfg: SolverConfig | None = None,
                 disc: Discretization | None = None):
        self.spec = spec
        self.cfg = solver_cfg or SolverConfig()
        self.disc = disc or Discretization(spec.bases)
        d = self.disc
        self.params = spec.model.sample(d.coords)
        self.eps = spec.epsilon.sample(*d.coords)
        self.diff = [f.sample(*d.coords) for f in spec.diffusion]
        self.assembly_time = 0.0
        self.solve_time = 0.0
        self.iterations = 0
        self._K = None
        self._solver = None
        self._last_alpha = None

    # ------------------------------------------------------------ state

    def _initial(self, value, default):
        d = self.disc
        if value is None:
            value = default
        if callable(value):
            out = np.asarray(value(*d.coords), dtype=float)
            return np.broadcast_to(out, d.shape).copy()
        return np.full(d.shape, float(value))

    def initial_state(self) -> SimulationState:
        spec = self.spec
        v_rest, w_rest = spec.model.resting_state()
        v = self._initial(spec.initial_v, v_rest)
        w_init = spec.initial_w if spec.initial_w is not None else w_rest
        if not isinstance(w_init, (list, tuple)):
            w_init = [w_init] * spec.model.d
        if len(w_init) != spec.model.d:
            raise ValueError(f"model has {spec.model.d} gating variables, got {len(w_init)} initial values")
        w = [self._initial(x, None) for x in w_init]
        coeffs = self.disc.value_coefficients(v)
        aux = [self.disc.second_derivative(coeffs, a) for a in range(spec.dim)]
        if np.all(v == v.flat[0]):
            aux = [np.zeros_like(v) for _ in range(spec.dim)]
        return SimulationState(0.0, v, w, aux, 0)

    # ------------------------------------------------------------ pieces

    def step_gating(self, state: SimulationState):
        d, spec = self.disc, self.spec
        rhs = spec.model.gating_rhs(state.v, state.w, self.params)
        betas, w_new = [], []
        for name, c, w in zip(spec.model.gate_names, rhs, state.w):
            c = np.broadcast_to(np.asarray(c, dtype=float), d.shape)
            bad = ~np.isfinite(c)
            if bad.any():
                idx = tuple(int(i[0]) for i in np.nonzero(bad))
                pt = tuple(float(x[idx]) for x in d.coords)
                raise SimulationError(f"non-finite gating rate for {name} at point {pt}, t={state.t}")
            beta = apply_axes(d.h_inv_T, c)
            betas.append(beta)
            w_new.append(w + spec.dt * apply_axes(d.h_T, beta))
        return betas, w_new

    def matrix(self):
        if self._K is None:
            t0 = time.perf_counter()
            d, dt = self.disc, self.spec.dt
            K = self.eps.ravel(order="F")[:, None] * d.operator(None)
            for a, da in enumerate(self.diff):
                if np.any(da):
                    K -= dt * da.ravel(order="F")[:, None] * d.operator(a)
            if not np.all(np.isfinite(K)):
                raise SimulationError("non-finite coefficient field values in the step matrix")
            K = K[d.row_order]
            if d.size > DENSE_LIMIT:
                K = sparse.csr_matrix(K)
            self._K = K
            self.assembly_time += time.perf_counter() - t0
        return self._K

    def rhs(self, state: SimulationState, w_new) -> np.ndarray:
        spec, d = self.spec, self.disc
        t_new = state.t + spec.dt
        b = spec.model.reaction(state.v, w_new, self.params)
        b = b + spec.model.stimulus.value(t_new, state.step + 1, d.coords)
        for da, vaa in zip(self.diff, state.aux):
            b = b + da * vaa
        b = np.broadcast_to(b, d.shape)
        if not np.all(np.isfinite(b)):
            raise SimulationError(f"non-finite right-hand side at t={t_new}")
        return b.ravel(order="F")[d.row_order]

    def assemble_step_system(self, state: SimulationState, w_new) -> LinearSystem:
        return LinearSystem(self.matrix(), self.rhs(state, w_new))

    def linear_solver(self) -> LinearSolver:
        if self._solver is None:
            t0 = time.perf_counter()
            self._solver = LinearSolver(self.matrix(), self.cfg)
            self.assembly_time += time.perf_counter() - t0
        return self._solver

    def step(self, state: SimulationState, return_coefficients: bool = False):
        spec, d = self.spec, self.disc
        betas, w_new = self.step_gating(state)
        b = self.rhs(state, w_new)
        rep = self.linear_solver().solve(b, x0=self._last_alpha)
        self.solve_time += rep.wall_time
        self.iterations += rep.iterations
        self._last_alpha = rep.x
        alpha = d.unflat(rep.x)
        dv = d.values(alpha)
        v = state.v + spec.dt * dv
        aux = [vaa + spec.dt * d.second_derivative(alpha, a) for a, vaa in enumerate(state.aux)]
        if not np.all(np.isfinite(v)) or not all(np.all(np.isfinite(w)) for w in w_new):
            raise SimulationError(f"non-finite solution at t={state.t + spec.dt}")
        new = SimulationState(state.t + spec.dt, v, w_new, aux, state.step + 1)
        if return_coefficients:
            return new, StepCoefficients(alpha, betas)
        return new

    # ------------------------------------------------------------ driver

    def probe_indices(self, probes) -> list[tuple[int, ...]]:
        out = []
        for p in probes:
            p = np.atleast_1d(np.asarray(p, dtype=float))
            if p.size != self.spec.dim:
                raise ProbeError(f"probe {tuple(p)} is not {self.spec.dim}-dimensional")
            idx = []
            for b, x in zip(self.spec.bases, p):
                if x < b.A or x > b.B:
                    raise ProbeError(f"probe coordinate {x} outside [{b.A}, {b.B}]")
                idx.append(int(np.argmin(np.abs(b.collocation - x))))
            out.append(tuple(idx))
        return out

    def probe_locations(self, probes):
        return [tuple(float(b.collocation[i]) for b, i in zip(self.spec.bases, idx))
                for idx in self.probe_indices(probes)]

    def run(self, probes=(), snapshot_times=(), callback: Callable | None = None) -> "RunResult":
        spec = self.spec
        idx = self.probe_indices(probes)
        n = spec.n_steps
        times = np.arange(n + 1) * spec.dt
        series = np.empty((len(idx), n + 1, 1 + spec.model.d))
        snap_steps = {int(round(t / spec.dt)): float(t) for t in snapshot_times}
        for s in snap_steps:
            if not 0 <= s <= n:
                raise ValueError(f"snapshot time {snap_steps[s]} outside [0, T]")
        snapshots = {}
        t0 = time.perf_counter()
        state = self.initial_state()

        def record(st):
            for p, ix in enumerate(idx):
                series[p, st.step, 0] = st.v[ix]
                for g, w in enumerate(st.w):
                    series[p, st.step, 1 + g] = w[ix]
            if st.step in snap_steps:
                snapshots[snap_steps[st.step]] = st.copy()

        record(state)
        for _ in range(n):
            state = self.step(state)
            record(state)
            if callback is not None:
                callback(state)
        return RunResult(
            times=times, probes=[tuple(np.atleast_1d(p).astype(float)) for p in probes],
            locations=self.probe_locations(probes), series=series, snapshots=snapshots,
            grid=[b.collocation.copy() for b in spec.bases], gate_names=spec.model.gate_names,
            final=state, total_time=time.perf_counter() - t0, solve_time=self.solve_time,
            iterations=self.iterations)


@dataclass
class RunResult:
    times: np.ndarray
    probes: list
    locations: list
    series: np.ndarray  # (probe, time, 1 + d): v then gates
    snapshots: dict
    grid: list
    gate_names: tuple = ("w",)
    final: SimulationState | None = None
    total_time: float = 0.0
    solve_time: float = 0.0
    iterations: int = 0

    def v(self, probe: int = 0) -> np.ndarray:
        return self.series[probe, :, 0]


# functional entry points ---------------------------------------------------


def step_gating(state: SimulationState, spec: ProblemSpec):
    return HaarSolver(spec).step_gating(state)


def assemble_step_system(state: SimulationState, spec: ProblemSpec, w_new) -> LinearSystem:
    return HaarSolver(spec).assemble_step_system(state, w_new)


def step(state: SimulationState, spec: ProblemSpec, solver_cfg: SolverConfig | None = None) -> SimulationState:
    return HaarSolver(spec, solver_cfg).step(state)


def run(spec: ProblemSpec, solver_cfg: SolverConfig | None = None, probes=(), snapshot_times=()) -> RunResult:
    return HaarSolver(spec, solver_cfg).run(probes, snapshot_times)


def interpolate_state(spec: ProblemSpec, v: np.ndarray, points, disc: Discretization | None = None) -> np.ndarray:
    """Evaluate the Neumann value-basis interpolant of collocation values ``v``
    at arbitrary points (used to compare runs on different levels)."""
    disc = disc or Discretization(spec.bases)
    coeffs = disc.value_coefficients(v)
    # build per-axis phi evaluations once per distinct coordinate
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != spec.dim:
        pts = pts.T
    return np.array([disc.evaluate(coeffs, p) for p in pts])
