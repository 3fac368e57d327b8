"""Piecewise-constant parameter fields and tensor Haar series.

A :class:`ParameterField` is a base value overridden inside axis-aligned
boxes (the ischemic sub-regions).  Region bounds are open intervals, so a
point exactly on a region face takes the value from outside the box.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .haar_core import HaarBasis, HaarDomainError, haar_eval, integral_matrix


class FieldDomainError(ValueError):
    pass


Box = tuple[tuple[float, float], ...]


def unit_box(dim: int) -> Box:
    return tuple((0.0, 1.0) for _ in range(dim))


@dataclass(frozen=True)
class JumpRegion:
    bounds: Box
    value: float

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if not 1 <= len(bounds) <= 3:
            raise FieldDomainError("a jump region needs 1, 2 or 3 axis intervals")
        for lo, hi in bounds:
            if hi < lo:
                raise FieldDomainError(f"inverted interval ({lo}, {hi})")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "value", float(self.value))

    @property
    def empty(self) -> bool:
        return any(hi <= lo for lo, hi in self.bounds)

    def mask(self, *coords):
        """Boolean mask of points strictly inside the box."""
        out = np.ones(np.broadcast(*coords).shape, dtype=bool)
        for x, (lo, hi) in zip(coords, self.bounds):
            out &= (x > lo) & (x < hi)
        return out


@dataclass(frozen=True)
class ParameterField:
    base_value: float
    regions: tuple[JumpRegion, ...] = ()
    domain: Box = ((0.0, 1.0),)

    def __post_init__(self):
        object.__setattr__(self, "base_value", float(self.base_value))
        object.__setattr__(self, "regions", tuple(self.regions))
        dom = tuple((float(lo), float(hi)) for lo, hi in self.domain)
        object.__setattr__(self, "domain", dom)
        for r in self.regions:
            if len(r.bounds) != len(dom):
                raise FieldDomainError(
                    f"region has {len(r.bounds)} axes but the domain has {len(dom)}")
            for (lo, hi), (dlo, dhi) in zip(r.bounds, dom):
                if not r.empty and (lo < dlo or hi > dhi):
                    raise FieldDomainError(f"region interval ({lo}, {hi}) leaves the domain")

    @classmethod
    def constant(cls, value: float, dim: int = 1, domain: Box | None = None) -> "ParameterField":
        return cls(value, (), domain or unit_box(dim))

    @property
    def dim(self) -> int:
        return len(self.domain)

    @property
    def is_constant(self) -> bool:
        return all(r.empty or r.value == self.base_value for r in self.regions)

    def sample(self, *coords) -> np.ndarray:
        """Vectorised evaluation on broadcastable coordinate arrays."""
        if len(coords) != self.dim:
            raise FieldDomainError(f"expected {self.dim} coordinates, got {len(coords)}")
        for x, (lo, hi) in zip(coords, self.domain):
            x = np.asarray(x)
            if np.any(x < lo) or np.any(x > hi):
                raise FieldDomainError(f"point outside the domain [{lo}, {hi}]")
        out = np.full(np.broadcast(*coords).shape, self.base_value)
        # later regions override earlier ones
        for r in self.regions:
            if not r.empty:
                out[r.mask(*coords)] = r.value
        return out

    def on_grid(self, axes: Sequence[np.ndarray]) -> np.ndarray:
        return self.sample(*np.meshgrid(*axes, indexing="ij"))


def field_eval(fld: ParameterField, point) -> float:
    point = np.atleast_1d(np.asarray(point, dtype=float))
    return float(fld.sample(*point))


def as_field(value, dim: int, domain: Box | None = None) -> ParameterField:
    if isinstance(value, ParameterField):
        return value
    return ParameterField.constant(float(value), dim, domain)


# ---------------------------------------------------------------- series


def apply_axes(mats: Sequence[np.ndarray], tensor: np.ndarray) -> np.ndarray:
    """Contract ``mats[a]`` with axis ``a`` of ``tensor`` (``out_a = mats[a] @ t_a``)."""
    out = tensor
    for a, m in enumerate(mats):
        out = np.moveaxis(np.tensordot(m, out, axes=(1, a)), 0, a)
    return out


def _haar_inverse_T(basis: HaarBasis) -> np.ndarray:
    # H H^T is diagonal, so H^-T = diag(1 / rowsum(H**2)) H
    H = integral_matrix(basis, 0)
    return H / np.sum(H * H, axis=1)[:, None]


@dataclass(frozen=True)
class WaveletSeries:
    bases: tuple[HaarBasis, ...]
    coefficients: np.ndarray = field(repr=False)

    def __post_init__(self):
        shape = tuple(b.num_wavelets for b in self.bases)
        if self.coefficients.shape != shape:
            raise FieldDomainError(f"coefficient tensor {self.coefficients.shape} does not match {shape}")


def approximate(f: Callable, bases) -> WaveletSeries:
    """Collocation Haar series of ``f``: series values equal ``f`` at every
    collocation point.  ``f`` takes one coordinate array per axis."""
    if isinstance(bases, HaarBasis):
        bases = (bases,)
    bases = tuple(bases)
    grids = np.meshgrid(*[b.collocation for b in bases], indexing="ij")
    samples = np.broadcast_to(np.asarray(f(*grids), dtype=float), grids[0].shape)
    if not np.all(np.isfinite(samples)):
        raise FieldDomainError("function is not finite at every collocation point")
    coeffs = apply_axes([_haar_inverse_T(b) for b in bases], samples)
    return WaveletSeries(bases, coeffs)


def _haar_column(basis: HaarBasis, x: float) -> np.ndarray:
    return np.array([haar_eval(basis, i, x) for i in range(1, basis.num_wavelets + 1)])


def series_eval(s: WaveletSeries, point) -> float:
    point = np.atleast_1d(np.asarray(point, dtype=float))
    if point.size != len(s.bases):
        raise FieldDomainError(f"expected a {len(s.bases)}-d point")
    try:
        cols = [_haar_column(b, x) for b, x in zip(s.bases, point)]
    except HaarDomainError as exc:
        raise FieldDomainError(str(exc)) from exc
    out = s.coefficients
    for c in cols:
        out = np.tensordot(c, out, axes=(0, 0))
    return float(out)


def series_values(s: WaveletSeries) -> np.ndarray:
    """Series evaluated on the collocation grid."""
    return apply_axes([integral_matrix(b, 0).T for b in s.bases], s.coefficients)


@dataclass
class DecayReport:
    levels: list[int]
    maxima: list[float]
    slope: float
    bound: list[float] | None = None


def _levels_of(basis: HaarBasis) -> np.ndarray:
    return np.array([basis.level(i) for i in range(1, basis.num_wavelets + 1)])


def coefficient_decay(f: Callable, J_list: Sequence[int], domain: Box = ((0.0, 1.0),),
                      lipschitz: float | None = None, oversample: int = 2) -> DecayReport:
    """Per-level maxima of inner-product Haar coefficients ``integral f h...h``.

    In several dimensions only level-diagonal coefficients (every axis at
    the same dilation level) are reported.  ``slope`` is the least-squares
    slope of ``log2(max)`` against the level ``j`` (``m = 2**j``).  When
    ``lipschitz`` is given the reference bound ``L / (2**d m**(d+1))`` is
    attached for comparison.  Coefficients come from a collocation solve
    ``oversample`` levels finer than the finest reported level, so that
    they approximate the inner products also for non-smooth ``f``.
    """
    levels = sorted(int(j) for j in J_list)
    if len(levels) < 2 or levels[0] < 0:
        raise ValueError("need at least two nonnegative levels")
    J = levels[-1] + max(0, int(oversample))
    if len(domain) > 1:
        # keep the tensor size manageable; never below the reported levels
        J = max(levels[-1], min(J, 6 if len(domain) == 2 else 5))
    bases = tuple(HaarBasis(lo, hi, J) for lo, hi in domain)
    s = approximate(f, bases)
    # collocation coefficient times ||h_i||^2 gives the inner product
    norms = [np.array([b.B - b.A if i == 1 else 2.0 ** -b.level(i) * (b.B - b.A)
                       for i in range(1, b.num_wavelets + 1)]) for b in bases]
    inner = apply_axes([np.diag(n) for n in norms], s.coefficients)
    lev = [_levels_of(b) for b in bases]
    maxima = []
    for j in levels:
        sel = np.ix_(*[l == j for l in lev])
        block = np.abs(inner[sel])
        maxima.append(float(block.max()) if block.size else 0.0)
    logs = np.log2(np.maximum(maxima, np.finfo(float).tiny))
    slope = float(np.polyfit(levels, logs, 1)[0])
    d = len(bases)
    bound = None
    if lipschitz is not None:
        bound = [lipschitz / (2**d * (2.0**j) ** (d + 1)) for j in levels]
    return DecayReport(levels, maxima, slope, bound)
