"""Haar wavelet family on a finite interval, its repeated integrals and the
collocation matrices H, P1, P2.

Wavelet indices are 1-based throughout (``i = 1`` is the scaling function),
matching the usual ``i = m + k + 1`` numbering with ``m = 2**j``.  Matrix
rows are 0-based, so row ``i - 1`` of ``H`` holds ``h_i`` sampled at the
collocation points.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from math import factorial

import numpy as np


class HaarDomainError(ValueError):
    """Raised for an out-of-range wavelet index, integral order or abscissa."""


@dataclass(frozen=True)
class HaarBasis:
    """Uniform Haar basis of resolution level ``J`` on ``[A, B]``."""

    A: float
    B: float
    J: int

    def __post_init__(self):
        if not np.isfinite(self.A) or not np.isfinite(self.B) or not self.B > self.A:
            raise HaarDomainError(f"need finite A < B, got [{self.A}, {self.B}]")
        if int(self.J) != self.J or self.J < 0:
            raise HaarDomainError(f"resolution level must be a nonnegative integer, got {self.J}")
        object.__setattr__(self, "J", int(self.J))

    @property
    def M(self) -> int:
        return 2**self.J

    @property
    def num_wavelets(self) -> int:
        return 2 * self.M

    @property
    def delta_x(self) -> float:
        return (self.B - self.A) / (2 * self.M)

    @cached_property
    def grid(self) -> np.ndarray:
        return self.A + np.arange(2 * self.M + 1) * self.delta_x

    @cached_property
    def collocation(self) -> np.ndarray:
        g = self.grid
        return 0.5 * (g[:-1] + g[1:])

    def decode(self, i: int) -> tuple[int, int, int]:
        """Return ``(j, m, k)`` for wavelet index ``i >= 2``."""
        self._check_index(i)
        if i == 1:
            raise HaarDomainError("the scaling function i=1 has no (j, k) decomposition")
        j = (i - 1).bit_length() - 1
        m = 2**j
        return j, m, i - m - 1

    def breakpoints(self, i: int) -> tuple[float, float, float]:
        """Support breakpoints ``(beta1, beta2, beta3)`` of wavelet ``i``."""
        if i == 1:
            return self.A, 0.5 * (self.A + self.B), self.B
        _, m, k = self.decode(i)
        zeta = self.M / m
        dx = self.delta_x
        return (
            self.A + 2 * k * zeta * dx,
            self.A + (2 * k + 1) * zeta * dx,
            self.A + 2 * (k + 1) * zeta * dx,
        )

    def level(self, i: int) -> int:
        """Dilation level of wavelet ``i``; the scaling function is reported as -1."""
        return -1 if i == 1 else self.decode(i)[0]

    def _check_index(self, i):
        if int(i) != i or not 1 <= i <= 2 * self.M:
            raise HaarDomainError(f"wavelet index {i} outside 1..{2 * self.M}")

    def _check_x(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < self.A) or np.any(x > self.B) or not np.all(np.isfinite(x)):
            raise HaarDomainError(f"abscissa outside [{self.A}, {self.B}]")
        return x


def haar_eval(basis: HaarBasis, i: int, x):
    """Value of ``h_i`` at ``x`` (scalar or array).

    Supports are half-open, ``[beta1, beta2)`` and ``[beta2, beta3)``, so
    every ``h_i`` with ``i >= 2`` is zero at ``x = B``.  The scaling
    function is 1 on the closed interval so constants are reproduced at ``B``.
    """
    basis._check_index(i)
    xa = basis._check_x(x)
    if i == 1:
        out = np.ones_like(xa)
    else:
        b1, b2, b3 = basis.breakpoints(i)
        out = np.where((xa >= b1) & (xa < b2), 1.0, 0.0) - np.where((xa >= b2) & (xa < b3), 1.0, 0.0)
    return float(out) if out.ndim == 0 else out


def haar_integral(basis: HaarBasis, i: int, alpha: int, x):
    """``alpha``-fold integral from ``A`` of ``h_i``, evaluated at ``x``."""
    if int(alpha) != alpha or alpha < 0:
        raise HaarDomainError(f"integral order must be a nonnegative integer, got {alpha}")
    if alpha == 0:
        return haar_eval(basis, i, x)
    basis._check_index(i)
    xa = basis._check_x(x)
    c = 1.0 / factorial(alpha)
    if i == 1:
        out = c * (xa - basis.A) ** alpha
    else:
        b1, b2, b3 = basis.breakpoints(i)
        t1 = np.clip(xa - b1, 0.0, None) ** alpha
        t2 = np.clip(xa - b2, 0.0, None) ** alpha
        t3 = np.clip(xa - b3, 0.0, None) ** alpha
        # clipped powers reproduce the four-branch closed form
        out = c * (t1 - 2.0 * t2 + t3)
    out = np.asarray(out, dtype=float)
    return float(out) if out.ndim == 0 else out


def collocation_points(basis: HaarBasis) -> np.ndarray:
    return basis.collocation.copy()


@dataclass(frozen=True)
class HaarMatrices:
    H: np.ndarray
    P1: np.ndarray
    P2: np.ndarray
    basis: HaarBasis = field(repr=False)

    @property
    def size(self) -> int:
        return self.H.shape[0]


def integral_matrix(basis: HaarBasis, alpha: int) -> np.ndarray:
    """Rows ``p_{alpha,i}`` sampled at the collocation points."""
    y = basis.collocation
    n = basis.num_wavelets
    return np.vstack([np.atleast_1d(haar_integral(basis, i, alpha, y)) for i in range(1, n + 1)])


def build_matrices(basis: HaarBasis) -> HaarMatrices:
    H = integral_matrix(basis, 0)
    P1 = integral_matrix(basis, 1)
    P2 = integral_matrix(basis, 2)
    for a in (H, P1, P2):
        a.setflags(write=False)
    return HaarMatrices(H=H, P1=P1, P2=P2, basis=basis)


def haar_inner(basis: HaarBasis, p: int, q: int) -> float:
    """Exact ``integral_A^B h_p h_q dx`` by piecewise integration.

    Both functions are constant between consecutive breakpoints, so the
    integral is the sum of (product value) * (sub-interval length).
    """
    bp = sorted({basis.A, basis.B, *basis.breakpoints(p), *basis.breakpoints(q)})
    total = 0.0
    for lo, hi in zip(bp[:-1], bp[1:]):
        if hi <= lo:
            continue
        mid = 0.5 * (lo + hi)
        total += haar_eval(basis, p, mid) * haar_eval(basis, q, mid) * (hi - lo)
    return total


def haar_norm_sq(basis: HaarBasis, p: int) -> float:
    """Closed form of ``integral h_p**2``: ``2**-j (B - A)``, or ``B - A`` for ``p = 1``."""
    if p == 1:
        return basis.B - basis.A
    return 2.0 ** (-basis.level(p)) * (basis.B - basis.A)


def integral_at_B(basis: HaarBasis, i: int, alpha: int) -> float:
    """Closed-form boundary values ``p_{1,i}(B)`` and ``p_{2,i}(B)``."""
    L = basis.B - basis.A
    if alpha == 1:
        return L if i == 1 else 0.0
    if alpha == 2:
        if i == 1:
            return L**2 / 2.0
        _, m, _ = basis.decode(i)
        return L**2 / (4.0 * m**2)
    raise HaarDomainError("closed boundary values are provided for alpha in {1, 2} only")
