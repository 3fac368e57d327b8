"""Ionic models: FitzHugh-Nagumo, Mitchell-Schaeffer and Hodgkin-Huxley.

Every model exposes ``reaction`` and ``gating_rhs`` on arrays of values at
collocation (or grid) points.  ``reaction`` is the ionic drive appearing on
the right of the membrane equation::

    eps dv/dt - div(D grad v) = reaction(v, w) + I_app

so for Hodgkin-Huxley it is ``-I_ion``.  Spatially varying parameters are
:class:`ParameterField` instances and are sampled once per grid through
:meth:`IonicModel.sample`.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Mapping

import numpy as np

from .field_approx import Box, JumpRegion, ParameterField, as_field


@dataclass(frozen=True)
class Stimulus:
    """Applied current: ``amplitude`` while ``t_start <= t <= t_end`` and,
    if ``max_steps`` is set, only for time steps ``1..max_steps``."""

    amplitude: float = 0.0
    t_start: float = 0.0
    t_end: float = np.inf
    max_steps: int | None = None
    region: JumpRegion | None = None

    def active(self, t: float, step: int) -> bool:
        if self.amplitude == 0.0:
            return False
        if self.max_steps is not None and step > self.max_steps:
            return False
        return self.t_start - 1e-12 <= t <= self.t_end + 1e-12

    def value(self, t: float, step: int, coords) -> np.ndarray | float:
        if not self.active(t, step):
            return 0.0
        if self.region is None:
            return self.amplitude
        return np.where(self.region.mask(*coords), self.amplitude, 0.0)


# ---------------------------------------------------------------- pointwise


def fhn_reaction(v, w, k):
    """``k v (v - 0.1)(1 - v) - k w``."""
    return k * v * (v - 0.1) * (1.0 - v) - k * w


def fhn_gating(v, w):
    return v - 2.0 * w


def ms_reaction(v, w, tau_in, tau_out):
    return -(w / tau_in) * v**2 * (v - 1.0) - v / tau_out


def ms_gating(v, w, tau_open, tau_close, u_gate):
    return np.where(v <= u_gate, (1.0 - w) / tau_open, -w / tau_close)


def _vtrap(x, y):
    """``x / (exp(x / y) - 1)`` with the removable singularity at ``x = 0``."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x / y) < 1e-6
    safe = np.where(small, 1.0, x)
    return np.where(small, y * (1.0 - x / (2.0 * y)), safe / np.expm1(safe / y))


# classic squid-axon rates, resting potential shifted to 0 mV
HH_RATES = {
    "m": (lambda v: 0.1 * _vtrap(25.0 - v, 10.0), lambda v: 4.0 * np.exp(-v / 18.0)),
    "h": (lambda v: 0.07 * np.exp(-v / 20.0), lambda v: 1.0 / (np.exp((30.0 - v) / 10.0) + 1.0)),
    "n": (lambda v: 0.01 * _vtrap(10.0 - v, 10.0), lambda v: 0.125 * np.exp(-v / 80.0)),
}


def hh_rates(v, which: str):
    a, b = HH_RATES[which]
    return a(v), b(v)


def hh_steady_state(v, which: str):
    a, b = hh_rates(v, which)
    return a / (a + b)


def hh_gating_rhs(v, w, which: str):
    a, b = hh_rates(v, which)
    return a * (1.0 - w) - b * w


# ---------------------------------------------------------------- models


@dataclass(frozen=True)
class IonicModel:
    """Common interface.  Subclasses list their spatial parameters in
    ``field_names`` and their gates in ``gate_names``."""

    stimulus: Stimulus = Stimulus()

    field_names: tuple[str, ...] = ()
    gate_names: tuple[str, ...] = ()

    @property
    def d(self) -> int:
        return len(self.gate_names)

    def sample(self, coords) -> dict[str, np.ndarray]:
        """Parameter fields sampled on meshgrid ``coords`` (one array per axis)."""
        return {n: getattr(self, n).sample(*coords) for n in self.field_names}

    def reaction(self, v, w, p):
        raise NotImplementedError

    def gating_rhs(self, v, w, p):
        raise NotImplementedError

    def resting_state(self) -> tuple[float, list[float]]:
        raise NotImplementedError

    def with_dim(self, dim: int, domain: Box | None = None):
        """Promote scalar parameters to constant fields of dimension ``dim``."""
        updates = {n: promote(getattr(self, n), dim, domain) for n in self.field_names}
        return replace(self, **updates)

    def constants(self) -> dict:
        """Every parameter, for run manifests."""
        out = {}
        for f in fields(self):
            if f.name in ("field_names", "gate_names"):
                continue
            val = getattr(self, f.name)
            out[f.name] = describe(val)
        return out


def promote(fld, dim: int, domain: Box | None = None) -> ParameterField:
    fld = as_field(fld, dim, domain)
    if fld.dim == dim and (domain is None or fld.domain == tuple(domain)):
        return fld
    if any(not r.empty for r in fld.regions):
        raise ValueError(f"field with {fld.dim}-d jump regions used in a {dim}-d problem")
    return ParameterField.constant(fld.base_value, dim, domain)


def describe(val):
    if isinstance(val, ParameterField):
        return {"base": val.base_value,
                "regions": [{"bounds": list(r.bounds), "value": r.value} for r in val.regions]}
    if isinstance(val, Stimulus):
        return {"amplitude": val.amplitude, "t_start": val.t_start,
                "t_end": None if np.isinf(val.t_end) else val.t_end,
                "max_steps": val.max_steps,
                "region": None if val.region is None else list(val.region.bounds)}
    return val


def _positive(fld: ParameterField, name: str):
    vals = [fld.base_value] + [r.value for r in fld.regions if not r.empty]
    if min(vals) <= 0:
        raise ValueError(f"{name} must be strictly positive everywhere")


@dataclass(frozen=True)
class FhnModel(IonicModel):
    k: ParameterField = ParameterField(1.0)
    field_names: tuple[str, ...] = ("k",)
    gate_names: tuple[str, ...] = ("w",)

    def __post_init__(self):
        object.__setattr__(self, "k", as_field(self.k, 1))
        _positive(self.k, "k")

    def reaction(self, v, w, p):
        return fhn_reaction(v, w[0], p["k"])

    def gating_rhs(self, v, w, p):
        return [fhn_gating(v, w[0])]

    def resting_state(self):
        return 0.0, [0.0]


@dataclass(frozen=True)
class MsModel(IonicModel):
    tau_in: ParameterField = ParameterField(0.3)
    tau_out: ParameterField = ParameterField(6.0)
    tau_open: ParameterField = ParameterField(120.0)
    tau_close: ParameterField = ParameterField(150.0)
    u_gate: float = 0.13
    field_names: tuple[str, ...] = ("tau_in", "tau_out", "tau_open", "tau_close")
    gate_names: tuple[str, ...] = ("w",)

    def __post_init__(self):
        for n in self.field_names:
            object.__setattr__(self, n, as_field(getattr(self, n), 1))
            _positive(getattr(self, n), n)
        if not 0.0 < self.u_gate < 1.0:
            raise ValueError("u_gate must lie in (0, 1)")

    def reaction(self, v, w, p):
        return ms_reaction(v, w[0], p["tau_in"], p["tau_out"])

    def gating_rhs(self, v, w, p):
        return [ms_gating(v, w[0], p["tau_open"], p["tau_close"], self.u_gate)]

    def resting_state(self):
        return 0.0, [1.0]


@dataclass(frozen=True)
class HhModel(IonicModel):
    g_Na: ParameterField = ParameterField(120.0)
    g_K: ParameterField = ParameterField(36.0)
    g_L: ParameterField = ParameterField(0.3)
    E_Na: float = 115.0
    E_K: float = -12.0
    E_L: float = 10.613
    field_names: tuple[str, ...] = ("g_Na", "g_K", "g_L")
    gate_names: tuple[str, ...] = ("m", "h", "n")

    def __post_init__(self):
        for n in self.field_names:
            fld = as_field(getattr(self, n), 1)
            object.__setattr__(self, n, fld)
            vals = [fld.base_value] + [r.value for r in fld.regions]
            if min(vals) < 0:
                raise ValueError(f"{n} must be nonnegative")

    def current(self, v, m, h, n, p):
        return (p["g_Na"] * m**3 * h * (v - self.E_Na)
                + p["g_K"] * n**4 * (v - self.E_K)
                + p["g_L"] * (v - self.E_L))

    def reaction(self, v, w, p):
        return -self.current(v, w[0], w[1], w[2], p)

    def gating_rhs(self, v, w, p):
        return [hh_gating_rhs(v, g, name) for g, name in zip(w, self.gate_names)]

    def resting_state(self):
        return 0.0, [float(hh_steady_state(0.0, g)) for g in self.gate_names]


@dataclass(frozen=True)
class PassiveModel(IonicModel):
    """Linear leak ``-leak * v`` and one frozen gate; ``leak = 0`` gives pure
    diffusion (heat equation) and, with ``D = 0``, zero dynamics."""

    leak: float = 0.0
    gate_names: tuple[str, ...] = ("w",)

    def reaction(self, v, w, p):
        return -self.leak * v

    def gating_rhs(self, v, w, p):
        return [np.zeros_like(v)]

    def resting_state(self):
        return 0.0, [0.0]


def hh_current(v, m, h, n, model: HhModel, point=None):
    """Ionic current of ``model`` with conductances evaluated at ``point``."""
    if point is None:
        p = {k: getattr(model, k).base_value for k in model.field_names}
    else:
        coords = np.atleast_1d(np.asarray(point, dtype=float))
        p = {k: float(getattr(model, k).sample(*coords)) for k in model.field_names}
    return model.current(v, m, h, n, p)


MODELS: Mapping[str, type] = {"fhn": FhnModel, "ms": MsModel, "hh": HhModel, "passive": PassiveModel}
