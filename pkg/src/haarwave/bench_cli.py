"""Command-line front end: run configs, example scenarios, error tables,
resolution tests, solver benchmarks, reference comparisons and CSV output.

Run configs are INI files::

    [run]
    scenario = example1_fhn_1d     ; or example2_fhn_2d, ..., custom
    J = 5                          ; one level, or one per axis: 4, 4
    dt = 1e-3
    T = 1.0
    probes = 0.5; 0.25             ; points separated by ';', coords by ','
    snapshots = 0.5, 1.0
    jumps = single                 ; preset jump regions: none, single, double
    output = out

    [model]
    name = fhn                     ; custom scenario only
    I_app = 0.3
    k = 1.2                        ; any model parameter

    [problem]
    epsilon = 0.01
    diffusion = 0.005              ; one per axis, or one for all
    v0 = 0.2 + 0.1*cos(pi*x)       ; constant or expression in x, y, z
    w0 = 0.2

    [field.k]                      ; piecewise-constant parameter field
    base = 1.0
    region1 = 0.4..0.6 -> 1.5      ; axis intervals separated by ','

    [solver]
    method = gmres
    preconditioner = ilu0
    tol = 1e-8
"""
from __future__ import annotations

import argparse
import configparser
import json
import math
import platform
import re
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .collocation_solver import (Discretization, HaarSolver, ProblemSpec, RunResult,
                                 SimulationError, boundary_closure)
from .field_approx import (JumpRegion, ParameterField, coefficient_decay, approximate,
                           series_eval, unit_box)
from .haar_core import HaarBasis
from .ionic_models import MODELS, Stimulus, describe
from .krylov import METHODS, PRECONDITIONERS, LinearSolverError, SolverConfig
from .reference_oracle import FdGrid, compare, fd_run

SCENARIOS = ("example1_fhn_1d", "example2_fhn_2d", "example3_ms_2d", "example4_hh",
             "example5_ms_3d", "custom")
MAX_LEVEL = 8
MAX_LEVEL_3D = 3

D2 = (1.2e-3, 2.5562e-4)

# scenario defaults; every value can be overridden from the config file
_DEFAULTS = {
    "example1_fhn_1d": dict(model="fhn", dim=1, J=5, dt=1e-3, T=1.0, epsilon=0.01,
                            diffusion=(0.005,), v0=0.2, w0=(0.2,), I_app=0.0,
                            probes=[(0.5,)]),
    "example2_fhn_2d": dict(model="fhn", dim=2, J=4, dt=1e-3, T=0.5, epsilon=0.01,
                            diffusion=D2, v0=0.2, w0=(0.2,), I_app=0.15,
                            probes=[(0.5, 0.5)]),
    "example3_ms_2d": dict(model="ms", dim=2, J=4, dt=1e-3, T=3.5, epsilon=1.0,
                           diffusion=D2, v0=0.2, w0=(0.2,), I_app=20.0, stim_steps=100,
                           probes=[(0.2344, 0.2344), (0.4531, 0.4531)]),
    "example4_hh": dict(model="hh", dim=1, J=4, dt=1e-2, T=20.0, epsilon=1.0,
                        diffusion=(1e-3,), v0=None, w0=None, I_app=10.0, stim_end=1.0,
                        probes=[(0.2,), (0.5,), (0.7,)]),
    "example5_ms_3d": dict(model="ms", dim=3, J=2, dt=1e-2, T=0.5, epsilon=1.0,
                           diffusion=(1e-3, 1e-3, 1e-3), v0=0.2, w0=(0.2,), I_app=20.0,
                           stim_end=0.1, probes=[(0.5312, 0.5312, 0.5312)]),
    "custom": dict(model="passive", dim=None, J=4, dt=1e-3, T=1.0, epsilon=1.0,
                   diffusion=(0.0,), v0=None, w0=None, I_app=0.0, probes=[]),
}

# region faces sit on dyadic cell boundaries, so every level J >= 3 resolves
# the same region (collocation points never fall on a face)
_SQ = (0.375, 0.625)
_SQ2 = (0.6875, 0.8125)

# ischemic-region presets: fields, extra overrides and probes (inside first)
JUMP_PRESETS = {
    "example1_fhn_1d": {
        "single": dict(fields={"k": [((_SQ,), 1.5)]}, I_app=0.15,
                       probes=[(0.5,), (0.2,)]),
    },
    "example2_fhn_2d": {
        "single": dict(fields={"k": [((_SQ, _SQ), 1.5)], "epsilon": [((_SQ, _SQ), 0.02)]},
                       probes=[(0.5, 0.5), (0.2344, 0.2344)]),
    },
    "example3_ms_2d": {
        "single": dict(fields={"tau_in": [((_SQ, _SQ), 0.6)]},
                       probes=[(0.4531, 0.4531), (0.2344, 0.2344)]),
        "double": dict(fields={"tau_in": [((_SQ, _SQ), 0.6), ((_SQ2, _SQ2), 0.15)]},
                       probes=[(0.5156, 0.5156), (0.7344, 0.7344), (0.2656, 0.2656)]),
    },
    "example4_hh": {
        "double": dict(fields={"g_K": [(((0.125, 0.3125),), 18.0), (((0.625, 0.8125),), 72.0)]},
                       probes=[(0.2,), (0.7,), (0.5,)]),
    },
    "example5_ms_3d": {
        "single": dict(fields={"tau_in": [((_SQ, _SQ, _SQ), 0.6)]},
                       probes=[(0.5312, 0.5312, 0.5312), (0.1562, 0.1562, 0.1562)]),
    },
}


class ConfigError(ValueError):
    pass


@dataclass
class FieldSpec:
    base: float | None = None
    regions: list = field(default_factory=list)  # [(bounds, value)]


@dataclass
class RunConfig:
    scenario: str = "custom"
    J: tuple = ()
    dt: float | None = None
    T: float | None = None
    dim: int | None = None
    domain: tuple | None = None
    model: str | None = None
    params: dict = field(default_factory=dict)
    stimulus: dict = field(default_factory=dict)
    epsilon: float | None = None
    diffusion: tuple | None = None
    v0: object = "default"
    w0: object = "default"
    fields: dict = field(default_factory=dict)
    jumps: str = "none"
    probes: list | None = None
    snapshots: list = field(default_factory=list)
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: Path = Path("out")
    allow_large: bool = False
    fd_N: int | None = None


# ---------------------------------------------------------------- parsing


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]


def _points(text: str) -> list[tuple]:
    return [tuple(float(c) for c in p.split(",")) for p in text.split(";") if p.strip()]


def _interval(text: str) -> tuple[float, float]:
    lo, sep, hi = text.strip().partition("..")
    if not sep:
        raise ValueError(f"interval '{text.strip()}' must be written lo..hi")
    return float(lo), float(hi)


def parse_region(text: str):
    """``"0.4..0.6, 0.4..0.6 -> 1.5"`` to ``(((0.4, 0.6), (0.4, 0.6)), 1.5)``."""
    box, sep, value = text.partition("->")
    if not sep:
        raise ValueError("region must be written 'lo..hi[, lo..hi ...] -> value'")
    return tuple(_interval(t) for t in box.split(",")), float(value)


_SAFE = {k: getattr(np, k) for k in ("sin", "cos", "tan", "exp", "log", "sqrt", "abs",
                                     "tanh", "pi", "where", "minimum", "maximum")}


def parse_expression(text: str):
    """A constant, or a function of ``x, y, z`` built from numpy primitives."""
    try:
        return float(text)
    except ValueError:
        pass
    code = compile(text, "<config>", "eval")
    bad = [n for n in code.co_names if n not in _SAFE and n not in ("x", "y", "z")]
    if bad:
        raise ValueError(f"unknown names in expression: {', '.join(bad)}")

    def f(*coords):
        env = dict(_SAFE)
        env.update(zip("xyz", coords))
        return eval(code, {"__builtins__": {}}, env)

    f.source = text
    return f


def _line_of(text: str, section: str, key: str) -> int | None:
    cur = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            cur = s[1:-1].strip()
        elif cur == section and re.match(rf"{re.escape(key)}\s*[=:]", s, re.IGNORECASE):
            return n
    return None


_RUN_KEYS = {"scenario", "j", "dt", "t", "dim", "domain", "probes", "snapshots", "jumps",
             "output", "allow_large"}
_MODEL_KEYS = {"name", "i_app", "stim_start", "stim_end", "stim_steps"}
_PROBLEM_KEYS = {"epsilon", "diffusion", "v0", "w0"}
_SOLVER_KEYS = {"method", "preconditioner", "tol", "max_iter", "restart"}
_REFERENCE_KEYS = {"n"}


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse config text; errors name the line and key."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc

    def fail(section, key, msg):
        line = _line_of(text, section, key)
        where = f"line {line}, " if line else ""
        raise ConfigError(f"{source}: {where}[{section}] {key}: {msg}")

    cfg = RunConfig()
    solver = {}
    for section in cp.sections():
        sec = cp[section]
        if section == "run":
            allowed = _RUN_KEYS
        elif section == "model":
            allowed = None  # model parameters are checked once the model is known
        elif section == "problem":
            allowed = _PROBLEM_KEYS
        elif section == "solver":
            allowed = _SOLVER_KEYS
        elif section == "reference":
            allowed = _REFERENCE_KEYS
        elif section.startswith("field."):
            allowed = None
        else:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in sec.items():
            k = key.lower()
            if allowed is not None and k not in allowed:
                fail(section, key, "unknown key")
            try:
                if section == "run":
                    if k == "scenario":
                        if raw not in SCENARIOS:
                            raise ValueError(f"unknown scenario, choose from {', '.join(SCENARIOS)}")
                        cfg.scenario = raw
                    elif k == "j":
                        cfg.J = tuple(int(x) for x in raw.split(","))
                    elif k == "dt":
                        cfg.dt = float(raw)
                    elif k == "t":
                        cfg.T = float(raw)
                    elif k == "dim":
                        cfg.dim = int(raw)
                    elif k == "domain":
                        cfg.domain = tuple(_interval(t) for t in raw.split(","))
                    elif k == "probes":
                        cfg.probes = _points(raw)
                    elif k == "snapshots":
                        cfg.snapshots = _floats(raw)
                    elif k == "jumps":
                        cfg.jumps = raw.strip()
                    elif k == "output":
                        cfg.output = Path(raw)
                    elif k == "allow_large":
                        cfg.allow_large = sec.getboolean(key)
                elif section == "model":
                    if k == "name":
                        if raw not in MODELS:
                            raise ValueError(f"unknown model, choose from {', '.join(MODELS)}")
                        cfg.model = raw
                    elif k == "i_app":
                        cfg.stimulus["amplitude"] = float(raw)
                    elif k == "stim_start":
                        cfg.stimulus["t_start"] = float(raw)
                    elif k == "stim_end":
                        cfg.stimulus["t_end"] = float(raw)
                    elif k == "stim_steps":
                        cfg.stimulus["max_steps"] = int(raw)
                    else:
                        cfg.params[key] = float(raw)
                elif section == "problem":
                    if k == "epsilon":
                        cfg.epsilon = float(raw)
                    elif k == "diffusion":
                        cfg.diffusion = tuple(_floats(raw))
                    elif k == "v0":
                        cfg.v0 = parse_expression(raw)
                    elif k == "w0":
                        cfg.w0 = tuple(parse_expression(t) for t in raw.split(";"))
                elif section == "solver":
                    if k in ("method", "preconditioner"):
                        solver[k] = raw.strip()
                    elif k == "tol":
                        solver[k] = float(raw)
                    else:
                        solver[k] = int(raw)
                elif section == "reference":
                    cfg.fd_N = int(raw)
                else:
                    name = section[len("field."):]
                    fs = cfg.fields.setdefault(name, FieldSpec())
                    if k == "base":
                        fs.base = float(raw)
                    elif k.startswith("region"):
                        fs.regions.append(parse_region(raw))
                    else:
                        raise ValueError("expected 'base' or 'regionN'")
            except (ValueError, SyntaxError) as exc:
                fail(section, key, str(exc))
    try:
        cfg.solver = SolverConfig(**solver)
    except ValueError as exc:
        raise ConfigError(f"{source}: [solver] {exc}") from exc
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def scenario_config(name: str, **overrides) -> RunConfig:
    """Config for a named scenario, with keyword overrides of RunConfig fields."""
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}")
    return replace(RunConfig(scenario=name), **overrides)


# ---------------------------------------------------------------- resolution


def resolve(cfg: RunConfig) -> dict:
    """Scenario defaults merged with config overrides (everything explicit)."""
    d = dict(_DEFAULTS[cfg.scenario])
    preset = {}
    if cfg.jumps not in ("none", ""):
        presets = JUMP_PRESETS.get(cfg.scenario, {})
        if cfg.jumps not in presets:
            raise ConfigError(f"scenario {cfg.scenario} has no '{cfg.jumps}' jump preset "
                              f"(available: {', '.join(presets) or 'none'})")
        preset = presets[cfg.jumps]
        d.update({k: v for k, v in preset.items() if k != "fields"})
    if cfg.model is not None:
        if cfg.scenario != "custom" and cfg.model != d["model"]:
            raise ConfigError(f"scenario {cfg.scenario} fixes the model to {d['model']}")
        d["model"] = cfg.model
    dim = d["dim"]
    if cfg.dim is not None:
        if dim is not None and cfg.dim != dim:
            raise ConfigError(f"scenario {cfg.scenario} is {dim}-dimensional")
        dim = cfg.dim
    if dim is None:
        dim = len(cfg.J) if cfg.J else (len(cfg.domain) if cfg.domain else 1)
    J = cfg.J or (d["J"],)
    if len(J) == 1:
        J = J * dim
    if len(J) != dim:
        raise ConfigError(f"need 1 or {dim} resolution levels, got {len(J)}")
    for j in J:
        if not 0 <= j <= MAX_LEVEL:
            raise ConfigError(f"resolution level {j} outside 0..{MAX_LEVEL}")
    if dim == 3 and max(J) > MAX_LEVEL_3D and not cfg.allow_large:
        raise ConfigError(f"3D runs are capped at J={MAX_LEVEL_3D}; set allow_large to override")
    domain = cfg.domain or unit_box(dim)
    if len(domain) != dim:
        raise ConfigError(f"domain has {len(domain)} axes, problem has {dim}")
    diffusion = cfg.diffusion if cfg.diffusion is not None else d["diffusion"]
    if len(diffusion) == 1:
        diffusion = tuple(diffusion) * dim
    if len(diffusion) != dim:
        raise ConfigError(f"need 1 or {dim} diffusion coefficients")
    stim = dict(amplitude=d["I_app"], t_start=0.0, t_end=d.get("stim_end", math.inf),
                max_steps=d.get("stim_steps"))
    stim.update(cfg.stimulus)
    fields = {k: FieldSpec(None, list(v)) for k, v in preset.get("fields", {}).items()}
    for name, fs in cfg.fields.items():
        cur = fields.setdefault(name, FieldSpec())
        if fs.base is not None:
            cur.base = fs.base
        if fs.regions:
            cur.regions = list(fs.regions)
    return dict(
        scenario=cfg.scenario, model=d["model"], dim=dim, J=tuple(J), domain=tuple(domain),
        dt=cfg.dt if cfg.dt is not None else d["dt"],
        T=cfg.T if cfg.T is not None else d["T"],
        epsilon=cfg.epsilon if cfg.epsilon is not None else d["epsilon"],
        diffusion=tuple(diffusion),
        v0=d["v0"] if isinstance(cfg.v0, str) else cfg.v0,
        w0=d["w0"] if isinstance(cfg.w0, str) else cfg.w0,
        stimulus=stim, params=dict(cfg.params), fields=fields,
        probes=cfg.probes if cfg.probes is not None else d["probes"],
        snapshots=list(cfg.snapshots), jumps=cfg.jumps,
    )


def _field(base, spec: FieldSpec | None, domain):
    if spec is None:
        return ParameterField(base, (), domain)
    b = spec.base if spec.base is not None else base
    regions = tuple(JumpRegion(bounds, value) for bounds, value in spec.regions)
    return ParameterField(b, regions, domain)


def build_spec(cfg: RunConfig | dict) -> ProblemSpec:
    r = resolve(cfg) if isinstance(cfg, RunConfig) else cfg
    cls = MODELS[r["model"]]
    domain = r["domain"]
    known = {f for f in cls.__dataclass_fields__ if f not in ("stimulus", "field_names", "gate_names")}
    field_names = cls.__dataclass_fields__["field_names"].default
    for name in list(r["params"]) + list(r["fields"]):
        if name not in known and name not in ("epsilon", "d1", "d2", "d3"):
            raise ConfigError(f"model {r['model']} has no parameter {name!r}")
    base = cls()
    kw = {}
    for name in known:
        val = r["params"].get(name, getattr(base, name))
        if name in field_names:
            cur = val.base_value if isinstance(val, ParameterField) else val
            kw[name] = _field(cur, r["fields"].get(name), domain)
        else:
            if name in r["fields"]:
                raise ConfigError(f"{name} cannot vary in space")
            kw[name] = val
    s = r["stimulus"]
    model = cls(stimulus=Stimulus(s["amplitude"], s["t_start"], s["t_end"], s["max_steps"]), **kw)
    eps = _field(r["epsilon"], r["fields"].get("epsilon"), domain)
    diff = tuple(_field(dv, r["fields"].get(f"d{a + 1}"), domain) for a, dv in enumerate(r["diffusion"]))
    bases = tuple(HaarBasis(lo, hi, j) for (lo, hi), j in zip(domain, r["J"]))
    return ProblemSpec(bases, model, diff, eps, r["v0"], r["w0"], r["T"], r["dt"])


def manifest(cfg: RunConfig, spec: ProblemSpec, extra: dict | None = None) -> dict:
    """Every resolved setting, including defaults filled in by the code."""
    r = resolve(cfg)

    def plain(x):
        if callable(x):
            return getattr(x, "source", repr(x))
        if isinstance(x, tuple):
            return [plain(v) for v in x]
        if isinstance(x, float) and math.isinf(x):
            return None
        return x

    out = {
        "scenario": r["scenario"],
        "dimension": spec.dim,
        "levels_J": list(r["J"]),
        "collocation_points_per_axis": [2 * b.M for b in spec.bases],
        "domain": [list(d) for d in spec.domain],
        "dt": spec.dt, "T": spec.T, "n_steps": spec.n_steps,
        "model": r["model"],
        "model_constants": spec.model.constants(),
        "gate_names": list(spec.model.gate_names),
        "epsilon": describe(spec.epsilon),
        "diffusion": [describe(f) for f in spec.diffusion],
        "initial_v": plain(r["v0"]) if r["v0"] is not None else spec.model.resting_state()[0],
        "initial_w": plain(r["w0"]) if r["w0"] is not None else spec.model.resting_state()[1],
        "jump_preset": r["jumps"],
        "probes": [list(p) for p in r["probes"]],
        "snapshot_times": r["snapshots"],
        "solver": {k: v for k, v in asdict(cfg.solver).items()},
        "unknown_ordering": "x-fastest (Fortran order over x, y, z)",
        "row_ordering": "hierarchical: wavelet i paired with the cell right of its centre breakpoint",
        "boundary_closure": [asdict(boundary_closure(spec, a)) for a in range(spec.dim)],
        "time_stepping": "IMEX Euler: diffusion implicit, reaction and gating explicit",
        "csv_float_format": FLOAT_FMT,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    if extra:
        out.update(extra)
    return out


# ---------------------------------------------------------------- CSV output

FLOAT_FMT = "{:.12e}"


def _fmt(x) -> str:
    return FLOAT_FMT.format(float(x))


def timeseries_csv(result: RunResult) -> str:
    d = result.series.shape[2] - 1
    lines = ["t,probe_id,v" + "".join(f",w{g + 1}" for g in range(d))]
    for s, t in enumerate(result.times):
        for p in range(result.series.shape[0]):
            vals = ",".join(_fmt(x) for x in result.series[p, s])
            lines.append(f"{_fmt(t)},{p},{vals}")
    return "\n".join(lines) + "\n"


def snapshot_csv(grid, v, w) -> str:
    dim = len(grid)
    head = ",".join("xyz"[:dim]) + ",v" + "".join(f",w{g + 1}" for g in range(len(w)))
    coords = np.meshgrid(*grid, indexing="ij")
    cols = [c.ravel(order="F") for c in coords] + [np.asarray(v).ravel(order="F")]
    cols += [np.asarray(x).ravel(order="F") for x in w]
    rows = np.column_stack(cols)
    return head + "\n" + "\n".join(",".join(_fmt(x) for x in row) for row in rows) + "\n"


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def _snapshot_value(snap):
    # collocation snapshots are states, reference snapshots are (v, w) pairs
    if isinstance(snap, tuple):
        return snap
    return snap.v, snap.w


# ---------------------------------------------------------------- commands


@dataclass
class SolveOutput:
    result: RunResult
    files: list
    manifest: dict


def cmd_solve(cfg: RunConfig, out: Path | None = None) -> SolveOutput:
    spec = build_spec(cfg)
    r = resolve(cfg)
    out = Path(out or cfg.output)
    res = HaarSolver(spec, cfg.solver).run(r["probes"], r["snapshots"])
    files = [_write(out / "timeseries.csv", timeseries_csv(res))]
    for t, snap in sorted(res.snapshots.items()):
        v, w = _snapshot_value(snap)
        files.append(_write(out / f"snapshot_t{t:.6f}.csv", snapshot_csv(res.grid, v, w)))
    man = manifest(cfg, spec, {
        "probe_locations": [list(p) for p in res.locations],
        "iterations": res.iterations,
        "solve_time_s": res.solve_time,
        "total_time_s": res.total_time,
        "files": [f.name for f in files],
    })
    files.append(_write(out / "manifest.json", json.dumps(man, indent=2, default=str)))
    return SolveOutput(res, files, man)


@dataclass
class ErrorTable:
    rows: list  # (location, dt, abs_error)
    reference: str
    orders: dict = field(default_factory=dict)
    complete: bool = True

    def errors(self, location: str = "max") -> list[float]:
        return [e for loc, _, e in self.rows if loc == location]

    def to_csv(self) -> str:
        lines = ["location,dt,abs_error"]
        lines += [f"{loc},{_fmt(dt)},{_fmt(e)}" for loc, dt, e in self.rows]
        return "\n".join(lines) + "\n"


class ReferenceRunError(RuntimeError):
    def __init__(self, message, partial):
        super().__init__(message)
        self.partial = partial


def _loc_label(p) -> str:
    return "(" + ",".join(f"{x:.4f}" for x in p) + ")"


def temporal_error(coarse: RunResult, ref: RunResult) -> np.ndarray:
    """Per-probe max over the coarse time grid of ``|v - v_ref|``; the
    reference is sampled at the coarse times (steps must nest)."""
    idx = np.searchsorted(ref.times, coarse.times - 1e-12)
    idx = np.minimum(idx, len(ref.times) - 1)
    if np.max(np.abs(ref.times[idx] - coarse.times)) > 1e-9:
        raise ValueError("reference time grid does not contain the coarse time grid")
    return np.max(np.abs(coarse.series[:, :, 0] - ref.series[:, idx, 0]), axis=1)


def cmd_convergence(cfg: RunConfig, dt_list: Sequence[float], ref_dt: float = 1e-5,
                    oracle: str = "hw", fd_N: int | None = None,
                    ref_solver: SolverConfig | None = None) -> ErrorTable:
    """Error of each ``dt`` against a fine-``dt`` reference at the probes,
    plus a ``max`` row over probes, and fitted temporal orders."""
    dt_list = [float(x) for x in dt_list]
    if any(b >= a for a, b in zip(dt_list, dt_list[1:])):
        raise ValueError("dt_list must be strictly descending")
    if ref_dt >= min(dt_list):
        raise ValueError("reference dt must be finer than every entry of dt_list")
    r = resolve(cfg)
    probes = r["probes"]
    if not probes:
        raise ValueError("convergence needs at least one probe")
    runs = []
    for dt in dt_list:
        spec = build_spec(replace(cfg, dt=dt))
        runs.append(HaarSolver(spec, cfg.solver).run(probes))
    ref_spec = build_spec(replace(cfg, dt=ref_dt))
    desc = f"{oracle} dt={ref_dt:g}"
    try:
        if oracle == "hw":
            ref = HaarSolver(ref_spec, ref_solver or SolverConfig(method="direct")).run(probes)
            desc += f" J={list(r['J'])}"
        elif oracle == "fd":
            n = fd_N or cfg.fd_N or 2 * max(b.M for b in ref_spec.bases) * 4 + 1
            ref = fd_run(ref_spec, FdGrid(n), probes=probes)
            desc += f" N={n}"
        else:
            raise ValueError(f"unknown oracle {oracle!r}")
    except (SimulationError, LinearSolverError, FloatingPointError) as exc:
        partial = ErrorTable([(_loc_label(p), dt, math.nan) for dt in dt_list for p in probes],
                             desc, complete=False)
        raise ReferenceRunError(f"reference run failed: {exc}", partial) from exc
    rows = []
    per = {}
    for dt, run in zip(dt_list, runs):
        err = temporal_error(run, ref)
        for p, e in zip(probes, err):
            rows.append((_loc_label(p), dt, float(e)))
            per.setdefault(_loc_label(p), []).append(float(e))
        rows.append(("max", dt, float(err.max())))
        per.setdefault("max", []).append(float(err.max()))
    orders = {}
    if len(dt_list) >= 2:
        for loc, errs in per.items():
            e = np.maximum(errs, np.finfo(float).tiny)
            orders[loc] = float(np.polyfit(np.log10(dt_list), np.log10(e), 1)[0])
    return ErrorTable(rows, desc, orders)


@dataclass
class ResolutionReport:
    levels: list
    times: np.ndarray
    curves: dict  # J -> (probe, sample) values at the exact probe points
    gaps: list  # max |curve_J - curve_J'| for successive levels

    def to_csv(self) -> str:
        lines = ["J,t,probe_id,v"]
        for J in self.levels:
            c = self.curves[J]
            for s, t in enumerate(self.times):
                for p in range(c.shape[0]):
                    lines.append(f"{J},{_fmt(t)},{p},{_fmt(c[p, s])}")
        return "\n".join(lines) + "\n"


def cmd_resolution_test(cfg: RunConfig, J_list: Sequence[int], samples: int = 100) -> ResolutionReport:
    """Probe curves at successive levels, evaluated at the exact probe points
    through the value-basis interpolant so that levels are comparable."""
    levels = sorted(int(j) for j in J_list)
    if len(levels) < 2:
        raise ValueError("need at least two levels")
    r = resolve(cfg)
    probes = [np.atleast_1d(np.asarray(p, dtype=float)) for p in r["probes"]]
    if not probes:
        raise ValueError("resolution test needs at least one probe")
    curves = {}
    times = None
    for J in levels:
        spec = build_spec(replace(cfg, J=(J,)))
        n = spec.n_steps
        every = max(1, n // samples)
        solver = HaarSolver(spec, cfg.solver)
        disc = solver.disc
        # per-probe, per-axis value-basis rows, built once
        rows = [[disc.phi_at(a, x) for a, x in enumerate(p)] for p in probes]
        vals, ts = [], []

        def sample(st):
            coeffs = disc.value_coefficients(st.v)
            out = []
            for pr in rows:
                c = coeffs
                for row in pr:
                    c = np.tensordot(row, c, axes=(0, 0))
                out.append(float(c))
            vals.append(out)
            ts.append(st.t)

        state = solver.initial_state()
        sample(state)
        for s in range(1, n + 1):
            state = solver.step(state)
            if s % every == 0 or s == n:
                sample(state)
        curves[J] = np.array(vals).T
        times = np.array(ts) if times is None else times
    gaps = [float(np.max(np.abs(curves[a] - curves[b]))) for a, b in zip(levels, levels[1:])]
    return ResolutionReport(levels, times, curves, gaps)


@dataclass
class BenchRow:
    method: str
    preconditioner: str
    iterations: int
    solve_time: float
    total_time: float
    max_diff: float
    status: str = "ok"


def cmd_bench_solvers(cfg: RunConfig, methods: Sequence[str] = ("gmres", "cgs", "bicg", "bicgstab"),
                      steps: int | None = None, preconditioner: str | None = None) -> list[BenchRow]:
    """Run ``steps`` time steps with every method; the direct solver is the
    baseline for the ∞-norm agreement column."""
    spec = build_spec(cfg)
    n = steps if steps is not None else spec.n_steps
    n = max(1, min(n, spec.n_steps))
    spec = replace(spec, T=n * spec.dt)
    pc = preconditioner or cfg.solver.preconditioner

    def go(sc: SolverConfig):
        solver = HaarSolver(spec, sc)
        t0 = time.perf_counter()
        st = solver.initial_state()
        for _ in range(n):
            st = solver.step(st)
        return st.v, solver.iterations, solver.solve_time, time.perf_counter() - t0

    base_v, _, bt, btot = go(SolverConfig(method="direct", preconditioner="none"))
    rows = [BenchRow("direct", "none", 0, bt, btot, 0.0)]
    for m in methods:
        sc = replace(cfg.solver, method=m, preconditioner=pc if m != "direct" else "none")
        try:
            v, it, st, tot = go(sc)
            rows.append(BenchRow(m, sc.preconditioner, it, st, tot, float(np.max(np.abs(v - base_v)))))
        except (LinearSolverError, SimulationError, ArithmeticError) as exc:
            rows.append(BenchRow(m, sc.preconditioner, getattr(exc, "iterations", 0), math.nan,
                                 math.nan, math.nan, f"failed: {exc}"))
    return rows


def bench_csv(rows: list[BenchRow]) -> str:
    lines = ["method,preconditioner,iterations,solve_time_s,total_time_s,max_diff_vs_direct,status"]
    for r in rows:
        lines.append(f"{r.method},{r.preconditioner},{r.iterations},{r.solve_time:.6f},"
                     f"{r.total_time:.6f},{_fmt(r.max_diff)},{r.status}")
    return "\n".join(lines) + "\n"


@dataclass
class CompareReport:
    probes: list
    hw_locations: list
    fd_locations: list
    max_abs: list
    mean_abs: list
    t_of_max: list
    amplitude: list  # HW max - min per probe

    def to_csv(self) -> str:
        lines = ["probe_id,hw_location,fd_location,max_abs,mean_abs,t_of_max,amplitude"]
        for i in range(len(self.probes)):
            lines.append(f"{i},{_loc_label(self.hw_locations[i])},{_loc_label(self.fd_locations[i])},"
                         f"{_fmt(self.max_abs[i])},{_fmt(self.mean_abs[i])},{_fmt(self.t_of_max[i])},"
                         f"{_fmt(self.amplitude[i])}")
        return "\n".join(lines) + "\n"


def cmd_compare_ref(cfg: RunConfig, fd_N: int | None = None) -> tuple[CompareReport, RunResult, RunResult]:
    spec = build_spec(cfg)
    if spec.dim > 2:
        raise ValueError("reference comparison is available in 1D and 2D only")
    r = resolve(cfg)
    probes = r["probes"]
    hw = HaarSolver(spec, cfg.solver).run(probes)
    n = fd_N or cfg.fd_N or 4 * max(b.M for b in spec.bases) + 1
    fd = fd_run(spec, FdGrid(n), probes=probes)
    d = compare(hw, fd)
    amp = [float(np.ptp(hw.series[p, :, 0])) for p in range(len(probes))]
    rep = CompareReport(list(probes), hw.locations, fd.locations, d.max_abs, d.mean_abs,
                        d.t_of_max, amp)
    return rep, hw, fd


def cmd_approx(expression: str, J_list: Sequence[int], dim: int = 1,
               lipschitz: float | None = None, points: int = 201):
    """Haar reconstruction and coefficient decay of ``f`` on the unit box."""
    f = parse_expression(expression)
    if not callable(f):
        const = f
        f = lambda *c: np.full(np.broadcast(*c).shape, const)  # noqa: E731
    report = coefficient_decay(f, J_list, unit_box(dim), lipschitz)
    J = max(J_list)
    s = approximate(f, tuple(HaarBasis(0.0, 1.0, J) for _ in range(dim)))
    if dim == 1:
        xs = np.linspace(0.0, 1.0, points)
        rec = [(x, float(f(np.array(x))), series_eval(s, x)) for x in xs]
    else:
        # along the main diagonal
        ts = np.linspace(0.0, 1.0, points)
        rec = [(t, float(f(*[np.array(t)] * dim)), series_eval(s, [t] * dim)) for t in ts]
    return report, rec


# ---------------------------------------------------------------- CLI


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="run config (INI)")
    p.add_argument("--scenario", choices=SCENARIOS, help="scenario when no config is given")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--J", help="resolution level(s), e.g. 4 or 4,3")
    p.add_argument("--dt", type=float)
    p.add_argument("--T", type=float)
    p.add_argument("--jumps", help="jump preset: none, single, double")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--preconditioner", choices=PRECONDITIONERS)
    p.add_argument("--tol", type=float)
    p.add_argument("--restart", type=int)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--allow-large", action="store_true", help="lift the 3D level cap")


def _config_from_args(a) -> RunConfig:
    if a.config:
        cfg = load_config(a.config)
    else:
        cfg = scenario_config(a.scenario or "example1_fhn_1d")
    if a.scenario and a.config and a.scenario != cfg.scenario:
        raise ConfigError("--scenario conflicts with the config file")
    upd = {}
    if a.J:
        upd["J"] = tuple(int(x) for x in a.J.split(","))
    for k in ("dt", "T", "jumps"):
        if getattr(a, k) is not None:
            upd[k] = getattr(a, k)
    if a.out:
        upd["output"] = a.out
    if a.allow_large:
        upd["allow_large"] = True
    s = {k: getattr(a, k) for k in ("method", "preconditioner", "tol", "restart", "max_iter")
         if getattr(a, k) is not None}
    if s:
        upd["solver"] = replace(cfg.solver, **s)
    return replace(cfg, **upd)


def main(argv: Sequence[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="haarwave", description="Haar wavelet collocation solver benchmarks")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run a scenario and write CSV + manifest")
    _common(p)

    p = sub.add_parser("convergence", help="temporal error table against a fine reference")
    _common(p)
    p.add_argument("--dt-list", default="1e-2,1e-3,1e-4")
    p.add_argument("--ref-dt", type=float, default=1e-5)
    p.add_argument("--oracle", choices=("hw", "fd"), default="hw")
    p.add_argument("--fd-N", type=int)

    p = sub.add_parser("resolution-test", help="probe curves at successive levels")
    _common(p)
    p.add_argument("--J-list", default="3,4,5")

    p = sub.add_parser("bench-solvers", help="iteration counts and timings per Krylov method")
    _common(p)
    p.add_argument("--methods", default="gmres,cgs,bicg,bicgstab")
    p.add_argument("--steps", type=int, default=20)

    p = sub.add_parser("compare-ref", help="compare with the finite-difference reference")
    _common(p)
    p.add_argument("--fd-N", type=int)

    p = sub.add_parser("approx", help="Haar reconstruction and coefficient decay of f")
    p.add_argument("--function", default="abs(x - 0.3)")
    p.add_argument("--dim", type=int, default=1, choices=(1, 2, 3))
    p.add_argument("--J-list", default="2,3,4,5,6")
    p.add_argument("--lipschitz", type=float)
    p.add_argument("--out", type=Path, default=Path("out"))

    a = ap.parse_args(argv)
    try:
        return _dispatch(a)
    except (ConfigError, ValueError, SimulationError, LinearSolverError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(a) -> int:
    if a.command == "approx":
        J_list = [int(x) for x in a.J_list.split(",")]
        rep, rec = cmd_approx(a.function, J_list, a.dim, a.lipschitz)
        lines = ["level,max_coefficient" + (",bound" if rep.bound else "")]
        for i, (j, m) in enumerate(zip(rep.levels, rep.maxima)):
            lines.append(f"{j},{_fmt(m)}" + (f",{_fmt(rep.bound[i])}" if rep.bound else ""))
        _write(a.out / "decay.csv", "\n".join(lines) + "\n")
        _write(a.out / "reconstruction.csv",
               "s,f,haar\n" + "".join(f"{_fmt(x)},{_fmt(y)},{_fmt(z)}\n" for x, y, z in rec))
        print(f"fitted slope of log2 max|coefficient| per level: {rep.slope:.3f}")
        return 0

    cfg = _config_from_args(a)
    out = Path(cfg.output)
    if a.command == "solve":
        res = cmd_solve(cfg, out)
        print(f"wrote {len(res.files)} files to {out} "
              f"({res.result.iterations} iterations, {res.result.total_time:.2f} s)")
    elif a.command == "convergence":
        dts = _floats(a.dt_list)
        try:
            tab = cmd_convergence(cfg, dts, a.ref_dt, a.oracle, a.fd_N)
        except ReferenceRunError as exc:
            _write(out / "errors_partial.csv", exc.partial.to_csv())
            raise
        _write(out / "errors.csv", tab.to_csv())
        print(f"reference: {tab.reference}")
        for loc, dt, e in tab.rows:
            print(f"{loc:>24s}  dt={dt:<8g} error={e:.3e}")
        for loc, o in tab.orders.items():
            print(f"fitted temporal order at {loc}: {o:.2f}")
    elif a.command == "resolution-test":
        rep = cmd_resolution_test(cfg, [int(x) for x in a.J_list.split(",")])
        _write(out / "resolution.csv", rep.to_csv())
        for (j0, j1), g in zip(zip(rep.levels, rep.levels[1:]), rep.gaps):
            print(f"gap J={j0} vs J={j1}: {g:.3e}")
    elif a.command == "bench-solvers":
        rows = cmd_bench_solvers(cfg, a.methods.split(","), a.steps)
        _write(out / "solvers.csv", bench_csv(rows))
        for r in rows:
            print(f"{r.method:>9s}+{r.preconditioner:<5s} it={r.iterations:<6d} "
                  f"solve={r.solve_time:.3f}s total={r.total_time:.3f}s "
                  f"diff={r.max_diff:.1e} {r.status}")
    elif a.command == "compare-ref":
        rep, _, _ = cmd_compare_ref(cfg, a.fd_N)
        _write(out / "compare.csv", rep.to_csv())
        for i, m in enumerate(rep.max_abs):
            print(f"probe {i} {_loc_label(rep.hw_locations[i])}: max |HW - FD| = {m:.3e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
