"""Strict JSON run configuration.

One JSON document describes a model, its ambiguity set, and the grid,
solver, and simulation settings of a run.  Parsing is strict: unknown
keys anywhere are rejected, ``schema_version`` must equal 1, and every
malformed field raises :class:`ConfigurationError` with the offending
location.  Coefficients are given as numbers or expression strings in
the variables x1, x2, ...
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coefficients import CoefficientFn, as_coefficient
from .errors import ConfigurationError
from .gcore import UncertaintySet
from .model import ModelSpec
from .pde import Grid

__all__ = [
    "SolverSettings",
    "SimSettings",
    "OutputSettings",
    "RunConfig",
    "parse_config",
    "load_config",
    "build_control",
]

SCHEMA_VERSION = 1

_TOP_KEYS = {
    "schema_version", "label", "model", "uncertainty", "grid",
    "solver", "sim", "assumption_box", "payoff", "output",
}
_MODEL_KEYS = {"m", "d", "b", "sigma", "r", "k", "v", "h"}
_UNC_KEYS_INTERVAL = {"kind", "lo", "hi"}
_UNC_KEYS_FINITE = {"kind", "members"}
_GRID_KEYS = {"bounds", "nodes", "horizon", "time_steps"}
_SOLVER_KEYS = {
    "delta0", "tol", "tol_inner", "gamma1", "gamma2", "max_halvings",
    "max_sweeps", "mode", "anchor", "gradient_cap",
}
_SIM_KEYS = {"x0", "horizon", "dt", "n_steps", "n_paths", "seed", "control",
             "checkpoints"}
_BOX_KEYS = {"bounds", "nodes"}
_OUTPUT_KEYS = {"dir", "formats"}
_OUTPUT_FORMATS = {"csv", "json"}


def _require_mapping(obj, where: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigurationError(f"{where} must be an object, got {type(obj).__name__}")
    return obj


def _reject_unknown(obj: dict, allowed: set, where: str) -> None:
    extra = sorted(set(obj) - allowed)
    if extra:
        raise ConfigurationError(f"unknown key(s) in {where}: {', '.join(extra)}")


def _get_number(obj: dict, key: str, where: str, default=None, required=False):
    if key not in obj:
        if required:
            raise ConfigurationError(f"{where} is missing required key {key!r}")
        return default
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigurationError(f"{where}.{key} must be a number")
    return float(val)


def _get_int(obj: dict, key: str, where: str, default=None, required=False):
    if key not in obj:
        if required:
            raise ConfigurationError(f"{where} is missing required key {key!r}")
        return default
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, int):
        raise ConfigurationError(f"{where}.{key} must be an integer")
    return int(val)


def _coeff_entry(val, where: str):
    if isinstance(val, bool) or not isinstance(val, (int, float, str)):
        raise ConfigurationError(
            f"{where} must be a number or an expression string"
        )
    return val


@dataclass(frozen=True)
class SolverSettings:
    delta0: float = 0.5
    tol: float = 1e-6
    tol_inner: float = 1e-10
    gamma1: float = -1.0
    gamma2: tuple | None = None
    max_halvings: int = 20
    max_sweeps: int = 500_000
    mode: str = "pricing"
    anchor: tuple | None = None
    gradient_cap: float = math.inf


@dataclass(frozen=True)
class SimSettings:
    x0: tuple
    horizon: float
    dt: float
    n_paths: int
    seed: int = 0
    control: object = "worst_case"
    checkpoints: tuple | None = None

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True)
class OutputSettings:
    dir: str | None = None
    formats: tuple = ("csv", "json")


@dataclass(frozen=True)
class RunConfig:
    label: str
    model: ModelSpec
    grid: Grid | None
    solver: SolverSettings
    sim: SimSettings | None
    assumption_box: tuple  # (bounds, nodes)
    payoff: CoefficientFn | None
    output: OutputSettings = field(default_factory=OutputSettings)


def _parse_uncertainty(obj, where: str) -> UncertaintySet:
    obj = _require_mapping(obj, where)
    kind = obj.get("kind")
    if kind == "interval":
        _reject_unknown(obj, _UNC_KEYS_INTERVAL, where)
        lo = _get_number(obj, "lo", where, required=True)
        hi = _get_number(obj, "hi", where, required=True)
        return UncertaintySet.interval(lo, hi)
    if kind == "finite":
        _reject_unknown(obj, _UNC_KEYS_FINITE, where)
        members = obj.get("members")
        if not isinstance(members, list) or not members:
            raise ConfigurationError(f"{where}.members must be a nonempty list")
        return UncertaintySet.finite([np.asarray(m, dtype=float) for m in members])
    raise ConfigurationError(f"{where}.kind must be 'interval' or 'finite'")


def _parse_model(obj, uncertainty: UncertaintySet, label: str) -> ModelSpec:
    where = "model"
    obj = _require_mapping(obj, where)
    _reject_unknown(obj, _MODEL_KEYS, where)
    m = _get_int(obj, "m", where, required=True)
    d = _get_int(obj, "d", where, required=True)
    if m < 1 or d < 1:
        raise ConfigurationError("model.m and model.d must be positive")

    b = obj.get("b")
    if not isinstance(b, list) or len(b) != m:
        raise ConfigurationError(f"model.b must be a list of {m} coefficients")
    b = [_coeff_entry(v, f"model.b[{i}]") for i, v in enumerate(b)]

    sigma = obj.get("sigma")
    if not isinstance(sigma, list) or len(sigma) != m or any(
        not isinstance(row, list) or len(row) != d for row in sigma
    ):
        raise ConfigurationError(f"model.sigma must be an {m} x {d} nested list")
    sigma = [
        [_coeff_entry(v, f"model.sigma[{i}][{j}]") for j, v in enumerate(row)]
        for i, row in enumerate(sigma)
    ]

    if "r" not in obj:
        raise ConfigurationError("model is missing required key 'r'")
    r = _coeff_entry(obj["r"], "model.r")

    k = obj.get("k")
    if k is not None:
        if not isinstance(k, list) or len(k) != d or any(
            not isinstance(row, list) or len(row) != d for row in k
        ):
            raise ConfigurationError(f"model.k must be a {d} x {d} nested list")
        k = [
            [_coeff_entry(v, f"model.k[{i}][{j}]") for j, v in enumerate(row)]
            for i, row in enumerate(k)
        ]

    v = obj.get("v")
    if v is not None:
        if not isinstance(v, list) or len(v) != d:
            raise ConfigurationError(f"model.v must be a list of {d} coefficients")
        v = [_coeff_entry(x, f"model.v[{i}]") for i, x in enumerate(v)]

    h = obj.get("h")
    if h is not None:
        ok = isinstance(h, list) and len(h) == d and all(
            isinstance(row, list) and len(row) == d and all(
                isinstance(cell, list) and len(cell) == m for cell in row
            )
            for row in h
        )
        if not ok:
            raise ConfigurationError(f"model.h must be a {d} x {d} x {m} nested list")
        h = [
            [
                [_coeff_entry(x, f"model.h[{i}][{j}][{l}]") for l, x in enumerate(cell)]
                for j, cell in enumerate(row)
            ]
            for i, row in enumerate(h)
        ]

    try:
        return ModelSpec.build(
            m=m, d=d, b=b, sigma=sigma, r=r, k=k, v=v, h=h,
            uncertainty=uncertainty, label=label,
        )
    except ConfigurationError:
        raise
    except Exception as exc:  # surface parser/shape failures with context
        raise ConfigurationError(f"model: {exc}") from exc


def _parse_bounds_nodes(obj: dict, where: str):
    bounds = obj.get("bounds")
    nodes = obj.get("nodes")
    if not isinstance(bounds, list) or not all(
        isinstance(p, list) and len(p) == 2 for p in bounds
    ):
        raise ConfigurationError(f"{where}.bounds must be a list of [lo, hi] pairs")
    if not isinstance(nodes, list) or len(nodes) != len(bounds):
        raise ConfigurationError(f"{where}.nodes must list one count per axis")
    for n in nodes:
        if isinstance(n, bool) or not isinstance(n, int):
            raise ConfigurationError(f"{where}.nodes entries must be integers")
    return [list(map(float, p)) for p in bounds], [int(n) for n in nodes]


def _parse_grid(obj, where: str = "grid") -> Grid:
    obj = _require_mapping(obj, where)
    _reject_unknown(obj, _GRID_KEYS, where)
    bounds, nodes = _parse_bounds_nodes(obj, where)
    horizon = _get_number(obj, "horizon", where)
    time_steps = _get_int(obj, "time_steps", where)
    try:
        return Grid.build(bounds, nodes, horizon=horizon, time_steps=time_steps)
    except Exception as exc:
        raise ConfigurationError(f"{where}: {exc}") from exc


def _parse_solver(obj) -> SolverSettings:
    if obj is None:
        return SolverSettings()
    where = "solver"
    obj = _require_mapping(obj, where)
    _reject_unknown(obj, _SOLVER_KEYS, where)
    gamma2 = obj.get("gamma2")
    if gamma2 is not None:
        if not isinstance(gamma2, list):
            raise ConfigurationError("solver.gamma2 must be a nested list")
        gamma2 = tuple(tuple(float(x) for x in row) for row in gamma2)
    anchor = obj.get("anchor")
    if anchor is not None:
        if not isinstance(anchor, list):
            raise ConfigurationError("solver.anchor must be a list of coordinates")
        anchor = tuple(float(x) for x in anchor)
    mode = obj.get("mode", "pricing")
    if mode not in ("pricing", "parabolic", "ergodic", "generic"):
        raise ConfigurationError(
            "solver.mode must be 'pricing' (aliases 'parabolic', 'ergodic') "
            "or 'generic'"
        )
    return SolverSettings(
        delta0=_get_number(obj, "delta0", where, default=0.5),
        tol=_get_number(obj, "tol", where, default=1e-6),
        tol_inner=_get_number(obj, "tol_inner", where, default=1e-10),
        gamma1=_get_number(obj, "gamma1", where, default=-1.0),
        gamma2=gamma2,
        max_halvings=_get_int(obj, "max_halvings", where, default=20),
        max_sweeps=_get_int(obj, "max_sweeps", where, default=500_000),
        mode=mode,
        anchor=anchor,
        gradient_cap=_get_number(obj, "gradient_cap", where, default=math.inf),
    )


def _parse_sim(obj, m: int) -> SimSettings | None:
    if obj is None:
        return None
    where = "sim"
    obj = _require_mapping(obj, where)
    _reject_unknown(obj, _SIM_KEYS, where)
    x0 = obj.get("x0")
    if not isinstance(x0, list) or len(x0) != m:
        raise ConfigurationError(f"sim.x0 must list {m} coordinates")
    control = obj.get("control", "worst_case")
    if not isinstance(control, (str, dict)):
        raise ConfigurationError("sim.control must be a string or an object")
    checkpoints = obj.get("checkpoints")
    if checkpoints is not None:
        if not isinstance(checkpoints, list):
            raise ConfigurationError("sim.checkpoints must be a list of times")
        checkpoints = tuple(float(t) for t in checkpoints)
    horizon = _get_number(obj, "horizon", where, required=True)
    if ("dt" in obj) == ("n_steps" in obj):
        raise ConfigurationError("sim needs exactly one of 'dt' or 'n_steps'")
    if "dt" in obj:
        dt = _get_number(obj, "dt", where, required=True)
    else:
        n_steps = _get_int(obj, "n_steps", where, required=True)
        if n_steps < 1:
            raise ConfigurationError("sim.n_steps must be positive")
        dt = horizon / n_steps
    if not (dt > 0.0 and dt <= horizon):
        raise ConfigurationError("sim.dt must lie in (0, horizon]")
    return SimSettings(
        x0=tuple(float(v) for v in x0),
        horizon=horizon,
        dt=dt,
        n_paths=_get_int(obj, "n_paths", where, required=True),
        seed=_get_int(obj, "seed", where, default=0),
        control=control,
        checkpoints=checkpoints,
    )


def _parse_output(obj) -> OutputSettings:
    if obj is None:
        return OutputSettings()
    where = "output"
    obj = _require_mapping(obj, where)
    _reject_unknown(obj, _OUTPUT_KEYS, where)
    out_dir = obj.get("dir")
    if out_dir is not None and not isinstance(out_dir, str):
        raise ConfigurationError("output.dir must be a string path")
    formats = obj.get("formats")
    if formats is None:
        return OutputSettings(dir=out_dir)
    if not isinstance(formats, list) or not formats:
        raise ConfigurationError("output.formats must be a nonempty list")
    bad = sorted(set(formats) - _OUTPUT_FORMATS)
    if bad:
        raise ConfigurationError(
            f"output.formats entries must be in {sorted(_OUTPUT_FORMATS)}, "
            f"got {bad}"
        )
    return OutputSettings(dir=out_dir, formats=tuple(formats))


def parse_config(doc: dict) -> RunConfig:
    doc = _require_mapping(doc, "configuration")
    _reject_unknown(doc, _TOP_KEYS, "configuration")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigurationError(
            f"schema_version must be {SCHEMA_VERSION}, got {version!r}"
        )
    label = doc.get("label", "run")
    if not isinstance(label, str):
        raise ConfigurationError("label must be a string")
    if "model" not in doc or "uncertainty" not in doc:
        raise ConfigurationError("configuration needs 'model' and 'uncertainty'")

    try:
        uncertainty = _parse_uncertainty(doc["uncertainty"], "uncertainty")
    except ConfigurationError:
        raise
    except Exception as exc:
        raise ConfigurationError(f"uncertainty: {exc}") from exc
    model = _parse_model(doc["model"], uncertainty, label)

    grid = _parse_grid(doc["grid"]) if "grid" in doc else None
    solver = _parse_solver(doc.get("solver"))
    sim = _parse_sim(doc.get("sim"), model.m)

    if "assumption_box" in doc:
        box = _require_mapping(doc["assumption_box"], "assumption_box")
        _reject_unknown(box, _BOX_KEYS, "assumption_box")
        bounds, nodes = _parse_bounds_nodes(box, "assumption_box")
        if any(n < 10 for n in nodes):
            raise ConfigurationError("assumption_box needs at least 10 nodes per axis")
        assumption_box = (tuple(tuple(p) for p in bounds), tuple(nodes))
    elif grid is not None:
        assumption_box = (grid.bounds, tuple([12] * grid.m))
    else:
        raise ConfigurationError("configuration needs a grid or an assumption_box")

    payoff = None
    if "payoff" in doc:
        try:
            payoff = as_coefficient(_coeff_entry(doc["payoff"], "payoff"))
        except Exception as exc:
            raise ConfigurationError(f"payoff: {exc}") from exc

    return RunConfig(
        label=label, model=model, grid=grid, solver=solver,
        sim=sim, assumption_box=assumption_box, payoff=payoff,
        output=_parse_output(doc.get("output")),
    )


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read configuration {p}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"invalid JSON in {p}: {exc}") from exc
    return parse_config(doc)


def build_control(spec, model: ModelSpec, solution=None):
    """Materialize the control named by a config ``sim.control`` entry."""
    from .sim import ConstantControl, PiecewiseControl, extreme_controls, worst_case_policy

    if isinstance(spec, str):
        if spec == "worst_case":
            if solution is None:
                raise ConfigurationError(
                    "the worst-case control needs a solved valuation problem"
                )
            return worst_case_policy(solution, model)
        for ctl in extreme_controls(model.uncertainty):
            if ctl.label == spec:
                return ctl
        known = ["worst_case"] + [c.label for c in extreme_controls(model.uncertainty)]
        raise ConfigurationError(
            f"unknown control {spec!r}; expected one of {known} or an object"
        )
    if isinstance(spec, dict):
        if set(spec) == {"constant"}:
            try:
                return ConstantControl(np.asarray(spec["constant"], dtype=float))
            except Exception as exc:
                raise ConfigurationError(f"sim.control.constant: {exc}") from exc
        if set(spec) == {"piecewise"}:
            inner = _require_mapping(spec["piecewise"], "sim.control.piecewise")
            _reject_unknown(inner, {"times", "matrices"}, "sim.control.piecewise")
            try:
                return PiecewiseControl(
                    np.asarray(inner.get("times"), dtype=float),
                    [np.asarray(m, dtype=float) for m in inner.get("matrices")],
                )
            except ConfigurationError:
                raise
            except Exception as exc:
                raise ConfigurationError(f"sim.control.piecewise: {exc}") from exc
    raise ConfigurationError(
        "sim.control must be 'worst_case', an extreme-scenario name, "
        "or an object with key 'constant' or 'piecewise'"
    )
