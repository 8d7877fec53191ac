"""Run configuration: flat ``key = value`` files and the boundary-data catalog.

A config file holds one ``key = value`` pair per line; ``#`` and ``;`` start
comments.  Keys are validated against the command before anything runs, and
unknown keys are errors.  Example::

    operator = power_1d
    operator.p = 3
    p = 3
    grid.n = 201
    boundary = affine(0, 1)
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from .energy import EnergySpec
from .grid import BoundaryFunction, Grid
from .minimize import MEASURES, SolveOptions
from .operators import get_operator

__all__ = [
    "ConfigError",
    "RunConfig",
    "load_config",
    "parse_config",
    "parse_boundary",
    "COMMANDS",
]

COMMANDS = ("solve", "verify", "envelope", "explicit", "probe")


class ConfigError(ValueError):
    pass


def _int(s: str) -> int:
    return int(s)


def _float(s: str) -> float:
    v = float(s)
    if math.isnan(v):
        raise ValueError("nan is not allowed")
    return v


def _bool(s: str) -> bool:
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _int_list(s: str) -> list:
    out = [int(t) for t in re.split(r"[,\s]+", s.strip()) if t]
    if not out:
        raise ValueError("empty list")
    return out


def _box(s: str) -> tuple:
    """``"0, 1"`` or ``"-1, 1; -1, 1"``."""
    parts = [p for p in s.split(";") if p.strip()]
    box = []
    for part in parts:
        a, b = (float(t) for t in part.split(","))
        box.append((a, b))
    return tuple(box)


_SOLVER = {
    "max_iters": _int, "grad_tol": _float, "initial_step": _float, "armijo_c": _float,
    "shrink": _float, "memory": _int, "max_shrinks": _int, "measure": str,
}
_OPERATOR = {"operator": str, "operator.d": _int, "operator.p": _int,
             "operator.delta": _float, "operator.eps": _float}
_ENERGY = {"kind": str, "p": _int}
_GRID = {"grid.d": _int, "grid.n": _int, "grid.box": _box}
_VERIFY = {"tol_hj": _float, "tol_fp": _float}

SCHEMA = {
    "solve": {**_OPERATOR, **_ENERGY, **_GRID, **_VERIFY, "boundary": str,
              **{f"solver.{k}": t for k, t in _SOLVER.items()}},
    "verify": {**_OPERATOR, **_ENERGY, **_VERIFY, "solution": str},
    "envelope": {**_OPERATOR, **_ENERGY, "z_min": _float, "z_max": _float, "N": _int,
                 "z_bar": _float, "laminate_n": _int_list, "grid.n": _int, "boundary": str,
                 **{f"solver.{k}": t for k, t in _SOLVER.items()}},
    "explicit": {"A": _float, "B": _float, "C": _float, "D": _float, "p": _int,
                 "grid.n": _int, "convention": str, "panels": _int, **_VERIFY},
    "probe": {**_OPERATOR, **_ENERGY, "grid.d": _int, "grid.box": _box, "boundary": str,
              "levels": _int_list, "fraction": _float, "q": _float,
              **{f"solver.{k}": t for k, t in _SOLVER.items()}},
}
REQUIRED = {
    "solve": ("operator", "grid.n", "boundary"),
    "verify": (),
    "envelope": ("operator", "z_min", "z_max"),
    "explicit": ("A", "B", "p"),
    "probe": ("operator", "levels", "boundary"),
}


@dataclass
class RunConfig:
    command: str
    values: dict = field(default_factory=dict)
    seed: int = 0
    source: Optional[str] = None

    def get(self, key: str, default: Any = None) -> Any:
        return self.values.get(key, default)

    def __contains__(self, key: str) -> bool:
        return key in self.values

    # --- builders -------------------------------------------------------

    def operator_args(self) -> dict:
        return {k.split(".", 1)[1]: v for k, v in self.values.items() if k.startswith("operator.")}

    def operator(self):
        try:
            return get_operator(self.values["operator"], **self.operator_args())
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"operator: {exc}") from None

    def energy_spec(self) -> EnergySpec:
        op = self.operator()
        p = self.get("p", 2)
        kind = self.get("kind", "power")
        try:
            return EnergySpec(op, p, kind)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def grid(self, n: Optional[int] = None, d: Optional[int] = None) -> Grid:
        d = d or self.get("grid.d") or self.operator().dim
        n = n or self.get("grid.n")
        try:
            return Grid(d, n, self.get("grid.box"))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"grid: {exc}") from None

    def solve_options(self) -> SolveOptions:
        kw = {k.split(".", 1)[1]: v for k, v in self.values.items() if k.startswith("solver.")}
        try:
            return SolveOptions(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"solver: {exc}") from None

    def boundary(self, d: int):
        return parse_boundary(self.values["boundary"], d)

    def to_dict(self) -> dict:
        return {"command": self.command, "seed": self.seed, **self.values}


def parse_config(text: str, command: str, seed: int = 0, source: Optional[str] = None) -> RunConfig:
    """Parse and validate config text for ``command``.

    Raises
    ------
    ConfigError
        On syntax errors, unknown keys, bad values or missing required keys.
    """
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=("#",), delimiters=("=",),
                                   strict=True)
    cp.optionxform = str
    try:
        cp.read_string("[run]\n" + text, source=source or "<config>")
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from None
    if cp.sections() != ["run"]:
        raise ConfigError("sections are not supported; use flat key = value lines")
    schema = SCHEMA[command]
    values = {}
    for key, raw in cp.items("run"):
        if key == "command":
            if raw.strip() != command:
                raise ConfigError(f"config is for command {raw.strip()!r}, not {command!r}")
            continue
        if key == "seed":
            try:
                seed = int(raw)
            except ValueError:
                raise ConfigError(f"seed: not an integer: {raw!r}") from None
            continue
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} for command {command!r}")
        try:
            values[key] = schema[key](raw.strip())
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key}: {exc}") from None
    missing = [k for k in REQUIRED[command] if k not in values]
    if missing:
        raise ConfigError(f"missing required key(s) for {command}: {', '.join(missing)}")
    cfg = RunConfig(command, values, seed, source)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    """Build everything cheap once so that bad values fail before any compute."""
    v = cfg.values
    if "kind" in v and v["kind"] not in ("power", "exponential"):
        raise ConfigError(f"kind must be power or exponential, got {v['kind']!r}")
    if "solver.measure" in v and v["solver.measure"] not in MEASURES:
        raise ConfigError(f"solver.measure must be one of {MEASURES}")
    if "operator" in v:
        spec = cfg.energy_spec()
        if cfg.command in ("solve",):
            grid = cfg.grid()
            cfg.boundary(grid.d)
        if cfg.command == "probe":
            if len(v["levels"]) < 3:
                raise ConfigError("a refinement study needs at least 3 grid levels")
            cfg.boundary(cfg.get("grid.d") or spec.operator.dim)
        if cfg.command == "envelope":
            if spec.operator.dim != 1:
                raise ConfigError("envelopes are computed for one-dimensional operators only")
            if not v["z_min"] < v["z_max"]:
                raise ConfigError("need z_min < z_max")
            if "boundary" in v:
                cfg.boundary(1)
    if any(k.startswith("solver.") for k in v):
        cfg.solve_options()
    if "convention" in v and v["convention"] not in ("consistent", "inverse_p"):
        raise ConfigError("convention must be consistent or inverse_p")


def load_config(path, command: str, seed: Optional[int] = None) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    cfg = parse_config(text, command, seed or 0, str(p))
    if seed is not None:
        cfg.seed = seed
    return cfg


# --- boundary data catalog ---------------------------------------------------

_TERM = re.compile(r"^\s*([a-z_]+)\s*\(([^()]*)\)\s*$")


def _args(s: str) -> list:
    s = s.strip()
    return [float(t) for t in s.split(",")] if s else []


def _norm2(xs):
    return sum(x * x for x in xs)


def _term(name: str, args: list, d: int):
    """Return ``(affine coefficients or None, deviation callable or None)``."""
    if name == "zero":
        return (0.0,) * (d + 1), None
    if name == "affine":
        if len(args) != d + 1:
            raise ConfigError(f"affine needs {d + 1} coefficients in d={d}")
        return tuple(args), None
    if name == "quadratic":
        (c,) = args
        return None, lambda *x: 0.5 * c * _norm2(x)
    if name == "quartic":
        (c,) = args
        return None, lambda *x: 0.25 * c * _norm2(x) ** 2
    if name == "mixed":
        (c,) = args
        if d != 2:
            raise ConfigError("mixed(c) = c x y needs d = 2")
        return None, lambda x, y: c * x * y
    if name == "sine":
        a, k = args
        return None, lambda *x: a * np.sin(k * x[0])
    raise ConfigError(f"unknown boundary term {name!r}")


def _table(path: str, d: int) -> Callable:
    """Boundary values from a CSV table with columns ``x[, y], g`` (header row)."""
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"boundary table {path}: {exc}") from None
    if data.shape[1] != d + 1:
        raise ConfigError(f"boundary table needs {d + 1} columns")
    pts, vals = data[:, :d], data[:, d]

    def lookup(*x):
        q = np.stack([np.ravel(c) for c in x], axis=-1)
        out = np.empty(q.shape[0])
        for i, row in enumerate(q):
            hit = np.flatnonzero(np.all(np.abs(pts - row) <= 1e-9, axis=1))
            if hit.size == 0:
                raise ConfigError(f"boundary table has no entry at {tuple(row)}")
            out[i] = vals[hit[0]]
        return out.reshape(np.shape(x[0]))

    return lookup


def parse_boundary(expr: str, d: int) -> BoundaryFunction:
    """Parse ``term + term + ...`` from the catalog into exact boundary data.

    Terms: ``zero()``, ``affine(a, b[, c])`` (``a + b x [+ c y]``),
    ``quadratic(c)`` (``c |x|^2 / 2``), ``quartic(c)`` (``c |x|^4 / 4``),
    ``mixed(c)`` (``c x y``), ``sine(a, k)`` (``a sin(k x)``) and
    ``table(path)`` (CSV of nodal values).
    """
    expr = expr.strip()
    m = re.match(r"^table\((.+)\)$", expr)
    if m:
        return BoundaryFunction(None, _table(m.group(1).strip(), d), label=expr)
    affine = np.zeros(d + 1)
    devs = []
    for raw in expr.split("+"):
        m = _TERM.match(raw)
        if not m:
            raise ConfigError(f"cannot parse boundary term {raw.strip()!r}")
        try:
            args = _args(m.group(2))
        except ValueError:
            raise ConfigError(f"bad numbers in boundary term {raw.strip()!r}") from None
        try:
            aff, dev = _term(m.group(1), args, d)
        except ValueError:
            raise ConfigError(f"wrong number of arguments in {raw.strip()!r}") from None
        if aff is not None:
            affine = affine + np.asarray(aff)
        if dev is not None:
            devs.append(dev)
    deviation = None
    if devs:
        def deviation(*x):
            return sum(f(*x) for f in devs)
    return BoundaryFunction(tuple(float(a) for a in affine), deviation, label=expr)
