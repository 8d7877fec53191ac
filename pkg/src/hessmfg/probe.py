"""Interior norms, gradient Hoelder seminorms and grid-refinement studies."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .energy import EnergySpec
from .grid import Grid, GridFunction, HessianField, hessian, integrate
from .mfg import assemble_density
from .minimize import SolveOptions, solve
from .operators import frobenius

__all__ = [
    "improved_exponent",
    "holder_exponent",
    "subbox_weights",
    "lp_norm",
    "holder_seminorm_gradient",
    "RefinementStudy",
    "StudyPipeline",
    "StudyReport",
    "refinement_study",
    "ZERO_NORM",
    "StudyError",
]

ZERO_NORM = 1e-10


class StudyError(RuntimeError):
    pass


def improved_exponent(d: int, p: int) -> float:
    """Interior integrability exponent ``d (p-1) / (d-1)``; infinite for ``d = 1``."""
    return math.inf if d == 1 else d * (p - 1) / (d - 1)


def holder_exponent(d: int, p: int) -> float:
    """Hoelder exponent ``1 - (d-1)/(p-1)`` of the gradient."""
    return 1.0 - (d - 1) / (p - 1)


def _coords_for(shape: tuple, grid: Grid) -> tuple:
    if shape == grid.shape:
        return grid.mesh()
    if shape == grid.interior_shape:
        return grid.interior_mesh()
    raise ValueError(f"field shape {shape} matches neither the grid {grid.shape} "
                     f"nor its interior {grid.interior_shape}")


def _subbox(grid: Grid, fraction: float) -> tuple:
    if not 0 < fraction <= 1:
        raise ValueError("subregion fraction must lie in (0, 1]")
    box = []
    for (a, b), (fa, fb) in zip(grid.box, grid.free_box):
        c, half = 0.5 * (a + b), 0.5 * fraction * (b - a)
        lo, hi = c - half, c + half
        if lo < fa - 1e-12 or hi > fb + 1e-12:
            raise ValueError(f"sub-box [{lo}, {hi}] leaves the free region [{fa}, {fb}]")
        box.append((lo, hi))
    return tuple(box)


def subbox_weights(shape: tuple, grid: Grid, fraction: float = 0.5) -> np.ndarray:
    """Trapezoid weights of the concentric sub-box (zero outside it).

    Nodes on a face of the sub-box get half weight, so constants integrate
    exactly when the faces fall on nodes.
    """
    coords = _coords_for(shape, grid)
    box = _subbox(grid, fraction)
    tol = 1e-9 * grid.h
    w = np.full(shape, grid.cell_volume)
    for x, (lo, hi) in zip(coords, box):
        inside = (x >= lo - tol) & (x <= hi + tol)
        face = inside & ((np.abs(x - lo) <= tol) | (np.abs(x - hi) <= tol))
        w = np.where(inside, w, 0.0)
        w = np.where(face, 0.5 * w, w)
    if not np.any(w > 0):
        raise ValueError("the sub-box contains no nodes")
    return w


def _magnitude(f, grid: Optional[Grid]):
    if isinstance(f, HessianField):
        return frobenius(f.data), f.grid
    if isinstance(f, GridFunction):
        return np.abs(f.values), f.grid
    if grid is None:
        raise ValueError("a grid is required for raw arrays")
    return np.abs(np.asarray(f, dtype=float)), grid


def lp_norm(f, q: float, subregion_fraction: float = 0.5, grid: Optional[Grid] = None) -> float:
    """``(sum |f|^q w)^(1/q)`` over the concentric sub-box.

    ``f`` is a ``HessianField`` (Frobenius norm per node), a ``GridFunction``,
    or an array on the full grid or on its interior nodes.  ``q = inf`` gives
    the maximum over the sub-box.
    """
    if not q >= 1:
        raise ValueError("need q >= 1")
    mag, grid = _magnitude(f, grid)
    w = subbox_weights(mag.shape, grid, subregion_fraction)
    if math.isinf(q):
        return float(np.max(np.where(w > 0, mag, 0.0)))
    return float(np.sum(w * mag ** q) ** (1.0 / q))


def _centered_gradient(u: GridFunction) -> np.ndarray:
    """Centered differences at interior nodes, last axis = component."""
    v, h = u.values, u.grid.h
    if u.grid.d == 1:
        return ((v[2:] - v[:-2]) / (2 * h))[:, None]
    gx = (v[2:, 1:-1] - v[:-2, 1:-1]) / (2 * h)
    gy = (v[1:-1, 2:] - v[1:-1, :-2]) / (2 * h)
    return np.stack([gx, gy], axis=-1)


def holder_seminorm_gradient(u: GridFunction, alpha: float, subregion_fraction: float = 0.5,
                             seed: int = 0, width: int = 5, n_random: int = 1000) -> float:
    """Largest ``|D_h u(x) - D_h u(y)| / |x - y|^alpha`` over sampled node pairs.

    Pairs are all pairs of sub-box nodes at most ``width`` steps apart along
    every axis, plus ``n_random`` seeded long-range pairs.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    grid = u.grid
    G = _centered_gradient(u)
    w = subbox_weights(grid.interior_shape, grid, subregion_fraction)
    idx = np.argwhere(w > 0)
    coords = np.stack([c[w > 0] for c in grid.interior_mesh()], axis=-1)
    grads = G[w > 0]
    if len(idx) < 2:
        return 0.0
    # local pairs via index offsets
    pos = {tuple(i): k for k, i in enumerate(idx)}
    offsets = [o for o in np.ndindex(*(2 * width + 1,) * grid.d)]
    a_list, b_list = [], []
    for o in offsets:
        off = np.array(o) - width
        if not _first_positive(off):
            continue
        for k, i in enumerate(idx):
            j = pos.get(tuple(i + off))
            if j is not None:
                a_list.append(k)
                b_list.append(j)
    rng = np.random.default_rng(seed)
    ra = rng.integers(0, len(idx), size=n_random)
    rb = rng.integers(0, len(idx), size=n_random)
    keep = ra != rb
    a = np.concatenate([np.asarray(a_list, dtype=int), ra[keep]])
    b = np.concatenate([np.asarray(b_list, dtype=int), rb[keep]])
    dist = np.linalg.norm(coords[a] - coords[b], axis=-1)
    diff = np.linalg.norm(grads[a] - grads[b], axis=-1)
    return float(np.max(diff / dist ** alpha))


def _first_positive(off: np.ndarray) -> bool:
    """True when the first nonzero entry of ``off`` is positive (one of each +/- pair)."""
    nz = off[off != 0]
    return bool(nz.size and nz[0] > 0)


@dataclass
class RefinementStudy:
    """Values of one quantity on a sequence of grids with decreasing ``h``."""

    quantity: str
    h: list
    values: list

    def __post_init__(self):
        if len(self.h) != len(self.values):
            raise ValueError("h and values must have equal length")
        if any(b >= a for a, b in zip(self.h, self.h[1:])):
            raise ValueError("h must be strictly decreasing")

    @property
    def ratios(self) -> list:
        """``value[k+1] / value[k]``; two (numerically) zero values count as ratio 1."""
        out = []
        for a, b in zip(self.values, self.values[1:]):
            if abs(a) <= ZERO_NORM and abs(b) <= ZERO_NORM:
                out.append(1.0)
            elif a == 0:
                out.append(math.inf)
            else:
                out.append(b / a)
        return out

    @property
    def slope(self) -> float:
        """Least-squares slope of ``log value`` against ``log h`` (nan if any value is zero)."""
        v = np.asarray(self.values, dtype=float)
        if np.any(np.abs(v) <= 0) or len(v) < 2:
            return float("nan")
        return float(np.polyfit(np.log(self.h), np.log(np.abs(v)), 1)[0])

    def stable(self, lo: float = 0.8, hi: float = 1.25) -> bool:
        return all(lo <= r <= hi for r in self.ratios)

    def to_dict(self) -> dict:
        return {"quantity": self.quantity, "h": list(self.h), "values": list(self.values),
                "ratios": self.ratios, "slope": self.slope}


@dataclass(frozen=True)
class StudyPipeline:
    """Solve, assemble and measure: what a refinement study runs at each level."""

    spec: EnergySpec
    g: object
    options: SolveOptions = field(default_factory=SolveOptions)
    fraction: float = 0.5
    q: Optional[float] = None  # Hessian exponent; default from the dimension


@dataclass
class StudyReport:
    studies: dict
    q: float
    q_density: float
    levels: list

    def __getitem__(self, name: str) -> RefinementStudy:
        return self.studies[name]

    def rows(self) -> list:
        out = []
        for name, st in self.studies.items():
            ratios = [float("nan")] + st.ratios
            for h, v, r in zip(st.h, st.values, ratios):
                out.append((h, name, v, r))
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["h", "quantity", "value", "ratio"])
            for h, name, v, r in self.rows():
                w.writerow(["%.17g" % h, name, "%.17g" % v, "%.17g" % r])

    def to_dict(self) -> dict:
        return {"q": self.q, "q_density": self.q_density, "levels": self.levels,
                "studies": {k: _clean(v.to_dict()) for k, v in self.studies.items()}}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _clean(x):
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_clean(v) for v in x]
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


def _exponents(d: int, p: int, q: Optional[float]) -> tuple:
    q_hess = q if q is not None else (p - 1 if d == 1 else improved_exponent(d, p))
    q_m = 2.0 if d == 1 else d / (d - 1)
    return float(max(q_hess, 1.0)), float(q_m)


def refinement_study(pipeline: StudyPipeline, grids: Sequence[Grid]) -> StudyReport:
    """Run ``pipeline`` on each grid and collect norm studies.

    Quantities: ``hessian_lq`` (``||D^2u||_{L^q}`` on the sub-box, with
    ``q = d(p-1)/(d-1)`` for ``d >= 2`` and ``p-1`` for ``d = 1``),
    ``m_lq`` (``||m||_{L^{d/(d-1)}}``; ``L^2`` for ``d = 1``), ``u_inf``,
    ``m_L1``, and ``bound_proxy = C (||u||_inf + ||m||_{L^1}^(1/(p-1)))`` with
    ``C`` fitted to ``hessian_lq`` on the coarsest grid.
    """
    grids = list(grids)
    if len(grids) < 3:
        raise ValueError("a refinement study needs at least 3 grids")
    hs = [g.h for g in grids]
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise ValueError("grids must be ordered from coarse to fine")
    spec = pipeline.spec
    d = grids[0].d
    q, q_m = _exponents(d, spec.p, pipeline.q)
    vals = {k: [] for k in ("hessian_lq", "m_lq", "u_inf", "m_L1")}
    levels = []
    for grid in grids:
        res = solve(spec, pipeline.g, grid, pipeline.options)
        if not res.converged:
            raise StudyError(f"solve did not converge on n={grid.n}: {res.message} "
                             f"(grad_sup={res.grad_sup:.3e})")
        pair = assemble_density(res.u, spec)
        vals["hessian_lq"].append(lp_norm(hessian(res.u), q, pipeline.fraction))
        vals["m_lq"].append(lp_norm(pair.m, q_m, pipeline.fraction, grid))
        vals["u_inf"].append(float(np.max(np.abs(res.u.values))))
        vals["m_L1"].append(integrate(np.abs(pair.m), grid))
        levels.append({"n": grid.n, "h": grid.h, "iterations": res.iterations,
                       "energy": res.energy, "grad_sup": res.grad_sup})
    rhs = [u + mL1 ** (1.0 / max(spec.p - 1, 1)) for u, mL1 in zip(vals["u_inf"], vals["m_L1"])]
    C = vals["hessian_lq"][0] / rhs[0] if rhs[0] > 0 else 0.0
    vals["bound_proxy"] = [C * r for r in rhs]
    studies = {k: RefinementStudy(k, hs, v) for k, v in vals.items()}
    return StudyReport(studies, q, q_m, levels)
