"""Uniform grids, clamped grid functions, Hessian stencils and quadrature.

Node layout per axis (n nodes, spacing h):

* clamp layers: the two outermost nodes at each end (indices 0, 1, n-2, n-1);
* free nodes: indices 2 .. n-3, the unknowns of every minimization;
* interior nodes: indices 1 .. n-2, where the Hessian stencil fits.  The
  HessianField and every quadrature live here, so each free value enters
  the energy through all of its stencil neighbours.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Union

import numpy as np

from .operators import packed_size

__all__ = [
    "CLAMP_WIDTH",
    "Grid",
    "GridFunction",
    "BoundaryFunction",
    "HessianField",
    "hessian",
    "hessian_values",
    "hessian_adjoint",
    "integrate",
    "clamp_boundary",
    "save_grid_function",
    "load_grid_function",
    "grid_function_to_dict",
    "grid_function_from_dict",
]

CLAMP_WIDTH = 2


@dataclass(frozen=True)
class Grid:
    d: int
    n: int
    box: tuple = None

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"grid dimension must be 1 or 2, got {self.d}")
        if self.n < 5:
            raise ValueError(f"need n >= 5 nodes per axis, got {self.n}")
        box = self.box
        if box is None:
            box = ((0.0, 1.0),) if self.d == 1 else ((-1.0, 1.0), (-1.0, 1.0))
        box = tuple((float(a), float(b)) for a, b in box)
        if len(box) != self.d:
            raise ValueError(f"box has {len(box)} intervals for d={self.d}")
        sides = [b - a for a, b in box]
        if min(sides) <= 0:
            raise ValueError("box intervals must have positive length")
        if max(sides) - min(sides) > 1e-12 * max(sides):
            raise ValueError("only boxes with equal side lengths are supported (single h)")
        object.__setattr__(self, "box", box)

    @property
    def h(self) -> float:
        a, b = self.box[0]
        return (b - a) / (self.n - 1)

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.d

    @property
    def interior(self) -> tuple:
        return (slice(1, self.n - 1),) * self.d

    @property
    def free(self) -> tuple:
        return (slice(CLAMP_WIDTH, self.n - CLAMP_WIDTH),) * self.d

    @property
    def interior_shape(self) -> tuple:
        return (self.n - 2,) * self.d

    @property
    def free_shape(self) -> tuple:
        return (self.n - 2 * CLAMP_WIDTH,) * self.d

    @property
    def cell_volume(self) -> float:
        return self.h ** self.d

    @property
    def measure(self) -> float:
        """Total quadrature weight, ``(n - 2)^d h^d`` (what ``integrate`` gives for ``f = 1``)."""
        return float((self.n - 2) ** self.d * self.cell_volume)

    def axis(self, i: int = 0) -> np.ndarray:
        a, _ = self.box[i]
        return a + self.h * np.arange(self.n)

    def mesh(self) -> tuple:
        """Coordinate arrays of shape ``grid.shape`` (``ij`` indexing)."""
        if self.d == 1:
            return (self.axis(0),)
        return tuple(np.meshgrid(self.axis(0), self.axis(1), indexing="ij"))

    def interior_mesh(self) -> tuple:
        return tuple(c[self.interior] for c in self.mesh())

    def free_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[self.free] = True
        return mask

    def clamp_mask(self) -> np.ndarray:
        return ~self.free_mask()

    @property
    def free_box(self) -> tuple:
        """Closed box spanned by the free nodes."""
        h = self.h
        return tuple((a + CLAMP_WIDTH * h, b - CLAMP_WIDTH * h) for a, b in self.box)

    def sample(self, f: Callable) -> np.ndarray:
        return np.asarray(f(*self.mesh()), dtype=float) * np.ones(self.shape)

    def refine(self) -> "Grid":
        """Grid with nested nodes, n -> 2n - 1."""
        return Grid(self.d, 2 * self.n - 1, self.box)

    def to_dict(self) -> dict:
        return {"d": self.d, "n": self.n, "box": [list(iv) for iv in self.box]}


class BoundaryFunction:
    """Boundary data ``g = affine + deviation`` with the affine part kept exact.

    Second differences annihilate the affine part analytically, so storing it
    as coefficients keeps discrete Hessians of affine data exactly zero instead
    of at the rounding level of the sampled values.
    """

    def __init__(self, affine=None, deviation: Callable = None, label: str = ""):
        self.affine = None if affine is None else tuple(float(c) for c in affine)
        self.deviation = deviation
        self.label = label

    def affine_values(self, grid: Grid) -> np.ndarray:
        return _affine_values(grid, self.affine)

    def deviation_values(self, grid: Grid) -> np.ndarray:
        if self.deviation is None:
            return np.zeros(grid.shape)
        return grid.sample(self.deviation)

    def __call__(self, *x):
        out = 0.0
        if self.affine is not None:
            out = self.affine[0] + sum(c * xi for c, xi in zip(self.affine[1:], x))
        if self.deviation is not None:
            out = out + self.deviation(*x)
        return out * np.ones(np.shape(x[0]))

    def __repr__(self):
        return f"BoundaryFunction({self.label or self.affine})"


def _affine_values(grid: Grid, affine) -> np.ndarray:
    if affine is None:
        return np.zeros(grid.shape)
    if len(affine) != grid.d + 1:
        raise ValueError(f"affine part needs {grid.d + 1} coefficients for d={grid.d}")
    out = np.full(grid.shape, affine[0])
    for c, x in zip(affine[1:], grid.mesh()):
        out = out + c * x
    return out


BoundaryData = Union[np.ndarray, Callable, float, BoundaryFunction, "GridFunction"]


def _boundary_parts(grid: Grid, g: BoundaryData):
    """Split boundary data into (affine coefficients or None, deviation array)."""
    if isinstance(g, GridFunction):
        return g.affine, np.array(g.g_offset)
    if isinstance(g, BoundaryFunction):
        return g.affine, g.deviation_values(grid)
    if callable(g):
        return None, grid.sample(g)
    g = np.asarray(g, dtype=float)
    if g.ndim == 0:
        return None, np.full(grid.shape, float(g))
    if g.shape != grid.shape:
        raise ValueError(f"boundary data shape {g.shape} != grid shape {grid.shape}")
    return None, g.copy()


class GridFunction:
    """Nodal values on a grid whose clamp layers always equal the data ``g``.

    The function is stored as an exact affine part (coefficients, possibly
    absent) plus an ``offset`` array; ``values`` is their sum.  Stencils act on
    ``offset`` only.  Instances are immutable; the ``with_*`` methods return
    re-clamped copies.
    """

    def __init__(self, grid: Grid, values, g: BoundaryData = None, *, affine=None):
        off = np.array(values, dtype=float)
        if off.shape != grid.shape:
            raise ValueError(f"values shape {off.shape} != grid shape {grid.shape}")
        # values are absolute unless ``affine`` is given, then they are offsets
        if g is None:
            g_aff, g_off = affine, off.copy()
        else:
            g_aff, g_off = _boundary_parts(grid, g)
        if affine is None and g_aff is not None:
            off = off - _affine_values(grid, g_aff)
            affine = g_aff
        elif g_aff != affine:
            g_off = g_off + _affine_values(grid, g_aff) - _affine_values(grid, affine)
        built = GridFunction.from_parts(grid, affine, off, g_off)
        self.__dict__.update(built.__dict__)

    @classmethod
    def from_callable(cls, grid: Grid, f: Callable, g: BoundaryData = None) -> "GridFunction":
        if isinstance(f, BoundaryFunction):
            return cls(grid, f.deviation_values(grid), f if g is None else g, affine=f.affine)
        vals = grid.sample(f)
        return cls(grid, vals, vals if g is None else g)

    @property
    def values(self) -> np.ndarray:
        if self.affine is None:
            return self.offset
        return _affine_values(self.grid, self.affine) + self.offset

    @property
    def g(self) -> np.ndarray:
        return _affine_values(self.grid, self.affine) + self.g_offset

    @classmethod
    def from_parts(cls, grid: Grid, affine, offset, g_offset) -> "GridFunction":
        """Build from an exact affine part plus offset arrays (clamp taken from ``g_offset``)."""
        obj = object.__new__(cls)
        obj.grid = grid
        off = np.array(offset, dtype=float)
        g_off = np.array(g_offset, dtype=float)
        clamp = grid.clamp_mask()
        off[clamp] = g_off[clamp]
        g_off[~clamp] = np.nan
        if not np.all(np.isfinite(off)):
            raise ValueError("grid function values must be finite")
        off.setflags(write=False)
        g_off.setflags(write=False)
        obj.affine = None if affine is None else tuple(float(c) for c in affine)
        obj.offset = off
        obj.g_offset = g_off
        return obj

    def _new(self, offset) -> "GridFunction":
        return GridFunction.from_parts(self.grid, self.affine, offset, self.g_offset)

    def _g_full_offset(self) -> np.ndarray:
        out = np.array(self.g_offset)
        free = self.grid.free_mask()
        out[free] = self.offset[free]
        return out

    def with_values(self, values) -> "GridFunction":
        return self._new(np.asarray(values, dtype=float) - _affine_values(self.grid, self.affine))

    def with_free(self, free_values) -> "GridFunction":
        """Replace the free nodal values (given in absolute terms)."""
        aff = _affine_values(self.grid, self.affine)[self.grid.free]
        return self.with_free_offset(np.reshape(free_values, self.grid.free_shape) - aff)

    def with_free_offset(self, free_offset) -> "GridFunction":
        off = np.array(self.offset)
        off[self.grid.free] = np.reshape(free_offset, self.grid.free_shape)
        return self._new(off)

    def g_full(self) -> np.ndarray:
        """Boundary data as a full array (free entries filled by the current values)."""
        return _affine_values(self.grid, self.affine) + self._g_full_offset()

    @property
    def free_values(self) -> np.ndarray:
        return np.array(self.values[self.grid.free])

    def __repr__(self):
        return f"GridFunction(d={self.grid.d}, n={self.grid.n}, affine={self.affine})"


@dataclass(frozen=True)
class HessianField:
    """Packed symmetric Hessians on interior nodes: shape ``interior_shape + (k,)``."""

    grid: Grid
    data: np.ndarray

    def matrix(self, index) -> np.ndarray:
        from .operators import SymMatrix

        return SymMatrix(self.grid.d, tuple(self.data[index])).full()

    @property
    def xx(self) -> np.ndarray:
        return self.data[..., 0]


def hessian_values(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Centered second differences of a raw value array at interior nodes."""
    u = values
    h2 = grid.h ** 2
    if grid.d == 1:
        return ((u[2:] - 2.0 * u[1:-1] + u[:-2]) / h2)[:, None]
    uxx = (u[2:, 1:-1] - 2.0 * u[1:-1, 1:-1] + u[:-2, 1:-1]) / h2
    uyy = (u[1:-1, 2:] - 2.0 * u[1:-1, 1:-1] + u[1:-1, :-2]) / h2
    uxy = (u[2:, 2:] - u[2:, :-2] - u[:-2, 2:] + u[:-2, :-2]) / (4.0 * h2)
    return np.stack([uxx, uxy, uyy], axis=-1)


def hessian(u: GridFunction) -> HessianField:
    return HessianField(u.grid, hessian_values(u.offset, u.grid))


def hessian_adjoint(W: np.ndarray, grid: Grid) -> np.ndarray:
    """Transpose of ``hessian_values`` applied to packed weights ``W``.

    Returns a full-grid array ``r`` with ``sum(W * dH) == sum(r * du)`` for
    every perturbation ``du``, the mixed entry counting twice (``W_12 dm12 + W_21 dm21``).
    """
    h2 = grid.h ** 2
    out = np.zeros(grid.shape)
    if grid.d == 1:
        w = W[..., 0] / h2
        out[2:] += w
        out[1:-1] -= 2.0 * w
        out[:-2] += w
        return out
    wxx = W[..., 0] / h2
    wxy = 2.0 * W[..., 1] / (4.0 * h2)
    wyy = W[..., 2] / h2
    out[2:, 1:-1] += wxx
    out[1:-1, 1:-1] -= 2.0 * wxx
    out[:-2, 1:-1] += wxx
    out[1:-1, 2:] += wyy
    out[1:-1, 1:-1] -= 2.0 * wyy
    out[1:-1, :-2] += wyy
    out[2:, 2:] += wxy
    out[2:, :-2] -= wxy
    out[:-2, 2:] -= wxy
    out[:-2, :-2] += wxy
    return out


def integrate(f, grid: Grid) -> float:
    """Node sum times h^d over interior nodes."""
    f = np.asarray(f, dtype=float)
    if f.shape != grid.interior_shape:
        f = np.broadcast_to(f, grid.interior_shape)
    return float(np.sum(f) * grid.cell_volume)


def clamp_boundary(u: GridFunction, g: BoundaryData) -> GridFunction:
    """Overwrite the clamp layers of ``u`` with ``g``; the free nodes are untouched."""
    aff, g_off = _boundary_parts(u.grid, g)
    return GridFunction.from_parts(u.grid, aff, u.values - _affine_values(u.grid, aff), g_off)


# --- persistence -----------------------------------------------------------


def grid_function_to_dict(u: GridFunction) -> dict:
    clamp = u.grid.clamp_mask()
    rec = u.grid.to_dict()
    rec["values"] = [float(v) for v in u.values.ravel()]
    rec["g"] = [float(v) for v in u.g[clamp]]
    if u.affine is not None:
        # exact affine part plus offsets, so stencils reload bit-identically
        rec["affine"] = list(u.affine)
        rec["offset"] = [float(v) for v in u.offset.ravel()]
    return rec


def grid_function_from_dict(rec: dict) -> GridFunction:
    grid = Grid(int(rec["d"]), int(rec["n"]), tuple(tuple(iv) for iv in rec["box"]))
    size = int(np.prod(grid.shape))
    values = np.array(rec["values"], dtype=float)
    if values.size != size:
        raise ValueError("values array does not match the grid size")
    clamp = grid.clamp_mask()
    g_vals = np.array(rec["g"], dtype=float)
    if g_vals.size != int(clamp.sum()):
        raise ValueError("g array does not match the number of clamped nodes")
    if rec.get("affine") is not None:
        offset = np.array(rec["offset"], dtype=float).reshape(grid.shape)
        return GridFunction.from_parts(grid, tuple(rec["affine"]), offset, offset)
    values = values.reshape(grid.shape)
    g = np.array(values)
    g[clamp] = g_vals
    return GridFunction(grid, values, g)


def save_grid_function(u: GridFunction, path) -> None:
    # float repr is the shortest decimal that round-trips bit-exactly
    Path(path).write_text(json.dumps(grid_function_to_dict(u)) + "\n")


def load_grid_function(path) -> GridFunction:
    return grid_function_from_dict(json.loads(Path(path).read_text()))
