"""Minimization of discrete Hessian energies over clamped grid functions.

The driver is a limited-memory BFGS iteration with Armijo backtracking.  Its
initial inverse-Hessian model is the inverse of the clamped discrete
biharmonic form, which makes iteration counts roughly mesh independent; no
second derivatives of the operator are ever formed.

Stationarity is measured by default on the preconditioned gradient
``B^{-1} dE/du``, the biharmonic Riesz representative of the first variation.
It has the units of ``u`` and a round-off floor near ``eps * |u|``; the raw
nodal derivative grows like ``h^(d-4)`` in round-off and cannot reach small
absolute tolerances on fine one-dimensional grids.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .energy import EnergySpec, energy_and_gradient, energy_gradient
from .grid import Grid, GridFunction, _boundary_parts
from .operators import DomainError

__all__ = [
    "SolveOptions",
    "SolveResult",
    "solve",
    "verify_first_order",
    "laplace_extension",
    "stencil_matrices",
]

logger = logging.getLogger(__name__)


MEASURES = ("preconditioned", "raw")
# relative energy change treated as round-off by the approximate Wolfe test
ROUNDOFF_RTOL = 1e-14


@dataclass(frozen=True)
class SolveOptions:
    max_iters: int = 50000
    grad_tol: float = 1e-8
    initial_step: float = 1.0
    armijo_c: float = 1e-4
    shrink: float = 0.5
    memory: int = 10
    max_shrinks: int = 60
    precondition: bool = True
    measure: str = "preconditioned"
    stall_iters: int = 25

    def __post_init__(self):
        if self.measure not in MEASURES:
            raise ValueError(f"measure must be one of {MEASURES}")
        if min(self.max_iters, self.memory, self.max_shrinks, self.stall_iters) < 1:
            raise ValueError("max_iters, memory, max_shrinks and stall_iters must be positive")
        if not (self.grad_tol > 0 and self.initial_step > 0 and self.armijo_c > 0):
            raise ValueError("grad_tol, initial_step and armijo_c must be positive")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")


@dataclass
class SolveResult:
    u: GridFunction
    energy: float
    grad_sup: float  # in the configured measure
    iterations: int
    converged: bool
    history: list = field(default_factory=list)
    message: str = ""
    n_evals: int = 0
    raw_grad_sup: float = float("nan")


def _second_difference(n: int, h: float) -> sp.csr_matrix:
    return sp.diags([np.ones(n - 2), -2 * np.ones(n - 2), np.ones(n - 2)], [0, 1, 2],
                    shape=(n - 2, n)) / h ** 2


def _select_interior(n: int) -> sp.csr_matrix:
    return sp.diags([np.ones(n - 2)], [1], shape=(n - 2, n))


def _central(n: int, h: float) -> sp.csr_matrix:
    return sp.diags([-np.ones(n - 2), np.ones(n - 2)], [0, 2], shape=(n - 2, n)) / (2 * h)


def stencil_matrices(grid: Grid) -> list:
    """Sparse (weight, matrix) pairs with ``sum w * D.T @ D`` the Frobenius Hessian form."""
    n, h = grid.n, grid.h
    D2 = _second_difference(n, h)
    if grid.d == 1:
        return [(1.0, D2.tocsr())]
    S = _select_interior(n)
    C = _central(n, h)
    return [(1.0, sp.kron(D2, S).tocsr()), (2.0, sp.kron(C, C).tocsr()), (1.0, sp.kron(S, D2).tocsr())]


def _free_index(grid: Grid) -> np.ndarray:
    return np.flatnonzero(grid.free_mask().ravel())


def _clamp_index(grid: Grid) -> np.ndarray:
    return np.flatnonzero(grid.clamp_mask().ravel())


def laplace_extension(grid: Grid, g_values: np.ndarray) -> np.ndarray:
    """Discrete harmonic extension of the clamp-layer data into the free nodes."""
    n, h = grid.n, grid.h
    D2 = _second_difference(n, h)
    if grid.d == 1:
        L = D2
    else:
        S = _select_interior(n)
        L = sp.kron(D2, S) + sp.kron(S, D2)
    L = sp.csr_matrix(L)
    # rows of L are interior nodes; keep those that are free
    interior_flat = np.flatnonzero(_interior_mask(grid).ravel())
    row_of = {k: i for i, k in enumerate(interior_flat)}
    free = _free_index(grid)
    clamp = _clamp_index(grid)
    rows = np.array([row_of[k] for k in free])
    Lr = L[rows]
    A = Lr[:, free].tocsc()
    rhs = -(Lr[:, clamp] @ g_values.ravel()[clamp])
    out = np.array(g_values, dtype=float).ravel()
    out[free] = spla.spsolve(A, rhs) if free.size else out[free]
    return out.reshape(grid.shape)


def _interior_mask(grid: Grid) -> np.ndarray:
    m = np.zeros(grid.shape, dtype=bool)
    m[grid.interior] = True
    return m


def _preconditioner(grid: Grid) -> Callable:
    free = _free_index(grid)
    B = None
    for w, D in stencil_matrices(grid):
        Df = D[:, free]
        term = w * (Df.T @ Df)
        B = term if B is None else B + term
    B = (B * grid.cell_volume).tocsc()
    return spla.factorized(B)


def solve(spec: EnergySpec, g, grid: Grid, opts: Optional[SolveOptions] = None,
          trace: Optional[Callable] = None, initial=None) -> SolveResult:
    """Minimize the discrete energy over grid functions with the clamp data of ``g``.

    ``g`` may be a ``BoundaryFunction``, a callable, a full-grid array or a
    ``GridFunction``; only its values on the clamp layers matter.  ``trace`` is
    called as ``trace(iteration, energy, grad_sup, step)`` after every step.
    ``initial`` (full-grid array or ``GridFunction``) replaces the harmonic
    extension as starting point; only its free values are used.
    """
    opts = opts or SolveOptions()
    if spec.operator.dim != grid.d:
        raise ValueError(f"operator dimension {spec.operator.dim} != grid dimension {grid.d}")
    affine, g_off = _boundary_parts(grid, g)
    base = laplace_extension(grid, np.where(grid.clamp_mask(), g_off, 0.0))
    if initial is not None:
        start = initial.values if isinstance(initial, GridFunction) else np.asarray(initial, dtype=float)
        if start.shape != grid.shape:
            raise ValueError(f"initial guess shape {start.shape} != grid shape {grid.shape}")
        aff = GridFunction.from_parts(grid, affine, np.zeros(grid.shape), np.zeros(grid.shape)).values
        base[grid.free] = (start - aff)[grid.free]
    free = grid.free
    B_inv = _preconditioner(grid) if (opts.precondition or opts.measure == "preconditioned") else None
    apply_H0 = B_inv if opts.precondition else (lambda v: v)

    def measure(gv):
        if not gv.size:
            return 0.0
        if opts.measure == "preconditioned":
            gv = B_inv(gv)
        return float(np.max(np.abs(gv)))
    work = np.array(base)
    n_evals = 0

    def fg(x):
        nonlocal n_evals
        n_evals += 1
        work[free] = x.reshape(grid.free_shape)
        E, full = energy_and_gradient(work, grid, spec)
        return E, full[free].ravel()

    x = base[free].ravel().copy()
    E, gr = fg(x)
    history = [E]
    mem = deque(maxlen=opts.memory)
    gamma = 1.0
    converged = False
    message = "maximum iterations reached"
    it = 0
    flat = 0
    while True:
        gsup = measure(gr)
        if gsup <= opts.grad_tol:
            converged = True
            message = "gradient tolerance reached"
            break
        if it >= opts.max_iters:
            break
        d = -_two_loop(gr, mem, gamma, apply_H0)
        slope = _dot(gr, d)
        if not slope < 0:
            mem.clear()
            gamma = 1.0
            d = -apply_H0(gr)
            slope = _dot(gr, d)
        t = opts.initial_step
        accepted = False
        for _ in range(opts.max_shrinks):
            x_new = x + t * d
            try:
                E_new, g_new = fg(x_new)
            except DomainError:
                t *= opts.shrink
                continue
            # difference first: E + c t slope rounds to E once the decrease is below an ulp
            if np.isfinite(E_new) and E_new - E <= opts.armijo_c * t * slope:
                accepted = True
                break
            if _approx_wolfe(E, E_new, slope, _dot(g_new, d)):
                accepted = True
                break
            t *= opts.shrink
        if not accepted:
            if mem or gamma != 1.0:
                logger.debug("line search failed at iteration %d; restarting", it)
                mem.clear()
                gamma = 1.0
                continue
            message = f"line search failed after {opts.max_shrinks} shrinks from a steepest-descent restart"
            break
        s = x_new - x
        y = g_new - gr
        sy = _dot(s, y)
        if sy > 1e-12 * np.sqrt(_dot(s, s) * _dot(y, y)):
            mem.append((s, y, 1.0 / sy))
            gamma = sy / _dot(y, apply_H0(y))
        flat = flat + 1 if E_new >= E else 0
        x, E, gr = x_new, E_new, g_new
        history.append(E)
        it += 1
        if trace is not None:
            trace(it, E, measure(gr), t)
        if flat >= opts.stall_iters:
            message = f"energy flat to round-off for {flat} steps"
            break

    work[free] = x.reshape(grid.free_shape)
    u = GridFunction.from_parts(grid, affine, work, g_off)
    gsup = measure(gr)
    raw = float(np.max(np.abs(gr))) if gr.size else 0.0
    return SolveResult(u, E, gsup, it, converged, history, message, n_evals, raw)


def _approx_wolfe(E: float, E_new: float, slope: float, slope_new: float,
                  delta: float = 0.1, sigma: float = 0.9) -> bool:
    """Approximate Wolfe test for steps whose energy change is below round-off.

    Near a minimizer the decrease ``t * slope`` drops under the rounding error
    of ``E`` and Armijo rejects every step.  The directional derivative stays
    accurate there, so a step is accepted when the energy did not rise beyond
    round-off and ``sigma * slope <= slope_new <= (2 delta - 1) * slope``.
    """
    if not np.isfinite(E_new) or E_new > E + ROUNDOFF_RTOL * abs(E):
        return False
    return sigma * slope <= slope_new <= (2 * delta - 1) * slope


def _dot(a, b) -> float:
    # pairwise summation, independent of BLAS threading
    return float(np.sum(a * b))


def _two_loop(g, mem, gamma, apply_H0):
    q = np.array(g)
    alphas = []
    for s, y, rho in reversed(mem):
        a = rho * _dot(s, q)
        q -= a * y
        alphas.append(a)
    r = gamma * apply_H0(q)
    for (s, y, rho), a in zip(mem, reversed(alphas)):
        b = rho * _dot(y, r)
        r += s * (a - b)
    return r


def verify_first_order(u: GridFunction, spec: EnergySpec, measure: str = "preconditioned") -> float:
    """Stationarity certificate: sup-norm of the (by default preconditioned) gradient.

    Uses the same measure as ``solve`` so that a converged result satisfies
    ``verify_first_order(u, spec) <= grad_tol``.
    """
    if measure not in MEASURES:
        raise ValueError(f"measure must be one of {MEASURES}")
    g = energy_gradient(u, spec).ravel()
    if not g.size:
        return 0.0
    if measure == "preconditioned":
        g = _preconditioner(u.grid)(g)
    return float(np.max(np.abs(g)))
