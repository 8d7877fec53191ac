"""Convex envelopes of scalar operators and laminate minimizing sequences.

For a one-dimensional operator ``F`` the envelope ``Gamma_F`` is the largest
convex function below ``F``.  It is computed on a sample as the lower convex
hull of the graph and checked against an independent discrete biconjugate.
The relaxed energy replaces ``F`` by ``Gamma_F``; where the two differ, a
laminate that alternates the two bracketing contact slopes is a minimizing
sequence for the relaxed problem.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .energy import EnergySpec
from .grid import Grid, GridFunction
from .operators import CheckReport, DomainError, OperatorSpec

__all__ = [
    "EnvelopeTable",
    "convex_envelope_1d",
    "discrete_biconjugate",
    "envelope_coercivity_check",
    "relaxed_operator",
    "relaxed_energy_spec",
    "noncontact_windows",
    "LaminateSequence",
    "build_minimizing_sequence",
    "scalar_operator",
    "ConvexRegionError",
    "DEFAULT_RANGE",
    "DEFAULT_N",
]

DEFAULT_RANGE = (-8.0, 8.0)
DEFAULT_N = 4097
CONTACT_TOL = 1e-12
HULL_RTOL = 1e-13


class ConvexRegionError(ValueError):
    """Raised when a laminate is requested where the envelope touches ``F``."""


def scalar_operator(f: Callable, df: Callable, name: str = "scalar", lam: float = 1.0,
                    Lam: float = 1.0, convex: bool = False, A3: bool = False) -> OperatorSpec:
    """Wrap scalar ``f(z)``, ``f'(z)`` as a one-dimensional operator."""
    return OperatorSpec(
        name=name, dim=1,
        value_fn=lambda H: np.asarray(f(H[..., 0]), dtype=float),
        grad_fn=lambda H: np.asarray(df(H[..., 0]), dtype=float)[..., None],
        lam=lam, Lam=Lam, is_convex=convex, satisfies_A3=A3, is_smooth=True,
        region=("interval", -10.0, 10.0),
    )


@dataclass(frozen=True)
class EnvelopeTable:
    """Sampled envelope: abscissae ``z``, samples ``F``, envelope ``gamma``.

    ``vertices`` indexes the hull vertices (always contact points); ``slopes``
    holds the slope of each hull edge.
    """

    z: np.ndarray
    F: np.ndarray
    gamma: np.ndarray
    contact: np.ndarray
    vertices: np.ndarray
    slopes: np.ndarray
    name: str = ""

    @property
    def z_min(self) -> float:
        return float(self.z[0])

    @property
    def z_max(self) -> float:
        return float(self.z[-1])

    @property
    def N(self) -> int:
        return int(self.z.size)

    def out_of_range(self, z) -> int:
        z = np.asarray(z, dtype=float)
        return int(np.count_nonzero((z < self.z_min) | (z > self.z_max)))

    def _segment(self, z: np.ndarray) -> np.ndarray:
        vz = self.z[self.vertices]
        seg = np.searchsorted(vz, z, side="right") - 1
        return np.clip(seg, 0, len(self.slopes) - 1)

    def __call__(self, z) -> np.ndarray:
        """Piecewise-linear evaluation; linear extension outside the sampled range."""
        z = np.asarray(z, dtype=float)
        seg = self._segment(z)
        v = self.vertices[seg]
        return self.gamma[v] + self.slopes[seg] * (z - self.z[v])

    def derivative(self, z) -> np.ndarray:
        """Slope of the active edge; the midpoint of adjacent slopes at vertices."""
        z = np.asarray(z, dtype=float)
        shape = z.shape
        z = z.reshape(-1)
        seg = self._segment(z)
        out = self.slopes[seg].copy()
        vz = self.z[self.vertices]
        hit = np.searchsorted(vz, z)
        hit = np.clip(hit, 0, len(vz) - 1)
        at_vertex = (vz[hit] == z) & (hit > 0) & (hit < len(vz) - 1)
        if np.any(at_vertex):
            k = hit[at_vertex]
            out[at_vertex] = 0.5 * (self.slopes[k - 1] + self.slopes[k])
        return out.reshape(shape)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["z", "F", "Gamma", "contact"])
            for row in zip(self.z, self.F, self.gamma, self.contact):
                w.writerow(["%.17g" % row[0], "%.17g" % row[1], "%.17g" % row[2], int(row[3])])


def _lower_hull(z: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Indices of the lower convex hull of sorted points (monotone chain)."""
    hull: list = []
    for k in range(z.size):
        while len(hull) >= 2:
            i, j = hull[-2], hull[-1]
            # drop j unless it lies below the chord from i to k by more than
            # the round-off in the cross product (collinear points are not vertices)
            a1 = (z[j] - z[i]) * (f[k] - f[i])
            a2 = (f[j] - f[i]) * (z[k] - z[i])
            if a1 - a2 <= HULL_RTOL * (abs(a1) + abs(a2)):
                hull.pop()
            else:
                break
        hull.append(k)
    return np.asarray(hull, dtype=int)


def _table_from_samples(z: np.ndarray, F: np.ndarray, name: str = "") -> EnvelopeTable:
    vertices = _lower_hull(z, F)
    vz, vf = z[vertices], F[vertices]
    slopes = np.diff(vf) / np.diff(vz)
    seg = np.clip(np.searchsorted(vz, z, side="right") - 1, 0, len(slopes) - 1)
    gamma = vf[seg] + slopes[seg] * (z - vz[seg])
    gamma[vertices] = vf
    gamma = np.minimum(gamma, F)
    scale = np.maximum(1.0, np.abs(F))
    contact = F - gamma <= CONTACT_TOL * scale
    for a in (z, F, gamma, contact, vertices, slopes):
        a.setflags(write=False)
    return EnvelopeTable(z, F, gamma, contact, vertices, slopes, name)


def convex_envelope_1d(op: OperatorSpec, z_min: float = DEFAULT_RANGE[0],
                       z_max: float = DEFAULT_RANGE[1], N: int = DEFAULT_N) -> EnvelopeTable:
    """Lower convex hull of ``{(z_k, F(z_k))}`` on ``N`` equispaced samples."""
    if op.dim != 1:
        raise ValueError("convex envelopes are computed for one-dimensional operators only")
    if N < 8:
        raise ValueError(f"need N >= 8 samples, got {N}")
    if not z_min < z_max:
        raise ValueError("need z_min < z_max")
    z = np.linspace(z_min, z_max, N)
    F = np.asarray(op.value(z[:, None]), dtype=float)
    if not np.all(np.isfinite(F)):
        raise DomainError(f"operator {op.name} is not finite on [{z_min}, {z_max}]")
    return _table_from_samples(z, F.copy(), op.name)


def discrete_biconjugate(z: np.ndarray, F: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Double discrete Legendre transform ``F**`` evaluated at the samples.

    At each ``z_j`` the concave function ``s -> min_k F_k - s (z_k - z_j)`` is
    maximized over slopes ``s`` by bisection on the sign of its supergradient.
    No hull is constructed.
    """
    z = np.asarray(z, dtype=float)
    F = np.asarray(F, dtype=float)
    dz = np.diff(z)
    slopes = np.diff(F) / dz
    s_lo0 = float(np.min(slopes)) - 1.0
    s_hi0 = float(np.max(slopes)) + 1.0
    out = np.empty_like(F)
    for start in range(0, z.size, chunk):
        zj = z[start:start + chunk]
        rel = z[None, :] - zj[:, None]
        lo = np.full(zj.size, s_lo0)
        hi = np.full(zj.size, s_hi0)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            k = np.argmin(F[None, :] - mid[:, None] * rel, axis=1)
            # supergradient -(z_k - z_j): move the slope toward the maximizer
            up = z[k] < zj
            lo = np.where(up, mid, lo)
            hi = np.where(up, hi, mid)
            if np.all(hi - lo <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(hi))):
                break
        # phi is Lipschitz with constant max|z_k - z_j|, so the bracket width
        # bounds the remaining error far below the sample precision
        phi = [np.min(F[None, :] - s[:, None] * rel, axis=1) for s in (lo, hi)]
        out[start:start + chunk] = np.maximum(phi[0], phi[1])
    return out


def envelope_coercivity_check(table: EnvelopeTable, lam: float = 1.0, tol: float = 1e-12) -> CheckReport:
    """Verify ``lam |z_k| <= Gamma_k + tol`` at every sample."""
    viol = lam * np.abs(table.z) - table.gamma
    worst = float(max(0.0, np.max(viol)))
    where = float(table.z[int(np.argmax(viol))])
    return CheckReport("envelope coercivity", table.N, worst, tol, bool(worst <= tol),
                       f_zero=float(table(0.0)), note=f"largest violation at z = {where:.6g}")


def relaxed_operator(table: EnvelopeTable, lam: Optional[float] = None,
                     satisfies_A3: bool = True) -> OperatorSpec:
    """The envelope as a convex operator usable by the energy and minimizer."""

    def value(H):
        return table(H[..., 0])

    def grad(H):
        return table.derivative(H[..., 0])[..., None]

    Lam = float(np.max(np.abs(table.slopes)))
    lam = float(lam) if lam is not None else min(1.0, Lam)
    return OperatorSpec(
        name=f"envelope[{table.name}]", dim=1, value_fn=value, grad_fn=grad,
        lam=min(lam, Lam), Lam=Lam, is_convex=True, satisfies_A3=satisfies_A3, is_smooth=False,
        region=("interval", table.z_min, table.z_max),
        params={"z_min": table.z_min, "z_max": table.z_max, "N": table.N, "table": table},
    )


def relaxed_energy_spec(op: OperatorSpec, p: int = 2, z_range: tuple = DEFAULT_RANGE,
                        N: int = DEFAULT_N, kind: str = "power") -> EnergySpec:
    """Energy with integrand ``Gamma_F^p`` built from a sampled envelope of ``op``."""
    table = convex_envelope_1d(op, z_range[0], z_range[1], N)
    return EnergySpec(relaxed_operator(table, op.lam, op.satisfies_A3), p, kind)


def noncontact_windows(table: EnvelopeTable) -> list:
    """Maximal intervals ``(z1, z2)`` between consecutive contact samples with a gap."""
    idx = np.flatnonzero(table.contact)
    out = []
    for a, b in zip(idx[:-1], idx[1:]):
        if b - a > 1:
            out.append((float(table.z[a]), float(table.z[b])))
    return out


@dataclass
class LaminateSequence:
    """Laminate ``u_n`` on ``(0, 1)`` approximating ``q(x) = z_bar x^2 / 2``."""

    z1: float
    z2: float
    z_bar: float
    theta: float
    n: int
    p: int
    energy: float
    relaxed_energy: float
    gap: float
    sup_error: float = float("nan")
    breaks: np.ndarray = field(default=None, repr=False)
    curv: np.ndarray = field(default=None, repr=False)
    _u: np.ndarray = field(default=None, repr=False)
    _du: np.ndarray = field(default=None, repr=False)
    _corr: tuple = (0.0, 0.0)

    def second_derivative(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        seg = np.clip(np.searchsorted(self.breaks, x, side="right") - 1, 0, self.curv.size - 1)
        return self.curv[seg]

    def values(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        seg = np.clip(np.searchsorted(self.breaks, x, side="right") - 1, 0, self.curv.size - 1)
        t = x - self.breaks[seg]
        raw = self._u[seg] + self._du[seg] * t + 0.5 * self.curv[seg] * t * t
        return raw + self._corr[0] + self._corr[1] * x

    def reference(self, x) -> np.ndarray:
        return 0.5 * self.z_bar * np.asarray(x, dtype=float) ** 2

    def to_grid_function(self, grid: Grid) -> GridFunction:
        return GridFunction(grid, self.values(grid.axis(0)))

    def to_csv(self, path, samples: int = 2001) -> None:
        x = np.linspace(0.0, 1.0, samples)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "u_n", "q", "u_n_xx"])
            for row in zip(x, self.values(x), self.reference(x), self.second_derivative(x)):
                w.writerow(["%.17g" % v for v in row])

    def summary(self) -> dict:
        return {k: getattr(self, k) for k in
                ("z1", "z2", "z_bar", "theta", "n", "p", "energy", "relaxed_energy", "gap", "sup_error")}


def _integrand(v, p: int, kind: str):
    return np.asarray(v, dtype=float) ** p if kind == "power" else np.exp(v)


def build_minimizing_sequence(op: OperatorSpec, p: int, z_bar: float, n: int,
                              table: Optional[EnvelopeTable] = None,
                              kind: str = "power") -> LaminateSequence:
    """Laminate with ``u_n''`` alternating the contact slopes around ``z_bar``.

    Each of the ``n`` cells of ``(0, 1)`` carries ``u_n'' = z1`` on its first
    fraction ``theta`` and ``z2`` on the rest, with
    ``theta = (z2 - z_bar) / (z2 - z1)``.  An affine correction matches the
    values of ``q`` at both ends.  ``energy`` is the exact integral of
    ``F(u_n'')^p`` and ``relaxed_energy`` is ``Gamma_F(z_bar)^p``.
    """
    if n < 2:
        raise ValueError("need n >= 2 cells")
    if table is None:
        table = convex_envelope_1d(op)
    if not table.z_min < z_bar < table.z_max:
        raise ValueError(f"z_bar = {z_bar} outside the sampled range [{table.z_min}, {table.z_max}]")
    window = None
    for z1, z2 in noncontact_windows(table):
        if z1 < z_bar < z2:
            window = (z1, z2)
    gam = float(table(z_bar))
    F_bar = float(op.value(np.array([[z_bar]]))[0])
    if window is None or F_bar - gam <= CONTACT_TOL * max(1.0, abs(F_bar)):
        raise ConvexRegionError(f"already convex here: the envelope touches F at z_bar = {z_bar}")
    z1, z2 = window
    theta = (z2 - z_bar) / (z2 - z1)
    F1, F2 = (float(v) for v in op.value(np.array([[z1], [z2]])))
    energy = theta * float(_integrand(F1, p, kind)) + (1 - theta) * float(_integrand(F2, p, kind))
    relaxed = float(_integrand(gam, p, kind))

    cell = 1.0 / n
    breaks = np.empty(2 * n + 1)
    breaks[0::2] = np.arange(n + 1) * cell
    breaks[1::2] = (np.arange(n) + theta) * cell
    breaks[-1] = 1.0
    curv = np.tile([z1, z2], n)
    lengths = np.diff(breaks)
    du = np.concatenate([[0.0], np.cumsum(curv * lengths)])
    u = np.concatenate([[0.0], np.cumsum(du[:-1] * lengths + 0.5 * curv * lengths ** 2)])
    seq = LaminateSequence(z1, z2, z_bar, theta, n, p, energy, relaxed, abs(energy - relaxed),
                           breaks=breaks, curv=curv, _u=u[:-1], _du=du[:-1])
    # match q(0) = 0 and q(1) = z_bar / 2 with an affine correction
    end = float(seq.values(1.0))
    seq._corr = (0.0, 0.5 * z_bar - end)
    x = np.linspace(0.0, 1.0, 64 * n + 1)
    x = np.union1d(x, breaks)
    seq.sup_error = float(np.max(np.abs(seq.values(x) - seq.reference(x))))
    return seq
