"""Mean-field-game pairs assembled from Hessian-energy minimizers.

For a power energy the density is ``m = F(D^2u)^(p-1)``, so that
``F(D^2u) = m^(1/(p-1))`` holds identically and the Euler-Lagrange equation of
the energy becomes the double-divergence equation ``(F_ij(D^2u) m)_ij = 0``.
For the exponential energy the coupling is logarithmic: ``m = exp(F(D^2u))``.

Densities live on interior nodes, next to the Hessian field they come from.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .energy import EnergySpec, _operator_values
from .grid import CLAMP_WIDTH, Grid, GridFunction, hessian, integrate

__all__ = [
    "MFGPair",
    "TestFunction",
    "VerificationReport",
    "assemble_density",
    "hj_residual",
    "fp_residual",
    "standard_tests",
    "verify_weak_solution",
    "coupling_of",
]

FP_EPS = 1e-30
BUMP_POWER = 4


def coupling_of(spec: EnergySpec) -> str:
    return "power" if spec.kind == "power" else "logarithmic"


@dataclass(frozen=True)
class MFGPair:
    """A value function and a density on the interior nodes of ``u.grid``.

    Nonnegativity of ``m`` is deliberately not enforced here; it is the first
    condition checked by :func:`verify_weak_solution`.
    """

    u: GridFunction
    m: np.ndarray
    coupling: str = "power"
    p: int = 2

    def __post_init__(self):
        if self.coupling not in ("power", "logarithmic"):
            raise ValueError(f"unknown coupling {self.coupling!r}")
        m = np.asarray(self.m, dtype=float)
        if m.shape != self.u.grid.interior_shape:
            m = np.broadcast_to(m, self.u.grid.interior_shape)
        m = np.array(m)
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @property
    def grid(self) -> Grid:
        return self.u.grid

    def with_density(self, m) -> "MFGPair":
        return MFGPair(self.u, m, self.coupling, self.p)

    def free_density(self) -> np.ndarray:
        return self.m[_free_in_interior(self.grid)]


def _free_in_interior(grid: Grid) -> tuple:
    k = CLAMP_WIDTH - 1
    return (slice(k, grid.n - 2 - k),) * grid.d


def assemble_density(u: GridFunction, spec: EnergySpec) -> MFGPair:
    """Density ``F^(p-1)`` (power kind) or ``exp(F)`` (exponential kind) from ``u``.

    Raises
    ------
    ValueError
        If ``F(D^2u) < 0`` somewhere for a power energy.
    """
    H = hessian(u).data
    F = _operator_values(H, spec, u.grid)
    if spec.kind == "exponential":
        return MFGPair(u, np.exp(F), "logarithmic", spec.p)
    if np.any(F < 0):
        idx = np.unravel_index(int(np.argmin(F)), F.shape)
        node = tuple(int(i) + 1 for i in idx)
        raise ValueError(f"F(D^2u) = {F[idx]:.6g} < 0 at grid node {node}; "
                         "a power density needs F >= 0")
    return MFGPair(u, F ** (spec.p - 1), "power", spec.p)


def _signed_root(m: np.ndarray, k: int) -> np.ndarray:
    if k == 1:
        return m
    return np.sign(m) * np.abs(m) ** (1.0 / k)


def hj_residual(pair: MFGPair, spec: EnergySpec) -> float:
    """Sup over free nodes of ``|F(D^2u) - m^(1/(p-1))|`` or ``|F(D^2u) - ln m|``."""
    F = _operator_values(hessian(pair.u).data, spec, pair.grid)
    sel = _free_in_interior(pair.grid)
    F, m = F[sel], pair.m[sel]
    if pair.coupling == "logarithmic":
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.abs(F - np.log(m))
        r = np.where(np.isnan(r), np.inf, r)
    else:
        r = np.abs(F - _signed_root(m, pair.p - 1))
    return float(np.max(r)) if r.size else 0.0


@dataclass(frozen=True)
class TestFunction:
    """Polynomial bump ``((r^2 - |x - c|^2)_+)^k`` with compact support.

    The bump is ``C^(k-1)``; ``k >= 3`` keeps the second derivatives
    continuous, and larger ``k`` makes the node-sum quadrature of the weak
    pairing more accurate near the edge of the support.
    """

    center: tuple
    radius: float
    power: int = BUMP_POWER

    __test__ = False  # not a pytest class

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if int(self.power) != self.power or self.power < 3:
            raise ValueError("bump power must be an integer >= 3")

    @property
    def d(self) -> int:
        return len(self.center)

    def _offsets(self, coords):
        y = [np.asarray(x, dtype=float) - c for x, c in zip(coords, self.center)]
        q = self.radius ** 2 - sum(yi ** 2 for yi in y)
        return y, np.maximum(q, 0.0)

    def value(self, *coords) -> np.ndarray:
        _, q = self._offsets(coords)
        return q ** self.power

    def hessian(self, *coords) -> np.ndarray:
        """Packed analytic Hessian ``4k(k-1) q^(k-2) y_i y_j - 2k q^(k-1) delta_ij``."""
        k = self.power
        y, q = self._offsets(coords)
        a = 4 * k * (k - 1) * q ** (k - 2)
        b = 2 * k * q ** (k - 1)
        if self.d == 1:
            return (a * y[0] ** 2 - b)[..., None]
        return np.stack([a * y[0] ** 2 - b, a * y[0] * y[1], a * y[1] ** 2 - b], axis=-1)

    def fits(self, grid: Grid) -> bool:
        return all(lo - 1e-12 <= c - self.radius and c + self.radius <= hi + 1e-12
                   for c, (lo, hi) in zip(self.center, grid.free_box))

    def to_dict(self) -> dict:
        return {"center": list(self.center), "radius": self.radius, "power": self.power}


def standard_tests(grid: Grid, seed: int = 0, power: int = BUMP_POWER) -> list:
    """Nine seeded bumps: radii ``0.3 L, 0.6 L, 0.9 L`` times three centers each.

    ``L`` is the half-width of the free box; every center is drawn uniformly
    among the positions that keep the support inside the free box.
    """
    rng = np.random.default_rng(seed)
    (lo, hi) = grid.free_box[0]
    half = 0.5 * (hi - lo)
    tests = []
    for frac in (0.3, 0.6, 0.9):
        r = frac * half
        for _ in range(3):
            c = [rng.uniform(a + r, b - r) for a, b in grid.free_box]
            tests.append(TestFunction(tuple(c), r, power))
    return tests


def _contract(G: np.ndarray, P: np.ndarray) -> np.ndarray:
    """``sum_ij G_ij P_ij`` for packed symmetric arrays."""
    if G.shape[-1] == 1:
        return G[..., 0] * P[..., 0]
    return G[..., 0] * P[..., 0] + 2.0 * G[..., 1] * P[..., 1] + G[..., 2] * P[..., 2]


def _pairing_terms(pair: MFGPair, spec: EnergySpec):
    H = hessian(pair.u).data
    G = spec.operator.grad(H)
    return G * pair.m[..., None]


def fp_residual(pair: MFGPair, spec: EnergySpec, tests: Optional[Sequence[TestFunction]] = None,
                seed: int = 0, per_test: bool = False):
    """Normalized weak residual of ``(F_ij(D^2u) m)_ij = 0``.

    For each test ``phi`` the quantity is
    ``|int F_ij m phi_ij| / (||D^2 phi||_L1 ||m||_L1 + 1e-30)``; the maximum over
    the tests is returned (or the list, with ``per_test=True``).
    """
    grid = pair.grid
    if tests is None:
        tests = standard_tests(grid, seed)
    for t in tests:
        if t.d != grid.d:
            raise ValueError("test function dimension does not match the grid")
        if not t.fits(grid):
            raise ValueError(f"test support {t.to_dict()} touches the clamp layers")
    flux = _pairing_terms(pair, spec)
    m_l1 = integrate(np.abs(pair.m), grid)
    coords = grid.interior_mesh()
    out = []
    for t in tests:
        P = t.hessian(*coords)
        num = abs(integrate(_contract(flux, P), grid))
        phi_l1 = integrate(np.sqrt(_contract(P, P)), grid)
        out.append(num / (phi_l1 * m_l1 + FP_EPS))
    if per_test:
        return out
    return max(out) if out else 0.0


@dataclass
class VerificationReport:
    hj_residual_sup: float
    fp_residual_max: float
    m_min: float
    m_L1: float
    tol_hj: float
    tol_fp: float
    nonneg_pass: bool
    hj_pass: bool
    fp_pass: bool
    coupling: str = "power"
    fp_residuals: list = field(default_factory=list)
    tests: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.nonneg_pass and self.hj_pass and self.fp_pass

    @property
    def flags(self) -> tuple:
        return (self.nonneg_pass, self.hj_pass, self.fp_pass)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(_jsonable(self.to_dict()), **kw)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else repr(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def verify_weak_solution(pair: MFGPair, spec: EnergySpec, tol_hj: float = 1e-6,
                         tol_fp: float = 1e-4, tests: Optional[Sequence[TestFunction]] = None,
                         seed: int = 0) -> VerificationReport:
    """Check the three weak-solution conditions on ``pair``.

    1. ``m >= 0`` (``m > 0`` for logarithmic coupling) with finite integral;
    2. ``hj_residual <= tol_hj``;
    3. ``fp_residual <= tol_fp`` over ``tests`` (default: :func:`standard_tests`).
    """
    if tests is None:
        tests = standard_tests(pair.grid, seed)
    m_min = float(np.min(pair.m))
    m_l1 = integrate(np.abs(pair.m), pair.grid)
    finite = bool(np.all(np.isfinite(pair.m)))
    if pair.coupling == "logarithmic":
        nonneg = finite and bool(np.all(pair.m > 0))
    else:
        nonneg = finite and m_min >= 0
    hj = hj_residual(pair, spec)
    fps = fp_residual(pair, spec, tests, per_test=True)
    fp = max(fps) if fps else 0.0
    return VerificationReport(
        hj_residual_sup=hj, fp_residual_max=fp, m_min=m_min, m_L1=m_l1,
        tol_hj=tol_hj, tol_fp=tol_fp, nonneg_pass=nonneg,
        hj_pass=bool(hj <= tol_hj), fp_pass=bool(fp <= tol_fp),
        coupling=pair.coupling, fp_residuals=list(map(float, fps)),
        tests=[t.to_dict() for t in tests],
    )
