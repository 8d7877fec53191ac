"""Fully nonlinear operators F: S(d) -> R and executable ellipticity checks.

Symmetric matrices are stored in packed form along the last array axis:
``[z]`` for d = 1 and ``[m11, m12, m22]`` for d = 2.  ``OperatorSpec.grad``
returns the symmetric matrix derivative ``F_ij`` in the same packed layout, so
a first-order variation reads ``dF = F_11 dm11 + 2 F_12 dm12 + F_22 dm22``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "SymMatrix",
    "OperatorSpec",
    "CheckReport",
    "DomainError",
    "DimensionError",
    "packed_size",
    "frobenius",
    "norm_constant",
    "eval_operator",
    "eval_derivative",
    "check_A1",
    "check_A3",
    "check_convexity",
    "sample_symmetric",
    "sample_psd",
    "get_operator",
    "available_operators",
    "trace_d",
    "power_1d",
    "osc_1d",
    "abs_1d",
    "coercive_trace_2d",
]

DOMAIN_EPS = 1e-8


class DomainError(ValueError):
    """Raised when a matrix argument falls outside an operator's domain."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DimensionError(ValueError):
    pass


def packed_size(d: int) -> int:
    if d == 1:
        return 1
    if d == 2:
        return 3
    raise DimensionError(f"only d in {{1, 2}} is supported, got d={d}")


def frobenius(H: np.ndarray) -> np.ndarray:
    """Frobenius norm of packed symmetric matrices (last axis)."""
    H = np.asarray(H, dtype=float)
    if H.shape[-1] == 1:
        return np.abs(H[..., 0])
    # hypot avoids underflow of tiny entries (the norm vanishes only at M = 0)
    return np.hypot(np.hypot(H[..., 0], H[..., 2]), math.sqrt(2.0) * H[..., 1])


def norm_constant(d: int) -> float:
    """Norm-equivalence constant C(d) absorbed into the A1 upper bound."""
    return math.sqrt(d)


@dataclass(frozen=True)
class SymMatrix:
    d: int
    entries: tuple

    def __post_init__(self):
        if len(self.entries) != packed_size(self.d):
            raise DimensionError(
                f"d={self.d} needs {packed_size(self.d)} packed entries, got {len(self.entries)}"
            )
        object.__setattr__(self, "entries", tuple(float(e) for e in self.entries))

    @classmethod
    def from_array(cls, M) -> "SymMatrix":
        M = np.asarray(M, dtype=float)
        if M.ndim == 0:
            return cls(1, (float(M),))
        if M.shape == (1,) or M.shape == (1, 1):
            return cls(1, (float(M.ravel()[0]),))
        if M.shape == (2, 2):
            if M[0, 1] != M[1, 0]:
                raise ValueError("matrix is not symmetric")
            return cls(2, (M[0, 0], M[0, 1], M[1, 1]))
        if M.shape == (3,):
            return cls(2, tuple(M))
        raise DimensionError(f"cannot interpret array of shape {M.shape} as a symmetric matrix")

    @classmethod
    def identity(cls, d: int) -> "SymMatrix":
        return cls(d, (1.0,) if d == 1 else (1.0, 0.0, 1.0))

    @property
    def packed(self) -> np.ndarray:
        return np.array(self.entries)

    def full(self) -> np.ndarray:
        if self.d == 1:
            return np.array([[self.entries[0]]])
        a, b, c = self.entries
        return np.array([[a, b], [b, c]])

    def norm(self) -> float:
        return float(frobenius(self.packed))


@dataclass(frozen=True)
class OperatorSpec:
    """A fully nonlinear operator with its derivative and structural data.

    ``region`` declares where the (lam, Lam) ellipticity bounds are claimed:
    ``("interval", lo, hi)`` for d = 1, ``("box", R)`` for all of S(2) with
    entries in [-R, R], or ``("psd", R)`` for positive semidefinite matrices.
    """

    name: str
    dim: int
    value_fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    grad_fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    lam: float
    Lam: float
    is_convex: bool
    satisfies_A3: bool
    is_smooth: bool
    region: tuple
    singular_set: Optional[str] = None
    params: dict = field(default_factory=dict)
    domain_fn: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)
    domain_text: str = "all of S(d)"

    def __post_init__(self):
        if not (self.lam > 0 and self.lam <= self.Lam):
            raise ValueError(f"need 0 < lam <= Lam, got lam={self.lam}, Lam={self.Lam}")
        packed_size(self.dim)

    @property
    def k(self) -> int:
        return packed_size(self.dim)

    def _check(self, H: np.ndarray) -> np.ndarray:
        H = np.asarray(H, dtype=float)
        if H.shape[-1:] != (self.k,):
            raise DimensionError(
                f"operator {self.name} acts on d={self.dim} (packed size {self.k}), "
                f"got trailing shape {H.shape[-1:]}"
            )
        if self.domain_fn is not None:
            ok = self.domain_fn(H)
            if not np.all(ok):
                bad = np.argwhere(~np.asarray(ok, dtype=bool))[0]
                raise DomainError(
                    f"operator {self.name}: argument outside domain ({self.domain_text}) "
                    f"at index {tuple(int(i) for i in bad)}",
                    index=tuple(int(i) for i in bad),
                )
        return H

    def value(self, H: np.ndarray) -> np.ndarray:
        return self.value_fn(self._check(H))

    def grad(self, H: np.ndarray) -> np.ndarray:
        return self.grad_fn(self._check(H))

    def in_domain(self, H: np.ndarray) -> np.ndarray:
        H = np.asarray(H, dtype=float)
        if self.domain_fn is None:
            return np.ones(H.shape[:-1], dtype=bool)
        return np.asarray(self.domain_fn(H), dtype=bool)

    @property
    def f_zero(self) -> float:
        return float(self.value(np.zeros(self.k))[()])


@dataclass
class CheckReport:
    assumption: str
    n_samples: int
    worst_violation: float
    tol: float
    passed: bool
    f_zero: Optional[float] = None
    note: str = ""

    def __bool__(self):
        return self.passed


def _as_packed(op: OperatorSpec, M) -> np.ndarray:
    if not isinstance(M, SymMatrix):
        M = SymMatrix.from_array(M)
    if M.d != op.dim:
        raise DimensionError(f"operator {op.name} has d={op.dim}, matrix has d={M.d}")
    return M.packed


def eval_operator(op: OperatorSpec, M) -> float:
    """F(M) for a single symmetric matrix (``SymMatrix``, scalar or 2x2 array)."""
    return float(op.value(_as_packed(op, M))[()])


def eval_derivative(op: OperatorSpec, M) -> SymMatrix:
    """F_ij(M); at kinks the midpoint of the subdifferential is returned."""
    return SymMatrix(op.dim, tuple(op.grad(_as_packed(op, M))))


# --- sampling --------------------------------------------------------------


def sample_symmetric(rng: np.random.Generator, d: int, n: int, radius: float = 10.0) -> np.ndarray:
    return rng.uniform(-radius, radius, size=(n, packed_size(d)))


def sample_psd(rng: np.random.Generator, d: int, n: int) -> np.ndarray:
    """N = A^T A with A entries uniform on [-1, 1]."""
    A = rng.uniform(-1.0, 1.0, size=(n, d, d))
    N = np.einsum("nki,nkj->nij", A, A)
    if d == 1:
        return N[:, 0, :]
    return np.stack([N[:, 0, 0], N[:, 0, 1], N[:, 1, 1]], axis=-1)


def _sample_region(op: OperatorSpec, rng, n: int, region=None) -> np.ndarray:
    region = op.region if region is None else region
    kind = region[0]
    if kind == "interval":
        _, lo, hi = region
        return rng.uniform(lo, hi, size=(n, 1))
    if kind == "box":
        return sample_symmetric(rng, op.dim, n, region[1])
    if kind == "psd":
        return region[1] * sample_psd(rng, op.dim, n)
    raise ValueError(f"unknown region kind {kind!r}")


def _in_region(op: OperatorSpec, H: np.ndarray, region=None) -> np.ndarray:
    region = op.region if region is None else region
    kind = region[0]
    if kind == "interval":
        ok = (H[:, 0] >= region[1]) & (H[:, 0] <= region[2])
    elif kind == "box":
        ok = np.all(np.abs(H) <= region[1], axis=-1)
    else:
        # PSD cone is closed under adding PSD matrices
        ok = np.ones(H.shape[0], dtype=bool)
    return ok & op.in_domain(H)


def _default_box(op: OperatorSpec, radius: float = 10.0) -> tuple:
    if op.dim == 1:
        lo = -radius
        if op.domain_fn is not None and not bool(op.in_domain(np.array([[lo]]))[0]):
            lo = float(op.params.get("domain_lo", -radius))
        return ("interval", lo, radius)
    return ("box", radius)


def _draw(op, rng, n, region, pair_fn=None):
    """Rejection-sample n points (or pairs via ``pair_fn``) inside ``region``."""
    out = []
    have = 0
    while have < n:
        batch = pair_fn(rng, 2 * n) if pair_fn else _sample_region(op, rng, 2 * n, region)
        out.append(batch)
        have += batch[0].shape[0] if pair_fn else batch.shape[0]
    if pair_fn:
        return tuple(np.concatenate([b[i] for b in out])[:n] for i in range(len(out[0])))
    return np.concatenate(out)[:n]


# --- checks ----------------------------------------------------------------


def check_A1(op: OperatorSpec, n_samples: int = 1000, tol: float = 1e-9, seed: int = 0,
             region=None) -> CheckReport:
    """Sampled two-sided ellipticity bound along PSD perturbations.

    Checks ``lam*|N| - tol <= F(M+N) - F(M) <= C(d)*Lam*|N| + tol`` with M, M+N
    inside the declared region.  F(0) is reported, not enforced.
    """
    if n_samples < 1 or tol <= 0:
        raise ValueError("need n_samples >= 1 and tol > 0")
    rng = np.random.default_rng(seed)

    def pairs(rng, m):
        M = _sample_region(op, rng, m, region)
        N = sample_psd(rng, op.dim, m)
        ok = _in_region(op, M, region) & _in_region(op, M + N, region)
        return M[ok], N[ok]

    M, N = _draw(op, rng, n_samples, region, pair_fn=pairs)
    dF = op.value(M + N) - op.value(M)
    nN = frobenius(N)
    lower = op.lam * nN - dF
    upper = dF - norm_constant(op.dim) * op.Lam * nN
    worst = float(max(np.max(lower), np.max(upper), 0.0))
    return CheckReport("A1", n_samples, worst, tol, worst <= tol, f_zero=op.f_zero)


def check_A3(op: OperatorSpec, n_samples: int = 1000, tol: float = 1e-6, seed: int = 0,
             radius: float = 10.0) -> CheckReport:
    """Sampled global growth bound ``lam*|M| <= F(M) <= Lam*|M|`` plus ``F(0) = 0``."""
    if n_samples < 1 or tol <= 0:
        raise ValueError("need n_samples >= 1 and tol > 0")
    rng = np.random.default_rng(seed)
    box = _default_box(op, radius)

    def draw(rng, m):
        M = _sample_region(op, rng, m, box)
        return (M[op.in_domain(M)],)

    (M,) = _draw(op, rng, n_samples, box, pair_fn=draw)
    F = op.value(M)
    nM = frobenius(M)
    f0 = op.f_zero
    worst = float(max(np.max(op.lam * nM - F), np.max(F - op.Lam * nM), abs(f0), 0.0))
    return CheckReport("A3", n_samples, worst, tol, worst <= tol, f_zero=f0)


def check_convexity(op: OperatorSpec, n_samples: int = 1000, tol: float = 1e-9, seed: int = 0,
                    region=None) -> CheckReport:
    """Midpoint convexity test on random pairs drawn from ``region``."""
    rng = np.random.default_rng(seed)
    region = _default_box(op) if region is None else region

    def pairs(rng, m):
        M = _sample_region(op, rng, m, region)
        N = _sample_region(op, rng, m, region)
        ok = op.in_domain(M) & op.in_domain(N)
        return M[ok], N[ok]

    M, N = _draw(op, rng, n_samples, region, pair_fn=pairs)
    gap = op.value(0.5 * (M + N)) - 0.5 * (op.value(M) + op.value(N))
    worst = float(max(np.max(gap), 0.0))
    return CheckReport("A2", n_samples, worst, tol, worst <= tol, f_zero=op.f_zero)


# --- catalog ---------------------------------------------------------------


def trace_d(d: int = 2) -> OperatorSpec:
    k = packed_size(d)
    idx = [0] if d == 1 else [0, 2]
    ones = np.zeros(k)
    ones[idx] = 1.0

    def value(H):
        return H[..., idx].sum(axis=-1)

    def grad(H):
        return np.broadcast_to(ones, H.shape).copy()

    return OperatorSpec(
        name="trace_d", dim=d, value_fn=value, grad_fn=grad, lam=1.0, Lam=1.0,
        is_convex=True, satisfies_A3=False, is_smooth=True,
        region=("interval", -10.0, 10.0) if d == 1 else ("box", 10.0),
        params={"d": d},
    )


def power_1d(p: int = 2) -> OperatorSpec:
    """F(z) = (1 + z^p)^(1/p); for odd p the domain is z > -1."""
    p = int(p)
    if p < 2:
        raise ValueError("power_1d needs an integer p >= 2")
    odd = p % 2 == 1

    def value(H):
        z = H[..., 0]
        return (1.0 + z ** p) ** (1.0 / p)

    def grad(H):
        z = H[..., 0]
        return (z ** (p - 1) * (1.0 + z ** p) ** ((1.0 - p) / p))[..., None]

    domain_fn = (lambda H: H[..., 0] > -1.0 + DOMAIN_EPS) if odd else None
    # F' increases on z >= 0, so the slope bounds on [1/2, 10] are F'(1/2) and 1
    z0 = 0.5
    lam = (z0 ** p / (1.0 + z0 ** p)) ** ((p - 1.0) / p)
    return OperatorSpec(
        name="power_1d", dim=1, value_fn=value, grad_fn=grad, lam=lam, Lam=1.0,
        is_convex=not odd, satisfies_A3=False, is_smooth=not odd,
        region=("interval", z0, 10.0),
        singular_set="z = -1" if odd else None,
        params={"p": p, "domain_lo": -1.0 + DOMAIN_EPS} if odd else {"p": p},
        domain_fn=domain_fn,
        domain_text="z > -1" if odd else "all of R",
    )


def osc_1d() -> OperatorSpec:
    """F(z) = |z| (1.5 + 0.5 cos z): nonconvex, |z| <= F <= 2|z|."""

    def value(H):
        z = H[..., 0]
        return np.abs(z) * (1.5 + 0.5 * np.cos(z))

    def grad(H):
        z = H[..., 0]
        return (np.sign(z) * (1.5 + 0.5 * np.cos(z)) - 0.5 * np.abs(z) * np.sin(z))[..., None]

    return OperatorSpec(
        name="osc_1d", dim=1, value_fn=value, grad_fn=grad, lam=1.0, Lam=2.0,
        is_convex=False, satisfies_A3=True, is_smooth=False,
        # F' stays in [1.35, 2] on (0, 1]
        region=("interval", 0.0, 1.0), singular_set="z = 0",
    )


def abs_1d() -> OperatorSpec:
    def value(H):
        return np.abs(H[..., 0])

    def grad(H):
        return np.sign(H)

    return OperatorSpec(
        name="abs_1d", dim=1, value_fn=value, grad_fn=grad, lam=1.0, Lam=1.0,
        is_convex=True, satisfies_A3=True, is_smooth=False,
        region=("interval", 0.0, 10.0), singular_set="z = 0",
    )


def coercive_trace_2d(delta: float = 0.1, eps: float = 1e-6) -> OperatorSpec:
    """F(M) = sqrt(eps^2 + tr(M)^2) + delta*|M|, convex and coercive on S(2)."""

    def value(H):
        t = H[..., 0] + H[..., 2]
        return np.sqrt(eps ** 2 + t ** 2) + delta * frobenius(H)

    def grad(H):
        t = H[..., 0] + H[..., 2]
        a = t / np.sqrt(eps ** 2 + t ** 2)
        nrm = frobenius(H)
        safe = np.where(nrm > 0, nrm, 1.0)
        unit = np.where(nrm[..., None] > 0, H / safe[..., None], 0.0)
        out = delta * unit
        out[..., 0] += a
        out[..., 2] += a
        return out

    return OperatorSpec(
        name="coercive_trace_2d", dim=2, value_fn=value, grad_fn=grad,
        lam=delta, Lam=math.sqrt(2.0) + delta,
        is_convex=True, satisfies_A3=True, is_smooth=False,
        region=("psd", 5.0), singular_set="M = 0 (norm kink); tr M = 0 smoothed at scale eps",
        params={"delta": delta, "eps": eps},
    )


_CATALOG = {
    "trace_d": trace_d,
    "power_1d": power_1d,
    "osc_1d": osc_1d,
    "abs_1d": abs_1d,
    "coercive_trace_2d": coercive_trace_2d,
}


def available_operators() -> list:
    return sorted(_CATALOG)


def get_operator(name: str, **params) -> OperatorSpec:
    """Look up a catalog operator by identifier, e.g. ``get_operator("power_1d", p=3)``."""
    try:
        factory = _CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown operator {name!r}; available: {available_operators()}") from None
    return factory(**params)
