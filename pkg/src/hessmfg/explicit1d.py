"""Closed-form solutions of the one-dimensional model ``F(z) = (1 + z^p)^(1/p)``.

On ``(0, 1)`` the family

    u(x) = A s^(2 + 1/(p-1)) / (p (2p - 1)) + C x + D,    s = (p-1) x - B,

has ``u_xx = A s^(1/(p-1))``, so ``u_xx^(p-1)`` is affine and the pair
``(u, m)`` with ``m = (1 + u_xx^p)^((p-1)/p)`` solves the one-dimensional MFG
system.  Real roots use the signed convention ``root(s) = sign(s) |s|^(1/(p-1))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from .grid import Grid, GridFunction

__all__ = [
    "ExplicitParams",
    "AdmissibilityError",
    "explicit_u",
    "explicit_uxx",
    "explicit_m",
    "explicit_energy",
    "energy_quadrature",
    "minimizing_solution",
    "explicit_pair",
    "random_admissible",
]

CONVENTIONS = ("consistent", "inverse_p")


class AdmissibilityError(ValueError):
    pass


def _spow(s, e):
    s = np.asarray(s, dtype=float)
    return np.sign(s) * np.abs(s) ** e


@dataclass(frozen=True)
class ExplicitParams:
    A: float
    B: float
    C: float = 0.0
    D: float = 0.0
    p: int = 2

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 2:
            raise ValueError(f"p must be an integer >= 2, got {self.p}")
        object.__setattr__(self, "p", int(self.p))

    @property
    def odd(self) -> bool:
        return self.p % 2 == 1

    def base(self, x) -> np.ndarray:
        return (self.p - 1) * np.asarray(x, dtype=float) - self.B

    def is_admissible(self) -> bool:
        """Real roots on ``[0, 1]`` and, for odd ``p``, ``1 + u_xx^p > 0``.

        For odd ``p`` the root index ``p - 1`` is even, so the base must stay
        nonnegative, i.e. ``B <= 0`` (unless ``A = 0``).
        """
        if not all(np.isfinite([self.A, self.B, self.C, self.D])):
            return False
        if self.A == 0 or not self.odd:
            return True
        if self.B > 0:
            return False
        # u_xx is monotone in x, so the endpoints bound it
        z = self.A * np.array([self.base(0.0), self.base(1.0)]) ** (1.0 / (self.p - 1))
        return bool(np.all(1.0 + z ** self.p > 0))

    def check(self) -> None:
        if not self.is_admissible():
            raise AdmissibilityError(f"inadmissible parameters {self}")

    def to_dict(self) -> dict:
        return {"A": self.A, "B": self.B, "C": self.C, "D": self.D, "p": self.p}


def _root(params: ExplicitParams, s):
    return _spow(s, 1.0 / (params.p - 1))


def explicit_uxx(params: ExplicitParams, x) -> np.ndarray:
    params.check()
    return params.A * _root(params, params.base(x))


def explicit_u(params: ExplicitParams, x) -> np.ndarray:
    params.check()
    p = params.p
    s = params.base(x)
    x = np.asarray(x, dtype=float)
    power_term = params.A * s * s * _root(params, s) / (p * (2 * p - 1))
    return power_term + params.C * x + params.D


def explicit_m(params: ExplicitParams, x, convention: str = "consistent") -> np.ndarray:
    """Density ``(1 + u_xx^p)^((p-1)/p)``.

    ``convention="inverse_p"`` uses the exponent ``1/p`` instead; the two agree
    only for ``p = 2``, and only the default makes ``F(u_xx) = m^(1/(p-1))``.
    """
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}")
    p = params.p
    base = 1.0 + explicit_uxx(params, x) ** p
    e = (p - 1.0) / p if convention == "consistent" else 1.0 / p
    return base ** e


def explicit_energy(params: ExplicitParams) -> float:
    """``int_0^1 1 + u_xx^p dx`` from the antiderivative of ``|s|^(p/(p-1))``."""
    params.check()
    p = params.p
    e = (2.0 * p - 1.0) / (p - 1.0)
    bracket = _spow((p - 1) - params.B, e) - _spow(-params.B, e)
    return float(1.0 + params.A ** p * bracket / (2 * p - 1))


def energy_quadrature(params: ExplicitParams, panels: int = 10_000) -> float:
    """Composite Simpson rule for the same integral (independent check)."""
    if panels % 2:
        panels += 1
    x = np.linspace(0.0, 1.0, panels + 1)
    return float(simpson(1.0 + explicit_uxx(params, x) ** params.p, x=x))


def minimizing_solution(g0: float, g1: float, p: int = 2) -> ExplicitParams:
    """The affine member ``u = (g1 - g0) x + g0``, ``m = 1``."""
    return ExplicitParams(A=0.0, B=0.0, C=float(g1) - float(g0), D=float(g0), p=p)


def with_boundary(params: ExplicitParams, g0: float, g1: float) -> ExplicitParams:
    """Adjust ``C, D`` so that ``u(0) = g0`` and ``u(1) = g1``."""
    bare = ExplicitParams(params.A, params.B, 0.0, 0.0, params.p)
    w0, w1 = (float(v) for v in explicit_u(bare, np.array([0.0, 1.0])))
    return ExplicitParams(params.A, params.B, (g1 - w1) - (g0 - w0), g0 - w0, params.p)


def random_admissible(rng: np.random.Generator, p: int, scale: float = 2.0) -> ExplicitParams:
    """Rejection sample of admissible ``(A, B)`` with ``|A|, |B| <= scale``."""
    while True:
        A, B, C, D = rng.uniform(-scale, scale, size=4)
        prm = ExplicitParams(A, B, C, D, p)
        if prm.is_admissible():
            return prm


def explicit_pair(params: ExplicitParams, grid: Grid, convention: str = "consistent"):
    """Sample ``(u, m)`` on a grid over ``[0, 1]`` as an :class:`~hessmfg.mfg.MFGPair`."""
    from .mfg import MFGPair

    if grid.d != 1 or grid.box[0] != (0.0, 1.0):
        raise ValueError("the explicit family lives on the unit interval")
    x = grid.axis(0)
    u = GridFunction(grid, explicit_u(params, x))
    m = explicit_m(params, grid.interior_mesh()[0], convention)
    return MFGPair(u, m, "power", params.p)
