"""Discrete Hessian-dependent energies and their exact gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid, GridFunction, hessian_adjoint, hessian_values, integrate
from .operators import DimensionError, DomainError, OperatorSpec

__all__ = ["EnergySpec", "energy", "energy_gradient", "energy_and_gradient", "integrand"]

KINDS = ("power", "exponential")


@dataclass(frozen=True)
class EnergySpec:
    """``kind="power"``: integrand F^p; ``kind="exponential"``: integrand exp(F), p unused."""

    operator: OperatorSpec
    p: int = 2
    kind: str = "power"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind == "power":
            if int(self.p) != self.p or self.p < 2:
                raise ValueError(f"power energies need an integer p >= 2, got {self.p}")
            object.__setattr__(self, "p", int(self.p))


def _operator_values(H: np.ndarray, spec: EnergySpec, grid: Grid):
    op = spec.operator
    if op.dim != grid.d:
        raise DimensionError(f"operator {op.name} has d={op.dim}, grid has d={grid.d}")
    try:
        return op.value(H)
    except DomainError as exc:
        # report the node index on the full grid
        node = tuple(i + 1 for i in exc.index)
        raise DomainError(f"{exc} (grid node {node})", index=node) from None


def integrand(F: np.ndarray, spec: EnergySpec) -> np.ndarray:
    if spec.kind == "power":
        return F ** spec.p
    return np.exp(F)


def _weights(F, G, spec: EnergySpec):
    if spec.kind == "power":
        return (spec.p * F ** (spec.p - 1))[..., None] * G
    return np.exp(F)[..., None] * G


def energy_and_gradient(values: np.ndarray, grid: Grid, spec: EnergySpec):
    """Energy and full-grid gradient array from nodal values.

    ``values`` may be offsets from an exact affine part: second differences
    ignore affine functions, so the result is the same.
    """
    H = hessian_values(values, grid)
    F = _operator_values(H, spec, grid)
    E = integrate(integrand(F, spec), grid)
    W = _weights(F, spec.operator.grad(H), spec) * grid.cell_volume
    return E, hessian_adjoint(W, grid)


def energy(u: GridFunction, spec: EnergySpec) -> float:
    H = hessian_values(u.offset, u.grid)
    return integrate(integrand(_operator_values(H, spec, u.grid), spec), u.grid)


def energy_gradient(u: GridFunction, spec: EnergySpec) -> np.ndarray:
    """Exact derivative of the discrete energy with respect to the free nodal values."""
    _, full = energy_and_gradient(u.offset, u.grid, spec)
    return full[u.grid.free]
