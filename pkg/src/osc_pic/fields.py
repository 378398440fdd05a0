"""Electric field models: zero, cubic restoring field, self-consistent Poisson.

The Poisson field solves ``d(r E)/dr = rho`` on a uniform grid over
``[-L, L]``.  Charge is scattered with cloud-in-cell weights (or nearest grid
point), ``G(r) = int_0^r rho`` is accumulated with the trapezoidal rule and
``E = G / r`` away from the origin, ``E(0) = rho(0)`` at it.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from .core import DomainError, FieldKind


class OutOfDomainError(DomainError):
    """A particle left the field grid; ``grid_extent`` is too small."""

    def __init__(self, index: int, position: float, extent: float):
        self.index = int(index)
        self.position = float(position)
        super().__init__(
            f"particle {self.index} at r={self.position!r} is outside the field grid "
            f"[-{extent}, {extent}]; increase grid_extent"
        )


@dataclass(frozen=True)
class GridSpec:
    extent: float = 2.0
    cells: int = 256

    def __post_init__(self):
        if self.cells < 2 or not self.extent > 0:
            raise DomainError(f"invalid grid: cells={self.cells}, extent={self.extent}")

    @property
    def spacing(self) -> float:
        return 2.0 * self.extent / self.cells

    @property
    def nodes(self) -> np.ndarray:
        # built symmetrically so the middle node is exactly 0 for even cell counts
        j = np.arange(self.cells + 1)
        return (2 * j - self.cells) * (self.extent / self.cells)


@dataclass(frozen=True)
class ChargeDensityGrid:
    values: np.ndarray
    grid: GridSpec

    @property
    def spacing(self) -> float:
        return self.grid.spacing

    @property
    def extent(self) -> float:
        return self.grid.extent

    def integral(self) -> float:
        return trapezoid(self.values, self.spacing)


@dataclass(frozen=True)
class FieldGrid:
    values: np.ndarray
    grid: GridSpec

    @property
    def spacing(self) -> float:
        return self.grid.spacing

    @property
    def extent(self) -> float:
        return self.grid.extent


def trapezoid(values, spacing: float) -> float:
    values = np.asarray(values, dtype=float)
    return spacing * (values.sum() - 0.5 * (values[0] + values[-1]))


def eval_cubic(r):
    r = np.asarray(r, dtype=float)
    return -(r * r * r)


def _locate(r, grid: GridSpec):
    """Cell index and fractional position of each ``r``; raises on escape."""
    r = np.asarray(r, dtype=float)
    L = grid.extent
    bad = ~((r >= -L) & (r <= L))
    if np.any(bad):
        i = int(np.flatnonzero(bad.ravel())[0])
        raise OutOfDomainError(i, r.ravel()[i], L)
    x = (r + L) / grid.spacing
    k = np.minimum(np.floor(x).astype(np.intp), grid.cells - 1)
    return k, x - k


def deposit(r, weights, grid: GridSpec, scheme: str = "cic") -> ChargeDensityGrid:
    """Scatter particle weights onto the grid as a charge density.

    Boundary nodes own half a cell, so their density is doubled; with that the
    trapezoidal integral of ``rho`` equals the deposited weight.
    """
    k, frac = _locate(r, grid)
    weights = np.asarray(weights, dtype=float)
    n = grid.cells + 1
    if scheme == "cic":
        rho = np.bincount(k, weights * (1.0 - frac), minlength=n)
        rho += np.bincount(k + 1, weights * frac, minlength=n)
    elif scheme == "ngp":
        rho = np.bincount(k + (frac >= 0.5), weights, minlength=n)
    else:
        raise DomainError(f"unknown deposition scheme {scheme!r}")
    rho /= grid.spacing
    rho[0] *= 2.0
    rho[-1] *= 2.0
    return ChargeDensityGrid(rho, grid)


def solve_poisson(rho: ChargeDensityGrid) -> FieldGrid:
    values = np.asarray(rho.values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise DomainError("non-finite charge density")
    grid = rho.grid
    dr = grid.spacing
    nodes = grid.nodes

    cum = np.empty_like(values)
    cum[0] = 0.0
    np.cumsum(0.5 * dr * (values[1:] + values[:-1]), out=cum[1:])
    # shift the antiderivative so that G(0) = 0
    k = min(int(np.floor(grid.cells / 2)), grid.cells - 1)
    if nodes[k] == 0.0:
        rho0 = values[k]
        g0 = cum[k]
    else:
        f = -nodes[k] / dr
        rho0 = (1.0 - f) * values[k] + f * values[k + 1]
        g0 = cum[k] + 0.5 * (-nodes[k]) * (values[k] + rho0)
    G = cum - g0

    E = np.empty_like(values)
    nz = nodes != 0.0
    E[nz] = G[nz] / nodes[nz]
    E[~nz] = rho0
    return FieldGrid(E, grid)


def interp_field(field: FieldGrid, r):
    k, frac = _locate(r, field.grid)
    vals = field.values
    return (1.0 - frac) * vals[k] + frac * vals[k + 1]


def write_grid_csv(path, grid_values: ChargeDensityGrid | FieldGrid) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r", "value"])
        for r, val in zip(grid_values.grid.nodes, grid_values.values):
            w.writerow([format(r, ".17g"), format(val, ".17g")])


class FieldModel:
    """Electric field seen by the particles.

    ``evaluate(r, weights)`` returns ``E`` at every position; only the
    Poisson model uses the weights.
    """

    kind: FieldKind

    def evaluate(self, r, weights):
        raise NotImplementedError

    def solve(self, r, weights):
        """Snapshot of the field that can be reused across stages, or None."""
        return None

    def evaluate_frozen(self, snapshot, r):
        raise NotImplementedError

    @property
    def self_consistent(self) -> bool:
        return False


class ZeroField(FieldModel):
    kind = FieldKind.ZERO

    def evaluate(self, r, weights):
        return np.zeros_like(r)


class CubicField(FieldModel):
    kind = FieldKind.CUBIC

    def evaluate(self, r, weights):
        return eval_cubic(r)


class PoissonField(FieldModel):
    kind = FieldKind.POISSON

    def __init__(self, grid: GridSpec | None = None, deposition: str = "cic"):
        self.grid = grid or GridSpec()
        self.deposition = deposition
        self.solves = 0
        self.solve_seconds = 0.0

    @property
    def self_consistent(self) -> bool:
        return True

    def solve(self, r, weights) -> FieldGrid:
        started = time.perf_counter()
        out = solve_poisson(deposit(r, weights, self.grid, self.deposition))
        self.solves += 1
        self.solve_seconds += time.perf_counter() - started
        return out

    def evaluate(self, r, weights):
        return interp_field(self.solve(r, weights), r)

    def evaluate_frozen(self, snapshot: FieldGrid, r):
        return interp_field(snapshot, r)

    def __repr__(self):
        return f"PoissonField(extent={self.grid.extent}, cells={self.grid.cells})"


def make_field(kind, grid_extent: float = 2.0, grid_cells: int = 256, deposition: str = "cic") -> FieldModel:
    kind = FieldKind(kind)
    if kind is FieldKind.ZERO:
        return ZeroField()
    if kind is FieldKind.CUBIC:
        return CubicField()
    return PoissonField(GridSpec(grid_extent, grid_cells), deposition)
