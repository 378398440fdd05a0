"""Shared domain types and macro-step arithmetic."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from enum import Enum
from typing import NamedTuple

import numpy as np

TWO_PI = 2.0 * math.pi


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class Scheme(str, Enum):
    REFERENCE = "reference"
    CLASSIC = "classic"
    MODIFIED = "modified"
    IMPROVED = "improved"


class FieldKind(str, Enum):
    ZERO = "zero"
    CUBIC = "cubic"
    POISSON = "poisson"


@dataclass(frozen=True)
class SimConfig:
    """Resolved parameters of one simulation run."""

    epsilon: float
    macro_step: float = 0.5
    final_time: float = 10.0
    n_particles: int = 20000
    fine_substep_divisor: int = 100
    rng_seed: int = 0
    scheme: Scheme = Scheme.IMPROVED
    field: FieldKind = FieldKind.CUBIC
    grid_cells: int = 256
    grid_extent: float = 2.0
    quiet_start: bool = False
    frozen_field: bool = False
    deposition: str = "cic"
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        object.__setattr__(self, "field", FieldKind(self.field))
        checks = [
            ("epsilon", self.epsilon > 0),
            ("macro_step", self.macro_step > 0),
            ("final_time", self.final_time >= 0),
            ("n_particles", self.n_particles >= 1),
            ("fine_substep_divisor", self.fine_substep_divisor >= 4),
            ("grid_cells", self.grid_cells >= 2),
            ("grid_extent", self.grid_extent > 0),
            ("deposition", self.deposition in ("cic", "ngp")),
            ("threads", self.threads >= 1),
        ]
        for key, ok in checks:
            if not ok:
                raise DomainError(f"invalid value for {key}: {getattr(self, key)!r}")
        for key in ("epsilon", "macro_step", "final_time", "grid_extent"):
            if not math.isfinite(getattr(self, key)):
                raise DomainError(f"invalid value for {key}: {getattr(self, key)!r}")
        if self.macro_step < 2 * TWO_PI * self.epsilon:
            warnings.warn(
                f"macro step {self.macro_step} is shorter than two fast periods "
                f"({2 * TWO_PI * self.epsilon:.3g}); ETD schemes gain nothing here",
                stacklevel=3,
            )

    @property
    def fine_step(self) -> float:
        return TWO_PI * self.epsilon / self.fine_substep_divisor

    def replace(self, **changes) -> SimConfig:
        return replace(self, **changes)


class PhaseState(NamedTuple):
    r: float
    v: float


class Particle(NamedTuple):
    state: PhaseState
    weight: float


@dataclass
class Ensemble:
    """Particle cloud in phase space.

    Index ``i`` is the identity of a particle for the whole run; weights are
    fixed at construction.
    """

    r: np.ndarray
    v: np.ndarray
    weights: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if not (self.r.shape == self.v.shape == self.weights.shape) or self.r.ndim != 1:
            raise DomainError("r, v and weights must be 1-D arrays of equal length")
        if np.any(self.weights <= 0):
            raise DomainError("particle weights must be positive")

    def __len__(self) -> int:
        return self.r.size

    def particle(self, i: int) -> Particle:
        return Particle(PhaseState(float(self.r[i]), float(self.v[i])), float(self.weights[i]))

    @property
    def particles(self) -> list[Particle]:
        return [self.particle(i) for i in range(len(self))]

    def with_state(self, r, v, time: float) -> Ensemble:
        # weights array is shared on purpose: it is never mutated
        return Ensemble(np.asarray(r, dtype=float), np.asarray(v, dtype=float), self.weights, time)

    def subset(self, index) -> Ensemble:
        return Ensemble(self.r[index], self.v[index], self.weights[index], self.time)

    def copy(self) -> Ensemble:
        return Ensemble(self.r.copy(), self.v.copy(), self.weights, self.time)

    @classmethod
    def from_particles(cls, particles, time: float = 0.0) -> Ensemble:
        particles = list(particles)
        r = [p.state.r for p in particles]
        v = [p.state.v for p in particles]
        w = [p.weight for p in particles]
        return cls(np.array(r), np.array(v), np.array(w), time)


@dataclass(frozen=True)
class TourDecomposition:
    """``dt = n_tours * period + offset`` with ``0 <= offset < period``.

    Fields hold scalars or equally shaped arrays (one entry per particle).
    """

    n_tours: np.ndarray | int
    offset: np.ndarray | float
    period: np.ndarray | float


def decompose_step(dt, period) -> TourDecomposition:
    """Split ``dt`` into whole tours of length ``period`` plus a remainder.

    Works elementwise on arrays of periods.  ``floor`` can leave a remainder
    one ulp short of ``period``; that case is snapped to an extra full tour.
    """
    dt_a = np.asarray(dt, dtype=float)
    period_a = np.asarray(period, dtype=float)
    if not (np.all(np.isfinite(dt_a)) and np.all(np.isfinite(period_a))):
        raise DomainError("dt and period must be finite")
    if np.any(dt_a <= 0) or np.any(period_a <= 0):
        raise DomainError("dt and period must be positive")

    n = np.floor(dt_a / period_a)
    offset = dt_a - n * period_a
    # quotient rounded up to an integer: remainder slightly negative
    neg = offset < 0
    n = np.where(neg, n - 1, n)
    offset = np.where(neg, offset + period_a, offset)
    tol = 2.0 * np.spacing(np.maximum(dt_a, period_a))
    snap = offset >= period_a - tol
    n = np.where(snap, n + 1, n)
    offset = np.where(snap, 0.0, offset)
    offset = np.clip(offset, 0.0, None)

    n = n.astype(np.int64)
    if n.ndim == 0:
        return TourDecomposition(int(n), float(offset), float(period_a))
    return TourDecomposition(n, offset, np.broadcast_to(period_a, n.shape).copy())


def rotation_apply(tau, period, r, v):
    """Apply the ``period``-periodic rotation of angle ``2*pi*tau/period``.

    Returns ``(r', v')`` with ``r' = cos*r + sin*v`` and ``v' = -sin*r + cos*v``.
    """
    period = np.asarray(period, dtype=float)
    if np.any(period <= 0):
        raise DomainError("period must be positive")
    theta = TWO_PI * np.asarray(tau, dtype=float) / period
    c, s = np.cos(theta), np.sin(theta)
    r = np.asarray(r, dtype=float)
    v = np.asarray(v, dtype=float)
    out = c * r + s * v, -s * r + c * v
    if not (np.all(np.isfinite(out[0])) and np.all(np.isfinite(out[1]))):
        raise DomainError("non-finite rotation input")
    return out
