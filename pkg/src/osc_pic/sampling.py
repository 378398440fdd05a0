"""Initial macroparticle ensemble for the beam distribution.

``f0(r, v) = n0 / (sqrt(2 pi) v_th) * exp(-v^2 / (2 v_th^2)) * 1[|r| <= 0.75]``
with ``n0 = 2/3`` so that the total mass is 1.

Generator: ``numpy.random.Generator(PCG64(seed))``.  Draw order is fixed:
``n`` integers in ``[0, 2**53)`` for the positions, then ``n`` more for the
velocities.  Integer ``k`` maps to the open-interval uniform
``(k + 0.5) / 2**53``; positions are ``-0.75 + 1.5 u`` and velocities
``v_th * Phi^-1(u)`` through the inverse normal CDF.  The quiet start uses
midpoint strata in both variables, paired through a seeded permutation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .core import DomainError, Ensemble

V_TH = 0.0727518214392
R_SUPPORT = (-0.75, 0.75)
N0 = 2.0 / 3.0

_TWO53 = float(2**53)


@dataclass(frozen=True)
class InitialCondition:
    n_particles: int
    seed: int = 0
    v_th: float = V_TH
    r_support: tuple[float, float] = R_SUPPORT
    n0: float = N0
    quiet_start: bool = False

    def density(self, r, v):
        r = np.asarray(r, dtype=float)
        v = np.asarray(v, dtype=float)
        lo, hi = self.r_support
        inside = (r >= lo) & (r <= hi)
        gauss = np.exp(-0.5 * (v / self.v_th) ** 2) / (np.sqrt(2 * np.pi) * self.v_th)
        return np.where(inside, self.n0 * gauss, 0.0)


def _open_uniforms(rng: np.random.Generator, n: int) -> np.ndarray:
    k = rng.integers(0, 2**53, size=n, dtype=np.int64)
    return (k.astype(float) + 0.5) / _TWO53


def sample_initial(n_particles: int, seed: int = 0, quiet_start: bool = False) -> Ensemble:
    """Draw ``n_particles`` equal-weight macroparticles from ``f0``."""
    if n_particles < 1:
        raise DomainError("n_particles must be >= 1")
    lo, hi = R_SUPPORT
    rng = np.random.Generator(np.random.PCG64(seed))
    if quiet_start:
        strata = (np.arange(n_particles) + 0.5) / n_particles
        u_r = strata
        u_v = strata[rng.permutation(n_particles)]
    else:
        u_r = _open_uniforms(rng, n_particles)
        u_v = _open_uniforms(rng, n_particles)
    r = lo + (hi - lo) * u_r
    v = V_TH * ndtri(u_v)
    weights = np.full(n_particles, 1.0 / n_particles)
    return Ensemble(r, v, weights, 0.0)
