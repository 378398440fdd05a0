"""Period and energy of the undamped, undriven Duffing oscillator.

Phase-space form used throughout the package: ``R' = V/eps``,
``V' = -R/eps - R**3``, i.e. ``R'' + R/eps**2 + R**3/eps = 0`` with
``R'(0) = v0/eps``.  All functions broadcast over array arguments.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import DomainError

# Gauss-Legendre order for the period integral.  The integrand after the
# sine substitution is analytic and pi-periodic; 48 nodes reach roundoff for
# alpha well beyond the range met in practice (alpha < 0.5).
QUADRATURE_ORDER = 48


@dataclass(frozen=True)
class DuffingIC:
    r0: float
    v0: float
    epsilon: float


@dataclass(frozen=True)
class OrbitInvariants:
    hamiltonian: float
    amplitude: float
    alpha: float


def _check_eps(epsilon):
    if np.any(np.asarray(epsilon) <= 0):
        raise DomainError("epsilon must be positive")


def potential(r, epsilon):
    r = np.asarray(r, dtype=float)
    r2 = r * r
    return r2 / (2.0 * epsilon**2) + r2 * r2 / (4.0 * epsilon)


def restoring_force(r, epsilon):
    """``g = G'``: the hard-spring restoring force."""
    r = np.asarray(r, dtype=float)
    return r / epsilon**2 + r**3 / epsilon


def hamiltonian(r, v, epsilon):
    """Energy ``(r**2 + v**2)/(2 eps**2) + r**4/(4 eps)`` of a phase-space point.

    ``v`` is the phase-space velocity, so ``v**2 = eps**2 * R'**2``.
    """
    _check_eps(epsilon)
    v = np.asarray(v, dtype=float)
    return potential(r, epsilon) + v * v / (2.0 * epsilon**2)


def amplitude(r0, v0, epsilon):
    """Positive R-axis crossing ``b`` of the orbit through ``(r0, v0)``.

    Solves ``G(b) = H(r0, v0)``.  The textbook root
    ``sqrt((sqrt(1 + eps*c) - 1)/eps)`` with ``c = 2(r0^2+v0^2) + eps*r0^4``
    cancels catastrophically for small ``eps``; it is evaluated as
    ``c / (sqrt(1 + eps*c) + 1)`` instead.
    """
    _check_eps(epsilon)
    r0 = np.asarray(r0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    s = r0 * r0 + v0 * v0
    if np.any(s == 0):
        raise DomainError("degenerate orbit: (r0, v0) = (0, 0)")
    c = 2.0 * s + epsilon * (r0 * r0) ** 2
    return np.sqrt(c / (np.sqrt(1.0 + epsilon * c) + 1.0))


def orbit_invariants(ic: DuffingIC) -> OrbitInvariants:
    b = float(amplitude(ic.r0, ic.v0, ic.epsilon))
    h = float(hamiltonian(ic.r0, ic.v0, ic.epsilon))
    return OrbitInvariants(h, b, b * b * ic.epsilon / 2.0)


@lru_cache(maxsize=8)
def _gauss_nodes(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    # map [-1, 1] -> [0, pi/2]
    theta = 0.25 * np.pi * (x + 1.0)
    return np.sin(theta) ** 2, 0.25 * np.pi * w


def period_from_alpha(alpha, epsilon, order: int = QUADRATURE_ORDER):
    """``4 eps * int_0^{pi/2} dtheta / sqrt(1 + alpha (1 + sin^2 theta))``."""
    alpha = np.asarray(alpha, dtype=float)
    sin2, w = _gauss_nodes(order)
    integrand = 1.0 / np.sqrt(1.0 + alpha[..., None] * (1.0 + sin2))
    return 4.0 * np.asarray(epsilon, dtype=float) * (integrand @ w)


def period_quadrature(r0, v0, epsilon, order: int = QUADRATURE_ORDER):
    """Exact period of the orbit through ``(r0, v0)`` by quadrature."""
    b = amplitude(r0, v0, epsilon)
    return period_from_alpha(0.5 * b * b * epsilon, epsilon, order)


def period_taylor(r0, v0, epsilon):
    """Third-order small-``eps`` expansion of the period."""
    _check_eps(epsilon)
    r0 = np.asarray(r0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    s = r0 * r0 + v0 * v0
    pi = np.pi
    return (
        2.0 * pi * epsilon
        - 0.75 * pi * s * epsilon**2
        + (105.0 * pi / 128.0 * s * s - 0.375 * pi * r0**4) * epsilon**3
    )
