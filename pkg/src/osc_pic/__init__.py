"""Particle-in-cell simulation of a highly oscillatory 1D Vlasov equation with
exponential time differencing over the fast rotation."""

from .core import DomainError, Ensemble, FieldKind, PhaseState, Scheme, SimConfig, decompose_step
from .diagnostics import cloud_error, distribution_report, energy_drift
from .duffing import hamiltonian, period_quadrature, period_taylor
from .etd import run_simulation
from .sampling import sample_initial

__version__ = "0.1.0"
