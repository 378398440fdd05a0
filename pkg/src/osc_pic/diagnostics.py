"""Comparison and validation instruments for particle clouds."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import DomainError, Ensemble, FieldKind
from .duffing import hamiltonian
from .etd import (
    DETECTION_FACTOR,
    MacroStepPlan,
    detection_pass,
    evaluation_pass,
    extrapolate_tours,
    plan_from_periods,
)
from .fine_solver import CharacteristicODE, advance_fine, default_step


@dataclass(frozen=True)
class CloudError:
    rms: float
    max: float


@dataclass
class DistributionReport:
    """Per-particle periods and moduli next to their initial values.

    Undetected periods are NaN and flagged in ``period_flags``.
    """

    time: float
    period_initial: np.ndarray
    period_current: np.ndarray
    modulus_initial: np.ndarray
    modulus_current: np.ndarray
    period_hist: tuple[np.ndarray, np.ndarray]
    modulus_hist: tuple[np.ndarray, np.ndarray]

    @property
    def period_flags(self) -> np.ndarray:
        return ~(np.isfinite(self.period_initial) & np.isfinite(self.period_current))


def cloud_error(a: Ensemble, b: Ensemble) -> CloudError:
    """Matched-particle phase-space distance between two clouds."""
    if len(a) != len(b):
        raise DomainError(f"particle counts differ: {len(a)} vs {len(b)}")
    d = np.hypot(a.r - b.r, a.v - b.v)
    if d.size == 0:
        return CloudError(0.0, 0.0)
    return CloudError(float(np.sqrt(np.mean(d * d))), float(d.max()))


def modulus(ensemble: Ensemble) -> np.ndarray:
    return np.hypot(ensemble.r, ensemble.v)


def measure_periods(ensemble: Ensemble, ode: CharacteristicODE, h: float | None = None) -> np.ndarray:
    h = h or default_step(ode.epsilon)
    scan, _ = detection_pass(ensemble, ode, h, DETECTION_FACTOR * 2 * np.pi * ode.epsilon)
    return scan.periods


def distribution_report(
    ensemble: Ensemble,
    initial_ensemble: Ensemble,
    ode: CharacteristicODE,
    h: float | None = None,
    initial_periods: np.ndarray | None = None,
    bins: int = 40,
) -> DistributionReport:
    if len(ensemble) != len(initial_ensemble):
        raise DomainError("ensembles do not match")
    if initial_periods is None:
        initial_periods = measure_periods(initial_ensemble, ode, h)
    current = measure_periods(ensemble, ode, h)
    m0, m = modulus(initial_ensemble), modulus(ensemble)
    finite = current[np.isfinite(current)]
    p_hist = np.histogram(finite, bins=bins) if finite.size else (np.zeros(bins, int), np.zeros(bins + 1))
    return DistributionReport(
        ensemble.time, np.asarray(initial_periods, dtype=float), current, m0, m, p_hist, np.histogram(m, bins=bins)
    )


def energy_drift(r, v, epsilon: float, field=FieldKind.CUBIC):
    """Max relative deviation of the Hamiltonian along one sampled trajectory.

    Returns None when ``H(0) = 0`` (particle at the origin).  The zero field
    uses the quadratic energy only.
    """
    r = np.asarray(r, dtype=float)
    v = np.asarray(v, dtype=float)
    field = FieldKind(field)
    if field is FieldKind.CUBIC:
        H = hamiltonian(r, v, epsilon)
    elif field is FieldKind.ZERO:
        H = (r * r + v * v) / (2.0 * epsilon**2)
    else:
        raise DomainError("energy drift needs a given (zero or cubic) field")
    if H[0] == 0:
        return None
    return float(np.max(np.abs(H - H[0])) / H[0])


def approximation_residual(
    indices,
    ensemble: Ensemble,
    plan: MacroStepPlan,
    ode: CharacteristicODE,
    h: float | None = None,
) -> np.ndarray:
    """Defect of the tour extrapolation for selected particles.

    ``|| y(t+dt) - [y(t+o) + N (y(t+o+T) - y(t+o))] ||`` where ``y(t+dt)``
    comes from direct fine integration.  With a self-consistent field the
    whole ensemble is integrated finely to provide the direct value.
    NaN for particles without a period in the plan.
    """
    h = h or default_step(ode.epsilon)
    idx = np.atleast_1d(np.asarray(indices, dtype=np.intp))
    out = np.full(idx.size, np.nan)
    has_period = np.isfinite(plan.periods[idx])
    if not has_period.any():
        return out
    idx_ok = idx[has_period]
    sub_plan = plan_from_periods(plan.periods[idx_ok], plan.dt)

    if ode.field.self_consistent:
        direct, _ = advance_fine(ensemble, plan.dt, ode, h)
        r_dir, v_dir = direct.r[idx_ok], direct.v[idx_ok]
        rec = evaluation_pass(ensemble, sub_plan.horizon, ode, h).select(idx_ok)
    else:
        sub = ensemble.subset(idx_ok)
        direct, _ = advance_fine(sub, plan.dt, ode, h)
        r_dir, v_dir = direct.r, direct.v
        rec = evaluation_pass(sub, sub_plan.horizon, ode, h)

    cols = np.arange(idx_ok.size)
    r_x, v_x = extrapolate_tours(rec, sub_plan, ensemble.time, cols)
    out[has_period] = np.hypot(r_dir - r_x, v_dir - v_x)
    return out


def classic_plan(ensemble: Ensemble, dt: float, epsilon: float) -> MacroStepPlan:
    """Plan giving every particle the fixed fast time ``2 pi eps``."""
    return plan_from_periods(np.full(len(ensemble), 2 * np.pi * epsilon), dt)


def probe_indices(n_particles: int, count: int = 16) -> np.ndarray:
    """Evenly spread subsample used by the residual probe."""
    count = min(count, n_particles)
    return np.unique(np.linspace(0, n_particles - 1, count).round().astype(np.intp))


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def write_error_vs_time(path, times, errors) -> None:
    write_csv(path, ["time", "rms", "max"], ((t, e.rms, e.max) for t, e in zip(times, errors)))


def write_periods(path, report: DistributionReport) -> None:
    flags = report.period_flags.astype(int)
    rows = zip(range(flags.size), report.period_initial, report.period_current, flags)
    write_csv(path, ["index", "period_initial", "period_current", "undetected"], rows)


def write_modulus(path, report: DistributionReport) -> None:
    rows = zip(range(report.modulus_current.size), report.modulus_initial, report.modulus_current)
    write_csv(path, ["index", "modulus_initial", "modulus_current"], rows)


def write_residuals(path, indices, residuals) -> None:
    write_csv(path, ["index", "residual"], zip(indices, residuals))

