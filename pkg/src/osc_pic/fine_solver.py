"""Lockstep RK4 integration of the characteristics for a whole ensemble.

The characteristics are ``R' = V/eps``, ``V' = -R/eps + E(R)``.  For the
Poisson field all particles move through the four RK stages together and
the field is re-deposited and re-solved at every stage (or once per substep
with ``frozen_field``).  Given fields let particles advance independently.
"""

from __future__ import annotations

import csv
import math
import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import TWO_PI, DomainError, Ensemble, PhaseState
from .fields import FieldModel


class IntegrationError(RuntimeError):
    def __init__(self, index: int, time: float):
        self.index = int(index)
        self.time = float(time)
        super().__init__(f"non-finite state for particle {self.index} at t={self.time!r}")


class NoPeriodDetected(RuntimeError):
    def __init__(self, indices, horizon: float | None = None):
        self.indices = [int(i) for i in np.atleast_1d(indices)]
        shown = self.indices[:10]
        more = "" if len(self.indices) <= 10 else f" (+{len(self.indices) - 10} more)"
        msg = f"fewer than 3 velocity sign changes for particles {shown}{more}"
        if horizon is not None:
            msg += f" within horizon {horizon:.6g}"
        super().__init__(msg)


@dataclass
class CharacteristicODE:
    epsilon: float
    field: FieldModel
    frozen_field: bool = False

    def __post_init__(self):
        if not self.epsilon > 0:
            raise DomainError("epsilon must be positive")

    def rhs(self, r, v, weights, snapshot=None):
        if snapshot is not None:
            E = self.field.evaluate_frozen(snapshot, r)
        else:
            E = self.field.evaluate(r, weights)
        inv = 1.0 / self.epsilon
        return v * inv, E - r * inv


@dataclass
class FineStats:
    """Cost counters for fine integration."""

    substeps: int = 0
    particle_substeps: int = 0
    seconds: float = 0.0

    def add(self, n_steps: int, n_particles: int, seconds: float) -> None:
        self.substeps += n_steps
        self.particle_substeps += n_steps * n_particles
        self.seconds += seconds


@dataclass
class TrajectoryRecord:
    """Samples ``(t_k, R_k, V_k)`` of a fine pass; arrays are ``(samples, particles)``."""

    times: np.ndarray
    r: np.ndarray
    v: np.ndarray
    step: float
    extrema: dict = field(default_factory=dict)

    @property
    def n_particles(self) -> int:
        return self.r.shape[1]

    def shifted(self, dt: float) -> TrajectoryRecord:
        return TrajectoryRecord(self.times + dt, self.r, self.v, self.step)

    def extend(self, other: TrajectoryRecord) -> TrajectoryRecord:
        """Append a record that starts where this one ends."""
        return TrajectoryRecord(
            np.concatenate([self.times, other.times[1:]]),
            np.concatenate([self.r, other.r[1:]]),
            np.concatenate([self.v, other.v[1:]]),
            self.step,
        )

    def prepend(self, ensemble: Ensemble) -> TrajectoryRecord:
        """Add an earlier sample (e.g. one backward substep) at the front."""
        return TrajectoryRecord(
            np.concatenate([[ensemble.time], self.times]),
            np.vstack([ensemble.r, self.r]),
            np.vstack([ensemble.v, self.v]),
            self.step,
        )

    def select(self, index) -> TrajectoryRecord:
        return TrajectoryRecord(self.times, self.r[:, index], self.v[:, index], self.step)

    def dump_csv(self, path, particle: int) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "r", "v"])
            for t, r, v in zip(self.times, self.r[:, particle], self.v[:, particle]):
                w.writerow([format(t, ".17g"), format(r, ".17g"), format(v, ".17g")])


@dataclass(frozen=True)
class PeriodEstimate:
    period: float
    extremum_times: tuple[float, float]


@dataclass
class PeriodScan:
    """Per-particle result of a detection pass; NaN where no period was found."""

    periods: np.ndarray
    first: np.ndarray
    third: np.ndarray

    @property
    def ok(self) -> np.ndarray:
        return np.isfinite(self.periods)

    @property
    def failed(self) -> np.ndarray:
        return np.flatnonzero(~self.ok)


def default_step(epsilon: float, divisor: int = 100) -> float:
    return TWO_PI * epsilon / divisor


def _rk4_arrays(r, v, h, ode: CharacteristicODE, weights):
    snap = None
    if ode.frozen_field and ode.field.self_consistent:
        snap = ode.field.solve(r, weights)
    half = 0.5 * h
    k1r, k1v = ode.rhs(r, v, weights, snap)
    k2r, k2v = ode.rhs(r + half * k1r, v + half * k1v, weights, snap)
    k3r, k3v = ode.rhs(r + half * k2r, v + half * k2v, weights, snap)
    k4r, k4v = ode.rhs(r + h * k3r, v + h * k3v, weights, snap)
    sixth = h / 6.0
    r_new = r + sixth * (k1r + 2.0 * (k2r + k3r) + k4r)
    v_new = v + sixth * (k1v + 2.0 * (k2v + k3v) + k4v)
    return r_new, v_new


def _check_finite(r, v, t, offset=0):
    if not (np.isfinite(r).all() and np.isfinite(v).all()):
        bad = np.flatnonzero(~(np.isfinite(r) & np.isfinite(v)))[0]
        raise IntegrationError(offset + bad, t)


def rk4_substep(ensemble: Ensemble, h: float, ode: CharacteristicODE) -> Ensemble:
    """One classical RK4 substep of length ``h`` for every particle."""
    if not h > 0:
        raise DomainError("substep h must be positive")
    r, v = _rk4_arrays(ensemble.r, ensemble.v, h, ode, ensemble.weights)
    t = ensemble.time + h
    _check_finite(r, v, t)
    return ensemble.with_state(r, v, t)


def substep_sizes(horizon: float, h: float) -> np.ndarray:
    """``ceil(|horizon|/h)`` substeps of size ``h``, the last one shortened."""
    if horizon == 0:
        return np.zeros(0)
    sign = math.copysign(1.0, horizon)
    span = abs(horizon)
    # tolerate horizons that are whole multiples of h up to roundoff
    n = max(1, math.ceil(span / h * (1.0 - 1e-12)))
    sizes = np.full(n, h)
    sizes[-1] = span - (n - 1) * h
    return sign * sizes


def _integrate(r, v, weights, t0, sizes, ode, record, index_offset=0):
    n = sizes.size
    if record:
        R = np.empty((n + 1, r.size))
        V = np.empty((n + 1, r.size))
        R[0], V[0] = r, v
    t = t0
    for k in range(n):
        r, v = _rk4_arrays(r, v, sizes[k], ode, weights)
        t = t0 + sizes[: k + 1].sum() if k == n - 1 else t0 + (k + 1) * sizes[0]
        _check_finite(r, v, t, index_offset)
        if record:
            R[k + 1], V[k + 1] = r, v
    if record:
        return r, v, R, V
    return r, v, None, None


def advance_fine(
    ensemble: Ensemble,
    horizon: float,
    ode: CharacteristicODE,
    h: float | None = None,
    record: bool = False,
    stats: FineStats | None = None,
    threads: int = 1,
):
    """Integrate the ensemble over ``horizon`` with lockstep RK4 substeps.

    Returns ``(ensemble, record)``; ``record`` is None unless requested.  A
    negative horizon integrates backward in time.
    """
    if h is None:
        h = default_step(ode.epsilon)
    if not h > 0:
        raise DomainError("substep h must be positive")
    if not math.isfinite(horizon):
        raise DomainError("horizon must be finite")
    sizes = substep_sizes(horizon, h)
    n = sizes.size
    t0 = ensemble.time
    started = _time.perf_counter()

    n_p = len(ensemble)
    if threads > 1 and not ode.field.self_consistent and n_p >= 2 * threads:
        chunks = np.array_split(np.arange(n_p), threads)

        def work(idx):
            return _integrate(
                ensemble.r[idx], ensemble.v[idx], ensemble.weights[idx], t0, sizes, ode, record, idx[0]
            )

        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, chunks))
        r = np.concatenate([p[0] for p in parts])
        v = np.concatenate([p[1] for p in parts])
        R = np.concatenate([p[2] for p in parts], axis=1) if record else None
        V = np.concatenate([p[3] for p in parts], axis=1) if record else None
    else:
        r, v, R, V = _integrate(ensemble.r, ensemble.v, ensemble.weights, t0, sizes, ode, record)

    if stats is not None:
        stats.add(n, n_p, _time.perf_counter() - started)
    out = ensemble.with_state(r, v, t0 + horizon)
    if not record:
        return out, None
    times = t0 + np.arange(n + 1) * (sizes[0] if n else 0.0)
    times[-1] = t0 + horizon
    return out, TrajectoryRecord(times, R, V, abs(sizes[0]) if n else h)


def detect_periods(record: TrajectoryRecord) -> PeriodScan:
    """Vectorised period detection for every particle of a record.

    An extremum of R is a sign change of V between consecutive samples; its
    time is refined by linear interpolation of V.  A sample exactly at zero
    counts once, on the side where V arrives at zero.
    """
    V = record.v
    t = record.times
    a, b = V[:-1], V[1:]
    cross = ((a > 0) & (b <= 0)) | ((a < 0) & (b >= 0))
    count = np.cumsum(cross, axis=0)
    ok = count[-1] >= 3 if count.size else np.zeros(V.shape[1], dtype=bool)
    cols = np.arange(V.shape[1])

    def crossing_time(rows):
        va, vb = a[rows, cols], b[rows, cols]
        ta, tb = t[rows], t[rows + 1]
        with np.errstate(invalid="ignore", divide="ignore"):
            return ta + (tb - ta) * (va / (va - vb))

    if not count.size:
        nan = np.full(V.shape[1], np.nan)
        return PeriodScan(nan, nan.copy(), nan.copy())
    first = crossing_time(np.argmax(count >= 1, axis=0))
    third = crossing_time(np.argmax(count >= 3, axis=0))
    periods = np.where(ok, third - first, np.nan)
    first = np.where(ok, first, np.nan)
    third = np.where(ok, third, np.nan)
    return PeriodScan(periods, first, third)


def detect_period(record: TrajectoryRecord, particle: int) -> PeriodEstimate:
    scan = detect_periods(record.select([particle]))
    if not scan.ok[0]:
        raise NoPeriodDetected([particle], record.times[-1] - record.times[0])
    est = PeriodEstimate(float(scan.periods[0]), (float(scan.first[0]), float(scan.third[0])))
    record.extrema[particle] = est.extremum_times
    return est


def interpolate_states(record: TrajectoryRecord, t_star, particles=None):
    """Quadratic Lagrange interpolation of ``(R, V)`` at per-particle times.

    ``t_star[j]`` is the query time for particle ``particles[j]`` (all
    particles if None).  The three nodes are the bracketing sample pair plus
    the neighbour on the side nearer to ``t_star``.
    """
    times = record.times
    t_star = np.asarray(t_star, dtype=float)
    if particles is None:
        particles = np.arange(record.n_particles)
    particles = np.asarray(particles)
    t_star = np.broadcast_to(t_star, particles.shape)
    K = times.size - 1
    slack = 1e-9 * record.step
    if np.any(t_star < times[0] - slack) or np.any(t_star > times[-1] + slack):
        raise DomainError(
            f"interpolation time outside recorded window [{times[0]!r}, {times[-1]!r}]"
        )
    if K < 1:
        return record.r[0, particles].copy(), record.v[0, particles].copy()

    k = np.clip(np.searchsorted(times, t_star, side="right") - 1, 0, K - 1)
    if K == 1:
        w = (t_star - times[0]) / (times[1] - times[0])
        return tuple((1 - w) * X[0, particles] + w * X[1, particles] for X in (record.r, record.v))
    near_left = (t_star - times[k]) < (times[k + 1] - t_star)
    nb = np.where(near_left, k - 1, k + 2)
    nb = np.where(nb < 0, k + 2, nb)
    nb = np.where(nb > K, k - 1, nb)

    x0, x1, x2 = times[k], times[k + 1], times[nb]
    l0 = (t_star - x1) * (t_star - x2) / ((x0 - x1) * (x0 - x2))
    l1 = (t_star - x0) * (t_star - x2) / ((x1 - x0) * (x1 - x2))
    l2 = (t_star - x0) * (t_star - x1) / ((x2 - x0) * (x2 - x1))
    out = []
    for X in (record.r, record.v):
        out.append(l0 * X[k, particles] + l1 * X[k + 1, particles] + l2 * X[nb, particles])
    return out[0], out[1]


def interpolate_state(record: TrajectoryRecord, particle: int, t_star: float) -> PhaseState:
    r, v = interpolate_states(record, [t_star], [particle])
    return PhaseState(float(r[0]), float(v[0]))
