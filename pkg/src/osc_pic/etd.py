"""ETD macro-step schemes and the simulation driver.

* reference: plain fine RK4 over every macro step.
* classic: fast time ``2 pi eps`` shared by all particles.
* modified: fast time = ensemble-mean period measured once at ``t = 0``.
* improved: per-particle periods re-measured at every macro step, then
  ``y(t+dt) ~ y(t+o) + N (y(t+o+T) - y(t+o))`` from one synchronized fine pass.
"""

from __future__ import annotations

import logging
import math
import time as _time
from dataclasses import dataclass, field

import numpy as np

from .core import TWO_PI, DomainError, Ensemble, Scheme, SimConfig, TourDecomposition, decompose_step
from .fields import FieldModel, interp_field, make_field
from .fine_solver import (
    CharacteristicODE,
    FineStats,
    NoPeriodDetected,
    PeriodEstimate,
    PeriodScan,
    TrajectoryRecord,
    advance_fine,
    default_step,
    detect_periods,
    interpolate_states,
)
from .sampling import sample_initial

log = logging.getLogger(__name__)

# first extremum falls within T/2, the third within 1.5 T
DETECTION_FACTOR = 1.6
# detected periods outside this band (in units of 2 pi eps) are treated as
# undetected: spurious V sign changes of tiny orbits in a noisy field
PERIOD_BAND = (0.75, 1.5)


@dataclass
class MacroStepPlan:
    """Per-particle tour decomposition of one macro step.

    ``periods`` is NaN and ``n_tours`` is 0 for particles listed in
    ``fallback``; those are integrated finely over the whole step instead.
    ``substituted`` lists particles whose period could not be measured in a
    self-consistent field and were given ``2 pi eps``.
    """

    dt: float
    periods: np.ndarray
    decomposition: TourDecomposition
    horizon: float
    fallback: np.ndarray
    scan: PeriodScan | None = None
    substituted: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(np.isfinite(self.periods))

    @property
    def n_tours(self) -> np.ndarray:
        return self.decomposition.n_tours

    @property
    def offsets(self) -> np.ndarray:
        return self.decomposition.offset


@dataclass
class RunStats:
    fine: FineStats = field(default_factory=FineStats)
    detection_substeps: int = 0
    evaluation_substeps: int = 0
    extrapolation_seconds: float = 0.0
    field_solve_seconds: float = 0.0
    field_solves: int = 0
    macro_steps: int = 0
    detection_passes: int = 0
    n_tours_min: int | None = None
    n_tours_max: int | None = None
    fallback_particles: int = 0
    substituted_periods: int = 0

    def note_tours(self, n: np.ndarray) -> None:
        if n.size == 0:
            return
        lo, hi = int(n.min()), int(n.max())
        self.n_tours_min = lo if self.n_tours_min is None else min(self.n_tours_min, lo)
        self.n_tours_max = hi if self.n_tours_max is None else max(self.n_tours_max, hi)


@dataclass
class SimulationResult:
    config: SimConfig
    snapshots: list[Ensemble]
    stats: RunStats
    initial_periods: np.ndarray | None = None
    fast_time: float | None = None

    @property
    def final(self) -> Ensemble:
        return self.snapshots[-1]


def mean_period(periods) -> float:
    """Arithmetic mean of a list of periods (floats or PeriodEstimate)."""
    values = [p.period if isinstance(p, PeriodEstimate) else float(p) for p in periods]
    if not values:
        raise DomainError("mean of an empty period list")
    return math.fsum(values) / len(values)


def _fine(ens, horizon, ode, h, stats, record=False, threads=1):
    fine = stats.fine if stats is not None else None
    return advance_fine(ens, horizon, ode, h, record=record, stats=fine, threads=threads)


def classic_etd_step(
    ensemble: Ensemble,
    dt: float,
    fast_time: float,
    ode: CharacteristicODE,
    h: float | None = None,
    stats: RunStats | None = None,
    threads: int = 1,
) -> Ensemble:
    """One macro step of the fixed-fast-time ETD scheme."""
    if not fast_time > 0:
        raise DomainError("fast_time must be positive")
    h = h or default_step(ode.epsilon)
    t0 = ensemble.time
    dec = decompose_step(dt, fast_time)
    n = dec.n_tours
    if n == 0:
        out, _ = _fine(ensemble, dt, ode, h, stats, threads=threads)
        out.time = t0 + dt
        return out

    after_tour, _ = _fine(ensemble, fast_time, ode, h, stats, threads=threads)
    started = _time.perf_counter()
    if n == 1:
        r, v = after_tour.r, after_tour.v
    else:
        r = ensemble.r + n * (after_tour.r - ensemble.r)
        v = ensemble.v + n * (after_tour.v - ensemble.v)
    if stats is not None:
        stats.extrapolation_seconds += _time.perf_counter() - started
    mid = ensemble.with_state(r, v, t0 + n * fast_time)
    out, _ = _fine(mid, dec.offset, ode, h, stats, threads=threads)
    out.time = t0 + dt
    return out


def detection_pass(
    ensemble: Ensemble,
    ode: CharacteristicODE,
    h: float,
    horizon: float,
    stats: RunStats | None = None,
    threads: int = 1,
) -> tuple[PeriodScan, TrajectoryRecord]:
    """Fine pass with recording, extended once by the same horizon on failure."""
    n_sub = max(3, math.ceil(horizon / h))
    end, rec = _fine(ensemble, n_sub * h, ode, h, stats, record=True, threads=threads)
    if stats is not None:
        stats.detection_substeps += n_sub
        stats.detection_passes += 1
    scan = detect_periods(rec)
    if scan.failed.size:
        log.debug("period detection: %d particles need a longer horizon", scan.failed.size)
        _, more = _fine(end, n_sub * h, ode, h, stats, record=True, threads=threads)
        if stats is not None:
            stats.detection_substeps += n_sub
        rec = rec.extend(more)
        scan = detect_periods(rec)
    return scan, rec


def plan_from_periods(periods, dt: float, scan: PeriodScan | None = None) -> MacroStepPlan:
    """Build a plan from known periods; NaN entries become fallback particles."""
    periods = np.asarray(periods, dtype=float).copy()
    ok = np.isfinite(periods)
    n = np.zeros(periods.size, dtype=np.int64)
    o = np.full(periods.size, float(dt))
    if ok.any():
        dec = decompose_step(dt, periods[ok])
        n[ok] = dec.n_tours
        o[ok] = dec.offset
    horizon = float(np.max(o[ok] + periods[ok])) if ok.any() else 0.0
    dec = TourDecomposition(n, o, periods)
    return MacroStepPlan(float(dt), periods, dec, horizon, np.flatnonzero(~ok), scan)


def plan_macro_step(
    ensemble: Ensemble,
    dt: float,
    ode: CharacteristicODE,
    h: float | None = None,
    previous_max_period: float | None = None,
    stats: RunStats | None = None,
    threads: int = 1,
) -> MacroStepPlan:
    """Measure every particle's period at ``t_n`` and split ``dt`` into tours."""
    h = h or default_step(ode.epsilon)
    base = previous_max_period or TWO_PI * ode.epsilon
    scan, _ = detection_pass(ensemble, ode, h, DETECTION_FACTOR * base, stats, threads)
    periods = screen_periods(scan.periods, ode.epsilon)
    failed = np.flatnonzero(~np.isfinite(periods))
    if failed.size and ode.field.self_consistent:
        # the field history needed for a separate fine push is not available
        # without a full-ensemble pass over dt; use the nominal fast time
        log.info("%s; using 2*pi*eps for them", NoPeriodDetected(failed))
        periods[failed] = TWO_PI * ode.epsilon
        plan = plan_from_periods(periods, dt, scan)
        plan.substituted = failed
        return plan
    if failed.size:
        log.info("%s; integrating them finely over the step", NoPeriodDetected(failed))
    return plan_from_periods(periods, dt, scan)


def screen_periods(periods, epsilon: float, band=PERIOD_BAND) -> np.ndarray:
    """Replace implausible periods by NaN."""
    periods = np.asarray(periods, dtype=float)
    fast = TWO_PI * epsilon
    ok = (periods >= band[0] * fast) & (periods <= band[1] * fast)
    return np.where(ok, periods, np.nan)


class _FixedField(FieldModel):
    """A solved Poisson grid held fixed in time."""

    def __init__(self, grid):
        self.grid = grid

    def evaluate(self, r, weights):
        return interp_field(self.grid, r)


def _fallback_ode(ensemble: Ensemble, ode: CharacteristicODE) -> CharacteristicODE:
    if not ode.field.self_consistent:
        return ode
    return CharacteristicODE(ode.epsilon, _FixedField(ode.field.solve(ensemble.r, ensemble.weights)))


def evaluation_pass(ensemble, horizon, ode, h, stats=None, threads=1) -> TrajectoryRecord:
    """Recorded fine pass covering ``[t_n - h, t_n + horizon + h]``.

    One sample on each side beyond the needed window keeps the
    nearer-neighbour interpolation stencil the same at ``t+o`` and ``t+o+T``.
    """
    n_sub = math.ceil(horizon / h * (1.0 - 1e-12)) + 1
    before, _ = _fine(ensemble, -h, ode, h, stats, threads=threads)
    _, rec = _fine(ensemble, n_sub * h, ode, h, stats, record=True, threads=threads)
    if stats is not None:
        stats.evaluation_substeps += n_sub + 1
    return rec.prepend(before)


def extrapolate_tours(rec: TrajectoryRecord, plan: MacroStepPlan, t0: float, particles):
    """``y(t0+o) + N (y(t0+o+T) - y(t0+o))`` for the given particles."""
    o = plan.offsets[particles]
    T = plan.periods[particles]
    N = plan.n_tours[particles]
    r_o, v_o = interpolate_states(rec, t0 + o, particles)
    r_oT, v_oT = interpolate_states(rec, t0 + o + T, particles)
    return r_o + N * (r_oT - r_o), v_o + N * (v_oT - v_o)


def improved_etd_step(
    ensemble: Ensemble,
    plan: MacroStepPlan,
    ode: CharacteristicODE,
    h: float | None = None,
    stats: RunStats | None = None,
    threads: int = 1,
) -> Ensemble:
    """Advance by ``plan.dt`` with per-particle tours (evaluation + extrapolation)."""
    h = h or default_step(ode.epsilon)
    t0 = ensemble.time
    r_new = ensemble.r.copy()
    v_new = ensemble.v.copy()
    active = plan.active

    if active.size:
        rec = evaluation_pass(ensemble, plan.horizon, ode, h, stats, threads)
        started = _time.perf_counter()
        r_new[active], v_new[active] = extrapolate_tours(rec, plan, t0, active)
        if stats is not None:
            stats.extrapolation_seconds += _time.perf_counter() - started
            stats.note_tours(plan.n_tours[active])
            stats.substituted_periods += plan.substituted.size

    if plan.fallback.size:
        sub = ensemble.subset(plan.fallback)
        moved, _ = _fine(sub, plan.dt, _fallback_ode(ensemble, ode), h, stats)
        r_new[plan.fallback] = moved.r
        v_new[plan.fallback] = moved.v
        if stats is not None:
            stats.fallback_particles += plan.fallback.size

    return ensemble.with_state(r_new, v_new, t0 + plan.dt)


def make_ode(config: SimConfig) -> CharacteristicODE:
    fld = make_field(config.field, config.grid_extent, config.grid_cells, config.deposition)
    return CharacteristicODE(config.epsilon, fld, config.frozen_field)


def macro_times(final_time: float, dt: float) -> list[float]:
    """Macro-step boundaries ``0, dt, 2 dt, ...`` ending exactly at ``final_time``."""
    if final_time <= 0:
        return [0.0]
    n = max(1, math.ceil(final_time / dt * (1.0 - 1e-12)))
    times = [k * dt for k in range(n)]
    times.append(final_time)
    return times


def initial_ensemble(config: SimConfig) -> Ensemble:
    return sample_initial(config.n_particles, config.rng_seed, config.quiet_start)


def run_simulation(config: SimConfig, ensemble: Ensemble | None = None, on_snapshot=None) -> SimulationResult:
    """Run ``config.scheme`` from the sampled initial ensemble to ``final_time``.

    A snapshot is kept at ``t = 0`` and after every macro step.  Deterministic
    for a given config; ``on_snapshot(index, ensemble)`` is called as they arrive.
    """
    ens = ensemble if ensemble is not None else initial_ensemble(config)
    ode = make_ode(config)
    h = config.fine_step
    stats = RunStats()
    times = macro_times(config.final_time, config.macro_step)
    snapshots = [ens]
    if on_snapshot:
        on_snapshot(0, ens)

    fast_time = None
    initial_periods = None
    prev_max = None
    scheme = config.scheme
    threads = config.threads

    if scheme is Scheme.CLASSIC:
        fast_time = TWO_PI * config.epsilon
    elif scheme is Scheme.MODIFIED and len(times) > 1:
        scan, _ = detection_pass(ens, ode, h, DETECTION_FACTOR * TWO_PI * config.epsilon, stats, threads)
        initial_periods = screen_periods(scan.periods, config.epsilon)
        ok = np.isfinite(initial_periods)
        if not ok.all():
            log.info("%s; excluded from the mean period", NoPeriodDetected(np.flatnonzero(~ok)))
        fast_time = mean_period(initial_periods[ok])

    for k in range(1, len(times)):
        dt = times[k] - times[k - 1]
        if scheme is Scheme.REFERENCE:
            ens, _ = _fine(ens, dt, ode, h, stats, threads=threads)
        elif scheme in (Scheme.CLASSIC, Scheme.MODIFIED):
            ens = classic_etd_step(ens, dt, fast_time, ode, h, stats, threads)
        else:
            plan = plan_macro_step(ens, dt, ode, h, prev_max, stats, threads)
            if k == 1:
                initial_periods = plan.periods
            if plan.active.size:
                prev_max = float(np.max(plan.periods[plan.active]))
            ens = improved_etd_step(ens, plan, ode, h, stats, threads)
        ens.time = times[k]
        stats.macro_steps += 1
        snapshots.append(ens)
        if on_snapshot:
            on_snapshot(k, ens)

    solves = getattr(ode.field, "solves", 0)
    stats.field_solves = solves
    stats.field_solve_seconds = getattr(ode.field, "solve_seconds", 0.0)
    return SimulationResult(config, snapshots, stats, initial_periods, fast_time)
