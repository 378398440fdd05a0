import math

import numpy as np
import pytest

from osc_pic.core import TWO_PI, DomainError, FieldKind, Scheme, SimConfig, rotation_apply
from osc_pic.duffing import period_quadrature
from osc_pic.etd import (
    RunStats,
    classic_etd_step,
    evaluation_pass,
    extrapolate_tours,
    improved_etd_step,
    macro_times,
    mean_period,
    plan_from_periods,
    plan_macro_step,
    run_simulation,
    screen_periods,
)
from osc_pic.fine_solver import PeriodEstimate, advance_fine, default_step, interpolate_states
from osc_pic.sampling import sample_initial

from conftest import EPS, make_ensemble

H = default_step(EPS)
FINE_H = default_step(EPS, 400)


def _rotation_error(out, ens, dt):
    r, v = rotation_apply(dt, TWO_PI * EPS, ens.r, ens.v)
    return np.hypot(out.r - r, out.v - v)


def test_classic_single_tour_is_fine_integration(cubic_ode):
    ens = sample_initial(20, seed=1)
    T = TWO_PI * EPS
    out = classic_etd_step(ens, T, T, cubic_ode)
    direct, _ = advance_fine(ens, T, cubic_ode)
    np.testing.assert_array_equal(out.r, direct.r)
    np.testing.assert_array_equal(out.v, direct.v)


def test_classic_zero_field_rotation(zero_ode):
    ens = sample_initial(20, seed=2)
    for dt in (0.5, 0.13, 1.0):
        # RK4 phase lag bounds the error at the default substep ...
        assert _rotation_error(classic_etd_step(ens, dt, TWO_PI * EPS, zero_ode), ens, dt).max() <= 1e-5
        # ... and the 1e-6 tolerance holds once the substep is refined
        out = classic_etd_step(ens, dt, TWO_PI * EPS, zero_ode, FINE_H)
        assert _rotation_error(out, ens, dt).max() <= 1e-6
        assert out.time == dt


def test_classic_periodic_particle_unchanged(zero_ode):
    # origin is a fixed point: y(t + T) = y(t) so extrapolation keeps it
    ens = make_ensemble([0.0], [0.0])
    out = classic_etd_step(ens, 0.5, TWO_PI * EPS, zero_ode)
    assert (out.r[0], out.v[0]) == (0.0, 0.0)


def test_classic_rejects_bad_fast_time(zero_ode):
    with pytest.raises(DomainError):
        classic_etd_step(make_ensemble(1.0, 0.0), 0.5, 0.0, zero_ode)


def test_mean_period():
    assert mean_period([0.3, 0.3, 0.3]) == 0.3
    T = TWO_PI * EPS
    assert mean_period([T, T - EPS**2]) == pytest.approx(T - EPS**2 / 2, rel=1e-15)
    assert mean_period([PeriodEstimate(1.0, (0, 1)), PeriodEstimate(2.0, (0, 2))]) == 1.5
    with pytest.raises(DomainError):
        mean_period([])


def test_mean_period_of_initial_cloud():
    cfg = SimConfig(epsilon=EPS, n_particles=2000, scheme=Scheme.MODIFIED, final_time=0.5)
    res = run_simulation(cfg)
    T = TWO_PI * EPS
    assert T - 1.5 * EPS**2 < res.fast_time < T


def test_plan_zero_field(zero_ode):
    plan = plan_macro_step(sample_initial(50, seed=3), 0.5, zero_ode)
    np.testing.assert_allclose(plan.periods, TWO_PI * EPS, atol=1e-4 * EPS)
    assert np.all(plan.n_tours == 7)
    np.testing.assert_allclose(plan.offsets, plan.offsets[0], atol=1e-4 * EPS * 7)
    assert plan.fallback.size == 0


def test_plan_cubic_particle(cubic_ode):
    plan = plan_macro_step(make_ensemble([0.5], [0.0]), 0.5, cubic_ode)
    T = plan.periods[0]
    assert T == pytest.approx(0.0627730, abs=1e-4 * EPS)
    assert plan.n_tours[0] == 7
    assert plan.offsets[0] == pytest.approx(0.0605888, abs=1e-6)
    assert plan.n_tours[0] * T + plan.offsets[0] == pytest.approx(0.5, rel=1e-14)
    assert plan.horizon >= plan.offsets[0] + T


def test_plan_origin_particle_falls_back(cubic_ode):
    ens = make_ensemble([0.0, 0.5], [0.0, 0.0])
    plan = plan_macro_step(ens, 0.5, cubic_ode)
    assert list(plan.fallback) == [0]
    assert plan.n_tours[0] == 0 and plan.offsets[0] == 0.5
    out = improved_etd_step(ens, plan, cubic_ode)
    assert (out.r[0], out.v[0]) == (0.0, 0.0)


def test_plan_invariants(cubic_ode):
    plan = plan_macro_step(sample_initial(300, seed=4), 0.5, cubic_ode)
    assert np.all(plan.offsets + plan.periods <= plan.horizon)
    np.testing.assert_allclose(plan.n_tours * plan.periods + plan.offsets, 0.5, rtol=1e-14)


def test_improved_zero_field(zero_ode):
    ens = sample_initial(50, seed=5)
    plan = plan_macro_step(ens, 0.5, zero_ode)
    out = improved_etd_step(ens, plan, zero_ode)
    assert out.time == 0.5
    assert _rotation_error(out, ens, 0.5).max() <= 1e-5
    fine_plan = plan_macro_step(ens, 0.5, zero_ode, FINE_H)
    assert _rotation_error(improved_etd_step(ens, fine_plan, zero_ode, FINE_H), ens, 0.5).max() <= 1e-6


def test_improved_cubic_single_particle(cubic_ode):
    ens = make_ensemble([0.5], [0.0])
    out = improved_etd_step(ens, plan_macro_step(ens, 0.5, cubic_ode), cubic_ode)
    direct, _ = advance_fine(ens, 0.5, cubic_ode)
    assert math.hypot(out.r[0] - direct.r[0], out.v[0] - direct.v[0]) <= 5e-3


def test_improved_zero_tours_is_fine_integration(cubic_ode):
    ens = make_ensemble([0.5, -0.3], [0.0, 0.1])
    periods = period_quadrature(ens.r, ens.v, EPS)
    dt = 0.8 * periods.min()
    plan = plan_from_periods(periods, dt)
    assert np.all(plan.n_tours == 0)
    out = improved_etd_step(ens, plan, cubic_ode)
    direct, _ = advance_fine(ens, dt, cubic_ode)
    # only interpolation error separates the two
    np.testing.assert_allclose(out.r, direct.r, atol=(H / EPS) ** 3 / 8)
    np.testing.assert_allclose(out.v, direct.v, atol=(H / EPS) ** 3 / 8)


def test_single_tour_identity(cubic_ode):
    ens = sample_initial(40, seed=6)
    periods = period_quadrature(ens.r, ens.v, EPS)
    dt = 1.3 * periods.max()
    plan = plan_from_periods(periods, dt)
    assert np.all(plan.n_tours == 1)
    rec = evaluation_pass(ens, plan.horizon, cubic_ode, H)
    idx = np.arange(len(ens))
    r_x, v_x = extrapolate_tours(rec, plan, 0.0, idx)
    r_i, v_i = interpolate_states(rec, plan.offsets + plan.periods, idx)
    np.testing.assert_allclose(r_x, r_i, atol=1e-15)
    np.testing.assert_allclose(v_x, v_i, atol=1e-15)
    direct, _ = advance_fine(ens, dt, cubic_ode)
    assert np.max(np.hypot(r_x - direct.r, v_x - direct.v)) <= 1e-6


def test_screen_periods():
    T = TWO_PI * EPS
    out = screen_periods([T, 0.2 * T, 2 * T, np.nan], EPS)
    assert out[0] == T and np.isnan(out[1:]).all()


def test_macro_times():
    assert macro_times(0.0, 0.5) == [0.0]
    assert macro_times(1.0, 0.5) == [0.0, 0.5, 1.0]
    assert macro_times(1.2, 0.5) == [0.0, 0.5, 1.0, 1.2]


def test_run_final_time_zero():
    cfg = SimConfig(epsilon=EPS, n_particles=30, final_time=0.0)
    res = run_simulation(cfg)
    assert len(res.snapshots) == 1
    np.testing.assert_array_equal(res.final.r, sample_initial(30, 0).r)


@pytest.mark.parametrize("divisor,tol", [(100, 1e-4), (400, 1e-6)])
def test_reference_vs_improved_zero_field(divisor, tol):
    cfg = SimConfig(epsilon=EPS, n_particles=40, final_time=1.5, field=FieldKind.ZERO, fine_substep_divisor=divisor)
    ref = run_simulation(cfg.replace(scheme=Scheme.REFERENCE))
    imp = run_simulation(cfg)
    for a, b in zip(ref.snapshots, imp.snapshots):
        assert a.time == b.time
        assert np.max(np.hypot(a.r - b.r, a.v - b.v)) <= tol


@pytest.mark.parametrize("scheme", list(Scheme))
@pytest.mark.parametrize("field", [FieldKind.CUBIC, FieldKind.POISSON])
def test_weights_conserved_and_times_exact(scheme, field):
    cfg = SimConfig(epsilon=EPS, n_particles=60, final_time=1.2, scheme=scheme, field=field, grid_cells=32)
    res = run_simulation(cfg)
    assert [s.time for s in res.snapshots] == [0.0, 0.5, 1.0, 1.2]
    w0 = res.snapshots[0].weights
    for snap in res.snapshots:
        assert np.array_equal(snap.weights, w0)
        assert np.all(np.isfinite(snap.r)) and np.all(np.isfinite(snap.v))


def test_improved_cost_per_step():
    cfg = SimConfig(epsilon=EPS, n_particles=100, final_time=2.0)
    res = run_simulation(cfg)
    tours = res.stats.fine.substeps / cfg.fine_substep_divisor / res.stats.macro_steps
    assert tours <= 4.0
    assert isinstance(res.stats, RunStats)


def test_on_snapshot_callback():
    seen = []
    run_simulation(SimConfig(epsilon=EPS, n_particles=10, final_time=1.0), on_snapshot=lambda k, e: seen.append((k, e.time)))
    assert seen == [(0, 0.0), (1, 0.5), (2, 1.0)]
