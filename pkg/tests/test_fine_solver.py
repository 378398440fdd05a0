import math

import numpy as np
import pytest

from osc_pic.core import TWO_PI, DomainError, rotation_apply
from osc_pic.duffing import hamiltonian, period_quadrature
from osc_pic.fields import GridSpec, PoissonField
from osc_pic.fine_solver import (
    CharacteristicODE,
    IntegrationError,
    NoPeriodDetected,
    TrajectoryRecord,
    advance_fine,
    default_step,
    detect_period,
    detect_periods,
    interpolate_state,
    rk4_substep,
    substep_sizes,
)
from osc_pic.sampling import sample_initial

from conftest import EPS, make_ensemble

H = default_step(EPS)


def test_rk4_substep_zero_field(zero_ode):
    out = rk4_substep(make_ensemble(1.0, 0.0), H, zero_ode)
    theta = TWO_PI / 100
    assert out.r[0] == pytest.approx(math.cos(theta), abs=1e-8)
    assert out.v[0] == pytest.approx(-math.sin(theta), abs=1e-8)
    assert out.r[0] == pytest.approx(0.9980267, abs=1e-7) and out.v[0] == pytest.approx(-0.0627905, abs=1e-7)


def test_rk4_zero_step_is_identity(zero_ode):
    ens = make_ensemble([0.3, -0.1], [0.2, 0.0])
    out, _ = advance_fine(ens, 0.0, zero_ode)
    np.testing.assert_array_equal(out.r, ens.r)
    np.testing.assert_array_equal(out.v, ens.v)
    with pytest.raises(DomainError):
        advance_fine(ens, 1.0, zero_ode, h=0.0)


def test_rk4_energy_per_substep(cubic_ode):
    # RK4 on a rotation of angle theta loses theta**6/72 of the energy per step;
    # at theta = 2 pi / 100 that is 8.6e-10
    out = rk4_substep(make_ensemble(0.5, 0.0), H, cubic_ode)
    h0 = hamiltonian(0.5, 0.0, EPS)
    drift = abs(hamiltonian(out.r[0], out.v[0], EPS) - h0) / h0
    theta = H / EPS
    assert drift < 1.05 * theta**6 / 72


def test_full_rotation_returns(zero_ode):
    # RK4 lags the exact rotation by theta**5/120 per substep, so after 100
    # substeps the return error is about 8e-7 times the modulus
    ens = make_ensemble([1.0, 0.3, -0.6], [0.0, -0.7, 0.1])
    out, _ = advance_fine(ens, TWO_PI * EPS, zero_ode)
    theta = H / EPS
    bound = 100 * (theta**5 / 120 + theta**6 / 144) * np.hypot(ens.r, ens.v)
    assert np.all(np.hypot(out.r - ens.r, out.v - ens.v) <= 1.01 * bound)
    assert out.time == TWO_PI * EPS


def test_energy_drift_over_unit_time(cubic_ode):
    ens = sample_initial(200, seed=1)
    h0 = hamiltonian(ens.r, ens.v, EPS)
    out, _ = advance_fine(ens, 1.0, cubic_ode)
    assert np.max(np.abs(hamiltonian(out.r, out.v, EPS) - h0) / h0) <= 1e-4


def test_substep_sizes_shorten_last():
    sizes = substep_sizes(1.0, 0.3)
    assert sizes.size == 4 and sizes[-1] == pytest.approx(0.1)
    assert math.fsum(sizes) == 1.0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_state_raises(zero_ode):
    ens = make_ensemble([0.0, np.inf], [0.0, 0.0])
    with pytest.raises(IntegrationError) as info:
        rk4_substep(ens, H, zero_ode)
    assert info.value.index == 1


@pytest.mark.parametrize("field", ["zero", "cubic"])
def test_reversibility(field, request):
    ode = request.getfixturevalue(f"{field}_ode")
    ens = sample_initial(50, seed=2)
    fwd, _ = advance_fine(ens, 10 * H, ode)
    back, _ = advance_fine(fwd, -10 * H, ode)
    np.testing.assert_allclose(back.r, ens.r, atol=1e-8)
    np.testing.assert_allclose(back.v, ens.v, atol=1e-8)
    assert back.time == pytest.approx(0.0, abs=1e-15)

    # RK4 is not symmetric: each forward/backward substep pair contracts the
    # state by theta**6/72, so a long round trip drifts in proportion
    n = math.ceil(0.37 / H)
    fwd, _ = advance_fine(ens, 0.37, ode)
    back, _ = advance_fine(fwd, -0.37, ode)
    bound = 1.1 * n * (H / EPS) ** 6 / 72 * np.hypot(ens.r, ens.v)
    assert np.all(np.hypot(back.r - ens.r, back.v - ens.v) <= bound)


def test_record_layout(zero_ode):
    _, rec = advance_fine(make_ensemble([1.0, 0.5], [0.0, 0.0]), 10 * H, zero_ode, record=True)
    assert rec.r.shape == (11, 2)
    assert np.all(np.diff(rec.times) > 0)
    np.testing.assert_allclose(np.diff(rec.times), H, rtol=1e-9)


def _record(ode, r, v, horizon=1.6 * TWO_PI * EPS):
    _, rec = advance_fine(make_ensemble(r, v), horizon, ode, record=True)
    return rec


def test_detect_period_zero_field(zero_ode):
    rec = _record(zero_ode, [1.0, 0.2, -0.4], [0.0, 0.5, -0.1])
    for i in range(3):
        assert detect_period(rec, i).period == pytest.approx(TWO_PI * EPS, abs=1e-4 * EPS)


def test_detect_period_cubic(cubic_ode):
    est = detect_period(_record(cubic_ode, 0.5, 0.0), 0)
    assert est.period == pytest.approx(0.0627730, abs=1e-4 * EPS)
    assert est.period == pytest.approx(period_quadrature(0.5, 0.0, EPS), abs=1e-4 * EPS)
    first, third = est.extremum_times
    assert third - first == est.period


def test_detect_period_origin(cubic_ode):
    rec = _record(cubic_ode, 0.0, 0.0)
    with pytest.raises(NoPeriodDetected):
        detect_period(rec, 0)
    assert np.isnan(detect_periods(rec).periods[0])


def test_detect_period_translation_invariant(cubic_ode):
    rec = _record(cubic_ode, [0.5, 0.1], [0.2, -0.3])
    for shift in (0.0, 3.25, 1e3):
        scan = detect_periods(rec)
        moved = detect_periods(rec.shifted(shift))
        np.testing.assert_allclose(moved.periods, scan.periods, atol=1e-14 * max(1.0, shift) * 1e2)
        np.testing.assert_allclose(moved.first, scan.first + shift, rtol=1e-14)


def test_detect_period_time_independent(cubic_ode):
    ens = sample_initial(100, seed=3)
    _, rec0 = advance_fine(ens, 1.6 * TWO_PI * EPS, cubic_ode, record=True)
    later, _ = advance_fine(ens, 5.0, cubic_ode)
    _, rec1 = advance_fine(later, 1.6 * TWO_PI * EPS, cubic_ode, record=True)
    d = np.abs(detect_periods(rec1).periods - detect_periods(rec0).periods)
    assert d.max() < 1e-3 * EPS


def test_sign_change_counted_once_at_exact_zero():
    t = np.arange(8.0)
    v = np.array([[1.0], [0.0], [-1.0], [0.0], [1.0], [0.0], [-1.0], [-1.0]])
    rec = TrajectoryRecord(t, np.zeros_like(v), v, 1.0)
    est = detect_period(rec, 0)
    assert est.extremum_times == (1.0, 5.0)


def test_interpolation_node_exact_and_quadratic():
    t = np.linspace(0.0, 1.0, 11)
    quad = 3 * t**2 - 2 * t + 0.5
    rec = TrajectoryRecord(t, quad[:, None], (t**2)[:, None], 0.1)
    assert interpolate_state(rec, 0, t[4]) == (quad[4], t[4] ** 2)
    for ts in (0.0, 0.03, 0.47, 0.55, 0.99, 1.0):
        s = interpolate_state(rec, 0, ts)
        assert s.r == pytest.approx(3 * ts**2 - 2 * ts + 0.5, abs=1e-14)
        assert s.v == pytest.approx(ts**2, abs=1e-14)
    with pytest.raises(DomainError):
        interpolate_state(rec, 0, 1.01)


def test_interpolation_mid_substep(zero_ode):
    rec = _record(zero_ode, [1.0, 0.3], [0.0, -0.7], horizon=4 * H)
    t = 1.5 * H
    for i, (r0, v0) in enumerate([(1.0, 0.0), (0.3, -0.7)]):
        s = interpolate_state(rec, i, t)
        exact = rotation_apply(t, TWO_PI * EPS, r0, v0)
        bound = (H / EPS) ** 3 / 8 * math.hypot(r0, v0)
        assert math.hypot(s.r - exact[0], s.v - exact[1]) <= bound


def test_threaded_matches_serial(cubic_ode):
    ens = sample_initial(64, seed=4)
    a, ra = advance_fine(ens, 0.2, cubic_ode, record=True)
    b, rb = advance_fine(ens, 0.2, cubic_ode, record=True, threads=3)
    np.testing.assert_array_equal(a.r, b.r)
    np.testing.assert_array_equal(ra.v, rb.v)


def test_poisson_lockstep_stages():
    ode = CharacteristicODE(EPS, PoissonField(GridSpec(2.0, 32)))
    ens = sample_initial(100, seed=5)
    rk4_substep(ens, H, ode)
    assert ode.field.solves == 4
    frozen = CharacteristicODE(EPS, PoissonField(GridSpec(2.0, 32)), frozen_field=True)
    rk4_substep(ens, H, frozen)
    assert frozen.field.solves == 1
