import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gemsim import memory as m
from gemsim.errors import ConfigurationError, FitError, InvalidParameterError, StepSizeError

FAST = m.GemConfig(coupling_strength=5e6, gradient_eta=2e6, grid_z=64)


def fast_run(config=FAST, pulse=None, storage=2e-6, **kw):
    pulse = pulse or m.gaussian_pulse(1e-6, 5e-6)
    return m.run_protocol(config, pulse, m.storage_schedule(pulse.end, storage, recall_duration=14e-6), **kw)


def ideal(config):
    return (1 - math.exp(-2 * math.pi * config.optical_depth_parameter())) ** 2


# -- pulses -------------------------------------------------------------------


@pytest.mark.parametrize("pulse", [m.gaussian_pulse(0.5e-6, 3e-6), m.rising_exponential_pulse(0.271e-6, 4e-6, span=8)])
def test_pulses_have_unit_energy(pulse):
    t = np.linspace(pulse.start, pulse.end, 200001)
    assert np.trapezoid(np.abs(pulse(t)) ** 2, t) == pytest.approx(1.0, rel=1e-6)


def test_gaussian_spectral_width():
    # transform limit of a Gaussian intensity: FWHM_f = 2 ln 2 / (pi FWHM_t)
    p = m.gaussian_pulse(1e-6, 5e-6)
    assert p.spectral_width == pytest.approx(2 * math.log(2) / (math.pi * 1e-6), rel=1e-3)


def test_pulse_rejects_bad_ratio():
    with pytest.raises(InvalidParameterError):
        m.gaussian_pulse(1e-6, 5e-6, bandwidth_ratio=0.0)


# -- schedules ----------------------------------------------------------------


def test_schedule_layout():
    s = m.storage_schedule(2e-6, 4e-6, recall_duration=3e-6, switch_duration=1e-6, echo_delay=0.5e-6)
    assert s.decay_origin == 2e-6
    assert s.control(1e-6) and not s.control(3e-6) and s.control(6.5e-6)
    assert s.gradient(1e-6) == 1 and s.gradient(6.5e-6) == -1
    w = s.read_windows()
    assert w["reported"] == (6e-6, 9e-6)
    flip = s.events[2].time
    # flip centred so the last-written component rephases echo_delay after control-on
    assert flip + 0.5e-6 == pytest.approx(0.5 * (2e-6 + 6e-6 + 0.5e-6))


def test_gradient_ramp_is_linear():
    s = m.TimingSchedule([(0.0, 1, True), (1.0, -1, True)], gradient_switch_duration=0.5)
    assert s.gradient(1.25) == pytest.approx(0.0)
    assert s.gradient(2.0) == -1


@pytest.mark.parametrize(
    "events",
    [[], [(0.0, -1, True)], [(0.0, 1, False)], [(0.0, 1, True), (0.0, -1, True)], [(0.0, 1, True), (1.0, 2, True)]],
)
def test_schedule_validation(events):
    with pytest.raises(ConfigurationError):
        m.TimingSchedule(events)


def test_storage_below_minimum_rejected():
    with pytest.raises(ConfigurationError):
        m.storage_sweep(FAST, m.gaussian_pulse(1e-6, 5e-6), [3e-6])


def test_oversized_step_rejected():
    with pytest.raises(StepSizeError):
        m.integrate(FAST, m.TimingSchedule([(0.0, 1, True)]), lambda t: 0j, 1e-6, dt=1e-7)


def test_config_validation():
    with pytest.raises(InvalidParameterError):
        m.GemConfig(1e6, 1e6, grid_z=10)
    with pytest.raises(InvalidParameterError):
        m.GemConfig(1e6, 1e6, decoherence_exponent=3)


# -- dynamics -----------------------------------------------------------------


@pytest.mark.parametrize("g", [2e6, 5e6, 1e7])
def test_ideal_recall_matches_analytic_efficiency(g):
    cfg = m.GemConfig(coupling_strength=g, gradient_eta=2e6, grid_z=128)
    r = fast_run(cfg)
    assert r.efficiency_upper == pytest.approx(ideal(cfg), abs=5e-5)


def test_evolve_matches_integrate():
    sched = m.TimingSchedule([(0.0, 1, True)])
    pulse = m.gaussian_pulse(1e-6, 5e-6)
    dt = FAST.default_dt()
    state = m.GemState.empty(FAST.grid_z)
    for _ in range(20):
        state = m.evolve(state, FAST, sched, dt, pulse)
    traj = m.integrate(FAST, sched, pulse, 20 * dt, dt=dt)
    np.testing.assert_allclose(state.spinwave, traj.final_state.spinwave, rtol=1e-10, atol=1e-14)


@settings(max_examples=5, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(0.0, 2 * math.pi))
def test_linearity(amplitude, phase):
    base = fast_run()
    c = amplitude * complex(math.cos(phase), math.sin(phase))
    scaled = fast_run(pulse=m.gaussian_pulse(1e-6, 5e-6).scaled(c))
    np.testing.assert_allclose(scaled.output_power, amplitude**2 * base.output_power, rtol=1e-9, atol=1e-12)
    assert scaled.efficiency_reported == pytest.approx(base.efficiency_reported, rel=1e-9)


@settings(max_examples=4, deadline=None)
@given(st.floats(0.0, 3e-6))
def test_time_translation_invariance(shift):
    base = fast_run()
    moved = fast_run(pulse=m.gaussian_pulse(1e-6, 5e-6 + shift))
    assert moved.efficiency_upper == pytest.approx(base.efficiency_upper, rel=1e-4)


def test_efficiency_grows_with_coupling():
    effs = [fast_run(m.GemConfig(g, 2e6, grid_z=64)).efficiency_upper for g in (1e6, 3e6, 6e6)]
    assert effs == sorted(effs)


def test_efficiency_falls_with_storage_time_under_decoherence():
    cfg = m.GemConfig(5e6, 2e6, grid_z=64, decoherence_rate=5e4, decoherence_exponent=2)
    effs = [fast_run(cfg, storage=s).efficiency_upper for s in (2e-6, 6e-6, 12e-6)]
    assert effs == sorted(effs, reverse=True)


@pytest.mark.parametrize("p", [1, 2])
def test_stored_energy_follows_decay_law_while_control_off(p):
    rate = 1 / 8e-6
    cfg = m.GemConfig(5e6, 2e6, grid_z=64, decoherence_rate=rate, decoherence_exponent=p)
    pulse = m.gaussian_pulse(1e-6, 5e-6)
    sched = m.storage_schedule(pulse.end, 10e-6, recall_duration=3e-6)
    t0 = sched.decay_origin
    traj = m.integrate(cfg, sched, pulse, t0 + 9e-6)
    t1, t2 = t0 + 2e-6, t0 + 8e-6
    e1, e2 = np.interp([t1, t2], traj.times, traj.stored)
    expected = math.exp(-((rate * (t2 - t0)) ** p) + (rate * (t1 - t0)) ** p)
    assert e2 / e1 == pytest.approx(expected, rel=1e-6)


def test_bookkeeping_and_window_ordering():
    cfg = m.GemConfig(5e6, 2e6, grid_z=64, decoherence_rate=5e4, decoherence_exponent=2)
    r = fast_run(cfg)
    assert r.bookkeeping_error < 1e-3
    lo = m.recall_window(r)
    r = r.with_lower_window(lo)
    assert r.efficiency_lower <= r.efficiency_reported <= r.efficiency_upper


def test_bandwidth_ratio_overrides_gradient():
    p = m.gaussian_pulse(1e-6, 5e-6, bandwidth_ratio=0.25)
    assert m.effective_bandwidth(FAST, p) == pytest.approx(p.spectral_width / 0.25)
    assert fast_run(pulse=p).bandwidth == pytest.approx(p.spectral_width / 0.25)


def test_trace_dedupes_repeated_times():
    r = fast_run()
    t, p = r.trace()
    assert np.all(np.diff(t) > 0)
    assert len(t) < len(r.times)


def test_recalled_fraction_time_is_monotone():
    r = fast_run()
    ts = [r.recalled_fraction_time(f) for f in (0.1, 0.5, 0.9)]
    assert ts == sorted(ts)
    lo, hi = r.windows["reported"]
    assert lo <= ts[0] and ts[-1] <= hi


def test_temporal_convergence_order():
    cfg = m.GemConfig(3e6, 1e6, grid_z=64)
    order = m.temporal_convergence_order(cfg, m.gaussian_pulse(1e-6, 4e-6), 8e-6, 600)
    assert order == pytest.approx(4.0, abs=0.3)


# -- lifetime fitting -----------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(st.floats(0.3, 0.95), st.floats(5e-6, 50e-6), st.sampled_from([1, 2]))
def test_fit_recovers_exact_decay(eta0, tau, p):
    t = np.array([4e-6, 9e-6, 13e-6, 17e-6, 25e-6])
    y = eta0 * np.exp(-((t / tau) ** p))
    fit = m.fit_decay(list(zip(t, y)))
    assert fit.p == p
    assert fit.eta0 == pytest.approx(eta0, rel=1e-5)
    assert fit.tau == pytest.approx(tau, rel=1e-5)
    assert fit.max_abs_residual < 1e-7


def test_fit_on_reported_values_prefers_gaussian_decay():
    # reported (storage time, efficiency) triple
    fit = m.fit_decay([(4e-6, 0.84), (13e-6, 0.57), (17e-6, 0.40)])
    assert fit.p == 2
    assert fit.max_abs_residual < 0.03
    assert 13e-6 < m.threshold_crossing(fit, 0.5, 4e-6, 17e-6) < 17e-6


def test_fit_without_decay():
    fit = m.fit_decay([(1e-6, 0.5), (2e-6, 0.5), (3e-6, 0.5)])
    assert fit.tau == m.TAU_CAP and fit.eta0 == pytest.approx(0.5)


@pytest.mark.parametrize("data", [[(1e-6, 0.5)], [(1e-6, 0.5), (1e-6, 0.4)], [(1e-6, math.nan), (2e-6, 0.4)],
                                  [(-1e-6, 0.5), (2e-6, 0.4)]])
def test_fit_rejects_bad_data(data):
    with pytest.raises(FitError):
        m.fit_decay(data)


def test_threshold_crossing():
    f = lambda t: math.exp(-t)
    assert m.threshold_crossing(f, 0.5, 0.0, 2.0) == pytest.approx(math.log(2))
    with pytest.raises(ConfigurationError):
        m.threshold_crossing(f, 0.01, 0.0, 2.0)
