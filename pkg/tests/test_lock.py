import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gemsim import lock
from gemsim.errors import InvalidParameterError

PARAMS = lock.LockParams()


def state_after(prev, new, step=1e4):
    s = lock.LockState(0.0, step, (prev,), gain=PARAMS.gain, step_min=PARAMS.step_min, step_max=PARAMS.step_max)
    return lock.phd_step(s, new)


@given(st.floats(0, 1e4), st.floats(0, 1e4), st.sampled_from([-1.0, 1.0]))
def test_sign_rule(prev, new, sign):
    out = state_after(prev, new, sign * 1e4)
    expected = sign if new >= prev else -sign
    assert np.sign(out.step) == expected
    assert out.offset == out.step


@given(st.floats(0, 1e4), st.floats(0, 1e4))
def test_step_clamped_and_proportional(prev, new):
    out = state_after(prev, new)
    size = abs(out.step)
    assert PARAMS.step_min <= size <= PARAMS.step_max
    raw = PARAMS.gain * abs(new - prev)
    if PARAMS.step_min < raw < PARAMS.step_max:
        assert size == pytest.approx(raw)


def test_first_observation_takes_seed_step():
    s = lock.LockState(5.0, -2e4)
    out = lock.phd_step(s, 100.0)
    assert out.step == -2e4 and out.offset == 5.0 - 2e4


def test_history_is_bounded():
    s = lock.LockState(0.0, 1e4, depth=3)
    for c in range(10):
        s = lock.phd_step(s, float(c))
    assert len(s.history) == 3


def test_random_seed_step_sign_depends_on_rng():
    signs = {np.sign(lock.LockState.start(0.0, PARAMS, np.random.default_rng(k)).step) for k in range(20)}
    assert signs == {-1.0, 1.0}


def test_landscape_lorentzian():
    land = lock.ResonanceLandscape.from_cavity(1e5)
    assert land.linewidth == pytest.approx(120.8e6 / 181)
    assert lock.rate_at(land, land.linewidth / 2, 0.0) == pytest.approx(5e4)
    moving = lock.ResonanceLandscape(1e5, 1e6, drift_offset=1e3, drift_rate=2e3)
    assert moving.peak(2.0) == pytest.approx(5e3)


def test_noise_free_static_lock_converges():
    land = lock.ResonanceLandscape.from_cavity(3e5, drift_offset=4e5)
    trace = lock.simulate_lock(land, PARAMS, 400, seed=0, noise=False)
    # the lock point dithers around the peak in step_min strides
    assert abs(trace.dither_center(100) - trace.peak[-1]) <= PARAMS.step_min
    assert np.max(np.abs(trace.error[-100:])) <= 2 * PARAMS.step_min
    assert not trace.capture_losses


def test_simulation_deterministic():
    land = lock.ResonanceLandscape.from_cavity(3e5, drift_rate=5e4)
    a = lock.simulate_lock(land, PARAMS, 500, seed=3)
    b = lock.simulate_lock(land, PARAMS, 500, seed=3)
    np.testing.assert_array_equal(a.offset, b.offset)
    np.testing.assert_array_equal(a.counts, b.counts)


def test_capture_loss_logged_once_per_excursion():
    # a peak that jumps far away between updates
    land = lock.ResonanceLandscape.from_cavity(3e5, drift=lambda t: np.where(np.asarray(t) < 0.5, 0.0, 5e7))
    trace = lock.simulate_lock(land, PARAMS, 200, seed=0)
    assert len(trace.capture_losses) == 1
    assert trace.capture_losses[0][0] >= 0.5


@pytest.mark.parametrize("kw", [dict(n_cycles=0), dict(step_min=0.0), dict(step_min=2e5), dict(initial_step=1.0)])
def test_param_validation(kw):
    with pytest.raises(InvalidParameterError):
        lock.LockParams(**kw)


def test_zero_seed_step_rejected():
    with pytest.raises(InvalidParameterError):
        lock.LockState(0.0, 0.0)
