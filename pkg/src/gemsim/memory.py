"""
One-dimensional gradient echo memory in the adiabatically eliminated Raman limit.

The spin wave ``sigma(z, t)`` and the slowly varying probe envelope
``E(z, t)`` obey::

    d sigma / dt = -(gamma(t) + i delta(z, t)) sigma + i g c(t) E
    d E / dz     = i N c(t) sigma

with ``z`` the position along the cell normalised to [0, 1], time taken in the
moving frame of the probe, ``c(t)`` the control gate and
``delta(z, t) = 2 pi (s(t) B (z - 1/2) + Delta2)``.  ``B = |eta| L`` is the
memory bandwidth in Hz and ``s(t)`` in [-1, 1] the (ramped) gradient state.
Only the product ``g N`` (``coupling_strength``) enters the dynamics; it is
split symmetrically so that ``int |sigma|^2 dz`` is the stored energy and the
bookkeeping ``input = output + decayed + stored`` holds exactly in the
continuum limit.

The spin wave is integrated with classical RK4 (method of lines); the field is
rebuilt at every stage by cumulative trapezoidal quadrature along ``z``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from .errors import ConfigurationError, DivergenceError, InvalidParameterError, StepSizeError

TWO_PI = 2.0 * math.pi

# dt * 2 pi * B must stay below this (phase slip per step at the band edge)
MAX_PHASE_PER_STEP = 0.1
# dt * coupling_strength must stay inside the RK4 stability region with margin
MAX_COUPLING_PER_STEP = 1.0


# =============================================================================
# Configuration
# =============================================================================


@dataclass(frozen=True)
class GemConfig:
    """Physical and numerical parameters of the memory.

    ``raman_detuning`` and ``hyperfine_splitting`` are metadata: the
    adiabatically eliminated model only sees them through
    ``coupling_strength``.
    """

    coupling_strength: float  # g*N, s^-1
    gradient_eta: float  # Hz/m
    length: float = 1.0  # m
    grid_z: int = 256
    two_photon_detuning: float = 0.0  # Hz
    decoherence_rate: float = 0.0  # 1/tau, s^-1
    decoherence_exponent: int = 1
    dt: Optional[float] = None  # s; None picks the largest admissible step
    raman_detuning: float = 804e6
    hyperfine_splitting: float = 6.8e9

    def __post_init__(self):
        if self.grid_z < 64:
            raise InvalidParameterError(f"grid_z must be >= 64, got {self.grid_z}")
        if self.coupling_strength < 0:
            raise InvalidParameterError("coupling_strength must be >= 0")
        if self.decoherence_rate < 0:
            raise InvalidParameterError("decoherence_rate must be >= 0")
        if self.decoherence_exponent not in (1, 2):
            raise InvalidParameterError("decoherence_exponent must be 1 or 2")
        if self.length <= 0:
            raise InvalidParameterError("length must be positive")
        if self.dt is not None and self.dt <= 0:
            raise InvalidParameterError("dt must be positive")

    @property
    def bandwidth(self) -> float:
        """Memory bandwidth |eta| L in Hz."""
        return abs(self.gradient_eta) * self.length

    def with_bandwidth(self, bandwidth_hz: float) -> "GemConfig":
        sign = -1.0 if self.gradient_eta < 0 else 1.0
        return replace(self, gradient_eta=sign * bandwidth_hz / self.length)

    def optical_depth_parameter(self, bandwidth_hz: Optional[float] = None) -> float:
        """beta = gN / (2 pi B); ideal symmetric recall is (1 - exp(-2 pi beta))^2."""
        bw = self.bandwidth if bandwidth_hz is None else bandwidth_hz
        return self.coupling_strength / (TWO_PI * bw)

    def default_dt(self, bandwidth_hz: Optional[float] = None) -> float:
        bw = self.bandwidth if bandwidth_hz is None else bandwidth_hz
        limits = [0.5 * MAX_PHASE_PER_STEP / (TWO_PI * max(bw, 1e-300) + TWO_PI * abs(self.two_photon_detuning))]
        if self.coupling_strength > 0:
            limits.append(0.5 * MAX_COUPLING_PER_STEP / self.coupling_strength)
        return min(limits)


@dataclass(frozen=True)
class ScheduleEvent:
    time: float
    gradient_sign: int
    control: bool


@dataclass(frozen=True)
class TimingSchedule:
    """Gradient-flip and control-gate events.

    Each event sets the control gate instantly and starts a linear ramp of
    the gradient state from its current value to ``gradient_sign`` lasting
    ``gradient_switch_duration``.
    """

    events: tuple
    gradient_switch_duration: float = 1e-6

    def __post_init__(self):
        events = tuple(e if isinstance(e, ScheduleEvent) else ScheduleEvent(*e) for e in self.events)
        object.__setattr__(self, "events", events)
        if not events:
            raise ConfigurationError("schedule needs at least one event")
        first = events[0]
        if first.gradient_sign != 1 or not first.control:
            raise ConfigurationError("first event must establish write mode (+1, control on)")
        times = np.array([e.time for e in events])
        if np.any(np.diff(times) <= 0):
            raise ConfigurationError("event times must be strictly increasing")
        for e in events:
            if e.gradient_sign not in (1, -1):
                raise ConfigurationError(f"gradient_sign must be +1 or -1, got {e.gradient_sign}")
        if self.gradient_switch_duration < 0:
            raise ConfigurationError("gradient_switch_duration must be >= 0")
        # gradient value at each event time, for ramps that start mid-ramp
        starts = [float(first.gradient_sign)]
        for prev_i in range(len(events) - 1):
            starts.append(self._ramp_value(prev_i, events[prev_i + 1].time, starts))
        object.__setattr__(self, "_starts", tuple(starts))
        object.__setattr__(self, "_times", times)

    def _ramp_value(self, i, t, starts):
        e = self.events[i]
        s0 = starts[i]
        ramp = self.gradient_switch_duration
        if ramp == 0 or t - e.time >= ramp:
            return float(e.gradient_sign)
        frac = (t - e.time) / ramp
        return s0 + (e.gradient_sign - s0) * frac

    def _index(self, t: float) -> int:
        return int(np.searchsorted(self._times, t, side="right")) - 1

    def gradient(self, t: float) -> float:
        i = self._index(t)
        if i < 0:
            return float(self.events[0].gradient_sign)
        return self._ramp_value(i, t, self._starts)

    def control(self, t: float) -> bool:
        i = self._index(t)
        if i < 0:
            return self.events[0].control
        return self.events[i].control

    @property
    def decay_origin(self) -> float:
        """Start of storage: the first control-off event (the herald trigger)."""
        for e in self.events:
            if not e.control:
                return e.time
        return self.events[0].time

    @property
    def end_time(self) -> float:
        return self.events[-1].time + self.gradient_switch_duration

    def read_windows(self) -> dict:
        """Upper and reported integration windows of the first read cycle.

        upper: from the start of the first flip to read mode until the flip
        back to write mode.  reported: the part of that interval where the
        gradient is fully reversed and the control is on.
        """
        flip = back = None
        for e in self.events:
            if flip is None and e.gradient_sign == -1:
                flip = e.time
            elif flip is not None and e.gradient_sign == 1:
                back = e.time
                break
        if flip is None:
            raise ConfigurationError("schedule contains no flip to read mode")
        if back is None:
            back = math.inf
        start = flip + self.gradient_switch_duration
        on = [e.time for e in self.events if flip <= e.time < back and e.control]
        if not self.control(flip):
            reported_start = max(start, on[0]) if on else back
        else:
            reported_start = start
        return {"upper": (flip, back), "reported": (min(reported_start, back), back)}


def storage_schedule(
    write_end: float,
    storage_time: float,
    *,
    recall_duration: float = 6e-6,
    switch_duration: float = 1e-6,
    echo_delay: float = 0.0,
) -> TimingSchedule:
    """Write -> storage -> recall -> write sequence for one heralded photon.

    The control is gated off at ``write_end`` (the herald trigger) and back on
    ``storage_time`` later.  The gradient flip is timed so the spin-wave
    component written last rephases ``echo_delay`` after the control returns.
    """
    if storage_time < switch_duration:
        raise ConfigurationError("storage time must be at least the gradient switch duration")
    t_on = write_end + storage_time
    t_mid = 0.5 * (write_end + t_on + echo_delay)
    t_flip = t_mid - 0.5 * switch_duration
    if t_flip <= write_end:
        raise ConfigurationError("gradient flip would start before the write phase ends")
    if t_flip + switch_duration > t_on + 1e-15:
        raise ConfigurationError("gradient ramp must finish before the control returns")
    if recall_duration <= 0:
        raise ConfigurationError("recall_duration must be positive")
    events = (
        ScheduleEvent(0.0, 1, True),
        ScheduleEvent(write_end, 1, False),
        ScheduleEvent(t_flip, -1, False),
        ScheduleEvent(t_on, -1, True),
        ScheduleEvent(t_on + recall_duration, 1, True),
    )
    return TimingSchedule(events, switch_duration)


# =============================================================================
# Input pulses
# =============================================================================


@dataclass(frozen=True)
class PulseProfile:
    """Input envelope (amplitude, unit energy) supported on [start, end]."""

    envelope: Callable[[np.ndarray], np.ndarray]
    duration_fwhm: float
    start: float
    end: float
    bandwidth_ratio: Optional[float] = None
    spectral_width: float = field(default=0.0)  # Hz, FWHM of the power spectrum
    knots: tuple = ()  # times where the envelope is not smooth

    def __post_init__(self):
        if self.bandwidth_ratio is not None and self.bandwidth_ratio <= 0:
            raise InvalidParameterError("bandwidth_ratio must be positive")
        if self.spectral_width <= 0:
            object.__setattr__(self, "spectral_width", _power_spectrum_fwhm(self))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.where((t >= self.start) & (t <= self.end), self.envelope(t), 0.0)
        return out.astype(complex) if np.ndim(out) else complex(out)

    def with_ratio(self, ratio: Optional[float]) -> "PulseProfile":
        return replace(self, bandwidth_ratio=ratio)

    def scaled(self, amplitude: complex) -> "PulseProfile":
        env = self.envelope
        return replace(self, envelope=lambda t: amplitude * env(t))

    def conjugate(self) -> "PulseProfile":
        env = self.envelope
        return replace(self, envelope=lambda t: np.conj(env(t)))


def _power_spectrum_fwhm(pulse: PulseProfile, n: int = 1 << 18) -> float:
    t = np.linspace(pulse.start, pulse.end, 4096)
    dt = t[1] - t[0]
    amp = np.where((t >= pulse.start) & (t <= pulse.end), pulse.envelope(t), 0.0)
    spec = np.abs(np.fft.fftshift(np.fft.fft(amp, n))) ** 2
    freqs = np.fft.fftshift(np.fft.fftfreq(n, dt))
    half = spec.max() / 2
    above = np.nonzero(spec >= half)[0]
    lo, hi = above[0], above[-1]
    # linear interpolation of the two half-maximum crossings
    f_lo = np.interp(half, [spec[lo - 1], spec[lo]], [freqs[lo - 1], freqs[lo]])
    f_hi = np.interp(half, [spec[hi + 1], spec[hi]], [freqs[hi + 1], freqs[hi]])
    return float(f_hi - f_lo)


def rising_exponential_pulse(
    duration_fwhm: float,
    cutoff_time: float,
    bandwidth_ratio: Optional[float] = None,
    span: float = 10.0,
    fall_time: Optional[float] = None,
) -> PulseProfile:
    """Exponentially rising intensity ending in a sharp fall at ``cutoff_time``.

    ``span`` is the number of intensity e-folding times kept before the
    cutoff.  The fall is a half-cosine lasting ``fall_time`` (default 5% of
    the FWHM) so the integrator sees a resolved edge instead of a jump.
    """
    if duration_fwhm <= 0:
        raise InvalidParameterError("duration_fwhm must be positive")
    tau = duration_fwhm / math.log(2.0)
    if fall_time is None:
        fall_time = 0.05 * duration_fwhm
    start = cutoff_time - span * tau
    if start < 0:
        raise InvalidParameterError("pulse would start before t = 0; move the cutoff later")
    end = cutoff_time + fall_time

    def shape(t):
        t = np.asarray(t, dtype=float)
        rise = np.exp(0.5 * (np.minimum(t, cutoff_time) - cutoff_time) / tau)
        if fall_time > 0:
            x = np.clip((t - cutoff_time) / fall_time, 0.0, 1.0)
            rise = rise * np.cos(0.5 * math.pi * x)
        return rise

    grid = np.linspace(start, end, 20001)
    norm = 1.0 / math.sqrt(trapezoid(shape(grid) ** 2, grid))

    def envelope(t):
        return norm * shape(t)

    return PulseProfile(envelope, duration_fwhm, start, end, bandwidth_ratio, knots=(start, cutoff_time, end))


def gaussian_pulse(duration_fwhm: float, center: float, bandwidth_ratio: Optional[float] = None) -> PulseProfile:
    """Gaussian intensity profile, truncated at +-4 FWHM."""
    sig_i = duration_fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))  # intensity sigma
    amp = (2.0 * math.pi * sig_i**2) ** -0.25

    def envelope(t):
        t = np.asarray(t, dtype=float)
        return amp * np.exp(-((t - center) ** 2) / (4.0 * sig_i**2))

    start = center - 4.0 * duration_fwhm
    if start < 0:
        raise InvalidParameterError("pulse would start before t = 0; move the center later")
    end = center + 4.0 * duration_fwhm
    return PulseProfile(envelope, duration_fwhm, start, end, bandwidth_ratio, knots=(start, end))


# =============================================================================
# State and integration
# =============================================================================


@dataclass
class GemState:
    field: np.ndarray  # E(z) at ``time``
    spinwave: np.ndarray  # sigma(z) at ``time``
    time: float = 0.0

    @classmethod
    def empty(cls, grid_z: int, time: float = 0.0) -> "GemState":
        return cls(np.zeros(grid_z, complex), np.zeros(grid_z, complex), time)

    def stored_energy(self) -> float:
        return _trapz_abs2(self.spinwave)


def _trapz_abs2(x: np.ndarray) -> float:
    a = np.abs(x) ** 2
    h = 1.0 / (len(x) - 1)
    return float(h * (a.sum() - 0.5 * (a[0] + a[-1])))


class _Dynamics:
    """Right-hand side for one (config, schedule, bandwidth) combination."""

    def __init__(self, config: GemConfig, schedule: TimingSchedule, bandwidth_hz: float, input_field):
        self.n = config.grid_z
        self.h = 1.0 / (self.n - 1)
        z = np.linspace(0.0, 1.0, self.n)
        self.profile = TWO_PI * bandwidth_hz * (z - 0.5)
        self.offset = TWO_PI * config.two_photon_detuning
        self.g = math.sqrt(config.coupling_strength)
        self.rate = config.decoherence_rate
        self.p = config.decoherence_exponent
        self.t0 = schedule.decay_origin
        self.schedule = schedule
        self.input_field = input_field if input_field is not None else (lambda t: 0j)

    def decay(self, t: float, after: bool = True) -> float:
        """Amplitude damping rate; energy decays as exp(-(rate (t - t0))^p).

        ``after`` selects the right limit at ``t0`` (matters for p = 1).
        """
        if self.rate == 0 or t < self.t0 or (t == self.t0 and not after):
            return 0.0
        if self.p == 1:
            return 0.5 * self.rate
        return 0.5 * self.p * self.rate**self.p * (t - self.t0) ** (self.p - 1)

    def field(self, t: float, sigma: np.ndarray, gate: bool) -> np.ndarray:
        e_in = complex(self.input_field(t))
        if not gate:
            return np.full(self.n, e_in)
        cum = np.empty(self.n, complex)
        cum[0] = 0.0
        np.cumsum(0.5 * self.h * (sigma[1:] + sigma[:-1]), out=cum[1:])
        return e_in + 1j * self.g * cum

    def rhs(self, t: float, sigma: np.ndarray, gate: bool, after: bool = True) -> np.ndarray:
        delta = self.schedule.gradient(t) * self.profile + self.offset
        d = -(self.decay(t, after) + 1j * delta) * sigma
        if gate:
            d = d + 1j * self.g * self.field(t, sigma, True)
        return d

    def step(self, t: float, sigma: np.ndarray, dt: float, gate: Optional[bool] = None) -> np.ndarray:
        if gate is None:
            gate = self.schedule.control(t + 0.5 * dt)
        k1 = self.rhs(t, sigma, gate, True)
        k2 = self.rhs(t + 0.5 * dt, sigma + 0.5 * dt * k1, gate)
        k3 = self.rhs(t + 0.5 * dt, sigma + 0.5 * dt * k2, gate)
        k4 = self.rhs(t + dt, sigma + dt * k3, gate, False)
        return sigma + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def check_step(config: GemConfig, dt: float, bandwidth_hz: Optional[float] = None) -> None:
    bw = config.bandwidth if bandwidth_hz is None else bandwidth_hz
    phase = dt * TWO_PI * (bw + abs(config.two_photon_detuning))
    if phase >= MAX_PHASE_PER_STEP:
        raise StepSizeError(f"dt={dt:.3g} s slips {phase:.3g} rad per step at the band edge (limit {MAX_PHASE_PER_STEP})")
    if dt * config.coupling_strength >= MAX_COUPLING_PER_STEP:
        raise StepSizeError(f"dt={dt:.3g} s does not resolve coupling_strength={config.coupling_strength:.3g} s^-1")


def evolve(
    state: GemState,
    config: GemConfig,
    schedule: TimingSchedule,
    dt: float,
    input_field: Optional[Callable[[float], complex]] = None,
    bandwidth_hz: Optional[float] = None,
) -> GemState:
    """Advance the field and spin wave by one RK4 step of length ``dt``."""
    bw = config.bandwidth if bandwidth_hz is None else bandwidth_hz
    check_step(config, dt, bw)
    dyn = _Dynamics(config, schedule, bw, input_field)
    sigma = dyn.step(state.time, state.spinwave, dt)
    if not np.all(np.isfinite(sigma)):
        raise DivergenceError(f"non-finite spin wave at t={state.time + dt:.6g} s")
    t = state.time + dt
    return GemState(dyn.field(t, sigma, schedule.control(t)), sigma, t)


@dataclass
class Trajectory:
    """Raw integrator output on the time grid."""

    times: np.ndarray
    output: np.ndarray  # complex E(z=1, t)
    input: np.ndarray  # complex E(z=0, t)
    stored: np.ndarray  # int |sigma|^2 dz
    decay_power: np.ndarray  # 2 gamma(t) int |sigma|^2 dz
    gradient: np.ndarray
    control: np.ndarray
    final_state: GemState


def _breakpoints(schedule: TimingSchedule, t_start: float, t_end: float, extra: Sequence[float] = ()) -> list:
    """Times where the right-hand side is not smooth: gate switches, ramp ends, pulse kinks."""
    pts = [t_start, t_end, schedule.decay_origin, *extra]
    for e in schedule.events:
        pts += [e.time, e.time + schedule.gradient_switch_duration]
    pts = sorted(p for p in pts if t_start <= p <= t_end)
    merged = [pts[0]]
    tol = 1e-12 * max(abs(t_end), abs(t_start), 1e-12)
    for p in pts[1:]:
        if p - merged[-1] > tol:
            merged.append(p)
    merged[-1] = t_end
    return merged


def integrate(
    config: GemConfig,
    schedule: TimingSchedule,
    input_field: Callable[[float], complex],
    t_end: float,
    *,
    t_start: float = 0.0,
    dt: Optional[float] = None,
    bandwidth_hz: Optional[float] = None,
    state: Optional[GemState] = None,
    breakpoints: Sequence[float] = (),
) -> Trajectory:
    """Integrate from ``t_start`` to ``t_end`` recording boundary fields every step.

    The interval is split at every schedule event and ramp end (plus any
    ``breakpoints``) and each piece gets its own uniform step no longer than
    ``dt``.  At a split the boundary values are recorded twice, as left and
    right limits, so jumps in the output field are integrated exactly.
    """
    bw = config.bandwidth if bandwidth_hz is None else bandwidth_hz
    if dt is None:
        dt = config.dt if config.dt is not None else config.default_dt(bw)
    check_step(config, dt, bw)
    dyn = _Dynamics(config, schedule, bw, input_field)
    sigma = np.zeros(config.grid_z, complex) if state is None else state.spinwave.copy()

    rows = []

    def record(t, gate, after):
        st = _trapz_abs2(sigma)
        rows.append(
            (
                t,
                dyn.field(t, sigma, gate)[-1],
                complex(dyn.input_field(t)),
                st,
                2.0 * dyn.decay(t, after) * st,
                schedule.gradient(t),
                gate,
            )
        )

    knots = _breakpoints(schedule, t_start, t_end, breakpoints)
    for a, b in zip(knots[:-1], knots[1:]):
        n = max(1, int(math.ceil((b - a) / dt - 1e-9)))
        h = (b - a) / n
        gate = schedule.control(0.5 * (a + b))
        record(a, gate, True)
        for k in range(n):
            t = a + k * h
            sigma = dyn.step(t, sigma, h, gate)
            if not np.isfinite(sigma).all():
                raise DivergenceError(
                    f"non-finite spin wave at t={t + h:.6g} s (dt={h:.3g}, grid_z={config.grid_z}, "
                    f"coupling={config.coupling_strength:.3g})"
                )
            if k < n - 1:
                record(a + (k + 1) * h, gate, True)
        record(b, gate, False)

    cols = list(zip(*rows))
    times = np.array(cols[0])
    final = GemState(dyn.field(t_end, sigma, schedule.control(t_end)), sigma, float(t_end))
    return Trajectory(
        times,
        np.array(cols[1], complex),
        np.array(cols[2], complex),
        np.array(cols[3]),
        np.array(cols[4]),
        np.array(cols[5]),
        np.array(cols[6], bool),
        final,
    )


# =============================================================================
# Protocol
# =============================================================================


@dataclass
class ProtocolResult:
    times: np.ndarray
    output_power: np.ndarray
    gradient: np.ndarray
    control: np.ndarray
    input_energy: float
    transmitted_energy: float
    recalled_energy: float
    decayed_energy: float
    residual_energy: float
    efficiency_upper: float
    efficiency_reported: float
    efficiency_lower: float
    windows: dict
    bandwidth: float  # Hz, memory bandwidth actually used
    output_field: np.ndarray = field(repr=False, default=None)
    reference: Optional["ProtocolResult"] = field(repr=False, default=None)  # run that set the lower window

    @property
    def bookkeeping_error(self) -> float:
        """Relative mismatch of input against everything it turned into."""
        total = self.transmitted_energy + self.recalled_energy + self.decayed_energy + self.residual_energy
        return abs(total - self.input_energy) / self.input_energy

    def window_energy(self, window) -> float:
        return _window_integral(self.times, self.output_power, window)

    def recalled_fraction_time(self, fraction: float, window: str = "reported") -> float:
        """Time at which ``fraction`` of the windowed recalled energy has emerged."""
        lo, hi = self.windows[window]
        cum = cumulative_trapezoid(self.output_power, self.times, initial=0.0)
        c_lo, c_hi = np.interp([lo, hi], self.times, cum)
        if c_hi <= c_lo:
            return math.nan
        mask = (self.times >= lo) & (self.times <= hi)
        t = np.concatenate([[lo], self.times[mask], [hi]])
        c = np.concatenate([[c_lo], cum[mask], [c_hi]])
        # cum is non-decreasing; pick the first crossing
        target = c_lo + fraction * (c_hi - c_lo)
        i = int(np.searchsorted(c, target, side="left"))
        i = min(max(i, 1), len(c) - 1)
        if c[i] == c[i - 1]:
            return float(t[i])
        return float(t[i - 1] + (target - c[i - 1]) * (t[i] - t[i - 1]) / (c[i] - c[i - 1]))

    def with_lower_window(self, window: Tuple[float, float], reference: Optional["ProtocolResult"] = None) -> "ProtocolResult":
        windows = dict(self.windows, lower=tuple(window))
        eff = self.window_energy(window) / self.input_energy
        return replace(self, windows=windows, efficiency_lower=eff, reference=reference)

    def trace(self, window: Optional[str] = None) -> Tuple[np.ndarray, np.ndarray]:
        """(time, output power) with one sample per time (right limits at jumps)."""
        t, p = self.times, self.output_power
        keep = np.concatenate([t[1:] != t[:-1], [True]])
        t, p = t[keep], p[keep]
        if window is not None:
            lo, hi = self.windows[window]
            mask = (t >= lo) & (t <= hi)
            t, p = t[mask], p[mask]
        return t, p

    def peak_power(self, window: str = "reported") -> float:
        lo, hi = self.windows[window]
        mask = (self.times >= lo) & (self.times <= hi)
        return float(self.output_power[mask].max()) if mask.any() else 0.0


def _window_integral(t: np.ndarray, y: np.ndarray, window) -> float:
    """Trapezoidal integral of ``y`` over ``window``; ``t`` may repeat at jumps."""
    lo, hi = window
    hi = min(hi, t[-1])
    lo = max(lo, t[0])
    if hi <= lo:
        return 0.0
    cum = cumulative_trapezoid(y, t, initial=0.0)
    c_lo, c_hi = np.interp([lo, hi], t, cum)
    return float(c_hi - c_lo)


def effective_bandwidth(config: GemConfig, pulse: PulseProfile) -> float:
    """Memory bandwidth in Hz; a pulse carrying a bandwidth ratio overrides the gradient."""
    if pulse.bandwidth_ratio is None:
        return config.bandwidth
    return pulse.spectral_width / pulse.bandwidth_ratio


def run_protocol(
    config: GemConfig,
    pulse: PulseProfile,
    schedule: TimingSchedule,
    *,
    lower_window: Optional[Sequence[float]] = None,
    settle_time: Optional[float] = None,
    dt: Optional[float] = None,
) -> ProtocolResult:
    """Write, store and recall ``pulse`` under ``schedule``.

    Efficiencies are windowed output energies divided by the input energy of
    a control-off reference run.  ``lower_window`` defaults to the reported
    window.
    """
    windows = schedule.read_windows()
    flip, back = windows["upper"]
    if pulse.end > flip:
        raise ConfigurationError("input pulse overlaps the gradient flip")
    if pulse.start < schedule.events[0].time:
        raise ConfigurationError("input pulse starts before the write phase")
    if math.isinf(back):
        raise ConfigurationError("schedule never returns to write mode")
    bw = effective_bandwidth(config, pulse)
    if bw <= 0:
        raise ConfigurationError("memory bandwidth must be positive during write/read")
    if settle_time is None:
        settle_time = schedule.gradient_switch_duration
    t_end = back + settle_time

    traj = integrate(config, schedule, pulse, t_end, dt=dt, bandwidth_hz=bw, breakpoints=pulse.knots)

    power = np.abs(traj.output) ** 2
    t = traj.times
    input_energy = no_memory_reference(pulse, t)
    recalled = _window_integral(t, power, (flip, back))
    total_out = float(trapezoid(power, t))
    decayed = float(trapezoid(traj.decay_power, t))
    residual = float(traj.stored[-1])
    if lower_window is None:
        lower_window = windows["reported"]
    windows = dict(windows, lower=tuple(lower_window))
    eff = {k: _window_integral(t, power, w) / input_energy for k, w in windows.items()}
    return ProtocolResult(
        times=t,
        output_power=power,
        gradient=traj.gradient,
        control=traj.control,
        input_energy=input_energy,
        transmitted_energy=total_out - recalled,
        recalled_energy=recalled,
        decayed_energy=decayed,
        residual_energy=residual,
        efficiency_upper=eff["upper"],
        efficiency_reported=eff["reported"],
        efficiency_lower=eff["lower"],
        windows=windows,
        bandwidth=bw,
        output_field=traj.output,
    )


def recall_window(result: ProtocolResult, threshold: float = 0.05, window: str = "reported") -> Tuple[float, float]:
    """Span of ``window`` where the recalled power exceeds ``threshold`` of its peak.

    Applied to a coherent-state run this gives the lower-bound window: the
    times at which that recall is actually seen.
    """
    t, p = result.trace(window)
    if p.size == 0 or p.max() <= 0:
        return result.windows[window]
    above = np.nonzero(p >= threshold * p.max())[0]
    return float(t[above[0]]), float(t[above[-1]])


def uniform_trace(result: ProtocolResult, times: np.ndarray) -> np.ndarray:
    """Output power resampled onto ``times`` (linear, right limits at jumps)."""
    t, p = result.trace()
    return np.interp(times, t, p, left=0.0, right=0.0)


def no_memory_reference(pulse: PulseProfile, times: np.ndarray) -> float:
    """Input energy seen through the cell with the control off throughout.

    With the Raman coupling gated off the medium is transparent, so the
    reference output equals the input sampled on the same time grid.
    """
    return float(trapezoid(np.abs(np.asarray(pulse(times))) ** 2, times))


# =============================================================================
# Storage-time behaviour
# =============================================================================

MIN_STORAGE_TIME = 4e-6  # s, shortest storage the herald relays allow
TAU_CAP = 1.0  # s, reported lifetime when the data show no decay


@dataclass(frozen=True)
class StorageTiming:
    """How a storage schedule is laid out around one heralded pulse."""

    recall_duration: float = 3e-6
    switch_duration: float = 1e-6
    echo_delay: float = 0.5e-6

    def schedule(self, write_end: float, storage_time: float) -> TimingSchedule:
        return storage_schedule(
            write_end,
            storage_time,
            recall_duration=self.recall_duration,
            switch_duration=self.switch_duration,
            echo_delay=self.echo_delay,
        )


def storage_sweep(
    config: GemConfig,
    pulse: PulseProfile,
    times: Sequence[float],
    timing: StorageTiming = StorageTiming(),
    *,
    lower_from: Optional[PulseProfile] = None,
    min_storage: float = MIN_STORAGE_TIME,
    dt: Optional[float] = None,
) -> list:
    """``run_protocol`` for each storage time; returns (time, ProtocolResult) pairs.

    With ``lower_from`` (normally the coherent-state pulse) that pulse is run
    too and its :func:`recall_window` becomes the lower-bound window; the
    run is kept as ``result.reference``.
    """
    out = []
    for t in times:
        if t < min_storage * (1 - 1e-12):
            raise ConfigurationError(f"storage time {t:.3g} s is below the minimum {min_storage:.3g} s")
        schedule = timing.schedule(pulse.end, t)
        res = run_protocol(config, pulse, schedule, dt=dt)
        if lower_from is not None:
            ref = run_protocol(config, lower_from, timing.schedule(lower_from.end, t), dt=dt)
            res = res.with_lower_window(recall_window(ref), ref)
        out.append((float(t), res))
    return out


def efficiency_vs_storage_time(
    config: GemConfig,
    pulse: PulseProfile,
    times: Sequence[float],
    timing: StorageTiming = StorageTiming(),
    *,
    window: str = "reported",
    lower_from: Optional[PulseProfile] = None,
    min_storage: float = MIN_STORAGE_TIME,
    dt: Optional[float] = None,
) -> list:
    """(storage time, efficiency) pairs for the chosen window."""
    attr = f"efficiency_{window}"
    runs = storage_sweep(config, pulse, times, timing, lower_from=lower_from, min_storage=min_storage, dt=dt)
    return [(t, getattr(r, attr)) for t, r in runs]


@dataclass(frozen=True)
class DecayFit:
    """eta(t) = eta0 exp(-(t / tau)^p)."""

    eta0: float
    tau: float
    p: int
    residuals: np.ndarray  # data - model, per point
    sse: float
    alternatives: dict = field(default_factory=dict, repr=False)  # p -> (eta0, tau, sse)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.eta0 * np.exp(-((t / self.tau) ** self.p))

    @property
    def max_abs_residual(self) -> float:
        return float(np.max(np.abs(self.residuals)))


def _fit_one(t: np.ndarray, y: np.ndarray, p: int):
    from scipy.optimize import curve_fit

    def model(tt, eta0, tau):
        return eta0 * np.exp(-((tt / tau) ** p))

    # log-linear start: ln y = ln eta0 - t^p / tau^p
    x = t**p
    slope, intercept = np.polyfit(x, np.log(np.clip(y, 1e-12, None)), 1)
    if slope >= 0:
        return None
    p0 = (math.exp(intercept), (-1.0 / slope) ** (1.0 / p))
    try:
        popt, _ = curve_fit(model, t, y, p0=p0, maxfev=20000)
    except RuntimeError:
        popt = p0
    eta0, tau = float(popt[0]), abs(float(popt[1]))
    res = y - model(t, eta0, tau)
    return eta0, tau, float(res @ res), res


def fit_decay(data: Sequence[Tuple[float, float]]) -> DecayFit:
    """Least-squares fit of eta0 exp(-(t/tau)^p) for p = 1 and 2, keeping the better one.

    Ties go to p = 1.  Data without any decay return ``tau = TAU_CAP`` and
    ``eta0`` equal to the mean efficiency.
    """
    from .errors import FitError

    arr = np.asarray(data, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 2:
        raise FitError("need at least two (time, efficiency) pairs")
    t, y = arr[:, 0], arr[:, 1]
    if not (np.isfinite(t).all() and np.isfinite(y).all()):
        raise FitError("non-finite data")
    if np.unique(t).size < 2:
        raise FitError("all data share one time; decay is undetermined")
    if np.any(t < 0):
        raise FitError("times must be non-negative")

    fits = {p: _fit_one(t, y, p) for p in (1, 2)}
    if all(f is None for f in fits.values()):
        eta0 = float(np.mean(y))
        res = y - eta0
        return DecayFit(eta0, TAU_CAP, 1, res, float(res @ res))
    best = min((p for p in fits if fits[p] is not None), key=lambda p: (fits[p][2], p))
    eta0, tau, sse, res = fits[best]
    alts = {p: f[:3] for p, f in fits.items() if f is not None}
    return DecayFit(eta0, min(tau, TAU_CAP), best, res, sse, alts)


def threshold_crossing(curve: Callable[[float], float], level: float, lo: float, hi: float) -> float:
    """Time where a decreasing efficiency curve falls through ``level`` (bisection)."""
    from scipy.optimize import brentq

    f_lo, f_hi = float(curve(lo)) - level, float(curve(hi)) - level
    if f_lo * f_hi > 0:
        raise ConfigurationError(f"level {level} is not crossed between {lo:.3g} and {hi:.3g} s")
    return float(brentq(lambda t: float(curve(t)) - level, lo, hi, xtol=1e-12))


# =============================================================================
# Calibration and solver checks
# =============================================================================


@dataclass(frozen=True)
class Calibration:
    coupling_strength: float
    decoherence_rate: float
    decoherence_exponent: int
    residuals: np.ndarray
    efficiencies: np.ndarray


def calibrate(
    config: GemConfig,
    pulse: PulseProfile,
    targets: Sequence[Tuple[float, float]],
    timing: StorageTiming = StorageTiming(),
    *,
    exponent: Optional[int] = None,
    initial: Tuple[float, float] = (5e6, 20e-6),
) -> Calibration:
    """Fit coupling_strength and the lifetime to (storage time, efficiency) targets.

    With ``exponent`` None both decay laws are tried and the lower squared
    error wins.
    """
    from scipy.optimize import least_squares

    times = [t for t, _ in targets]
    want = np.array([e for _, e in targets])
    best = None
    for p in (1, 2) if exponent is None else (exponent,):

        def resid(x, p=p):
            cfg = replace(config, coupling_strength=x[0] * 1e6, decoherence_rate=1.0 / (x[1] * 1e-6), decoherence_exponent=p)
            got = [e for _, e in efficiency_vs_storage_time(cfg, pulse, times, timing)]
            return np.array(got) - want

        x0 = [initial[0] * 1e-6, initial[1] * 1e6]
        sol = least_squares(resid, x0, bounds=([1e-3, 0.1], [1e3, 1e6]), diff_step=1e-3, xtol=1e-6)
        cost = float(sol.fun @ sol.fun)
        if best is None or cost < best[0]:
            best = (cost, p, sol)
    _, p, sol = best
    return Calibration(sol.x[0] * 1e6, 1.0 / (sol.x[1] * 1e-6), p, sol.fun, sol.fun + want)


def temporal_convergence_order(
    config: GemConfig,
    pulse: PulseProfile,
    t_end: float,
    n_steps: int,
    bandwidth_hz: Optional[float] = None,
) -> float:
    """Observed order of the time integrator from runs with n, 2n and 4n steps.

    The memory stays in write mode with the control on throughout, so the
    run has no switching and only the transmitted field is compared.
    """
    schedule = TimingSchedule((ScheduleEvent(0.0, 1, True),), 0.0)
    outs = []
    for k in (1, 2, 4):
        traj = integrate(config, schedule, pulse, t_end, dt=t_end / (n_steps * k), bandwidth_hz=bandwidth_hz)
        outs.append(traj.output[:: k][: n_steps + 1])
    e1 = np.max(np.abs(outs[0] - outs[1]))
    e2 = np.max(np.abs(outs[1] - outs[2]))
    return float(math.log2(e1 / e2))
