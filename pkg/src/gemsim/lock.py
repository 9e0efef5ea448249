"""
Drifting photon-pair generation peak and the dynamic-step dither lock.

The controller only sees averaged count rates.  After each averaging block
it compares the new mean with the previous one: on an increase it keeps
stepping the same way, on a decrease it reverses.  The step length is
proportional to the observed change and clamped to [step_min, step_max],
so it takes large strides on the flanks and dithers with step_min at the top.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Tuple

import numpy as np

from .errors import InvalidParameterError

PAIR_CAVITY_FSR = 120.8e6  # Hz
RED_FINESSE = 181.0
BLUE_FINESSE = 8.5


@dataclass(frozen=True)
class ResonanceLandscape:
    """Lorentzian count-rate peak whose centre moves as ``drift(t)``.

    A constant ``drift_rate`` (Hz/s) plus ``drift_offset`` covers the common
    case; pass ``drift`` for anything else.
    """

    peak_rate: float  # counts/s at the peak
    linewidth: float  # Hz, FWHM
    drift_offset: float = 0.0  # Hz
    drift_rate: float = 0.0  # Hz/s
    background_rate: float = 0.0  # counts/s independent of the offset
    drift: Optional[Callable[[float], float]] = None
    finesse_red: float = RED_FINESSE  # metadata
    finesse_blue: float = BLUE_FINESSE  # metadata

    def __post_init__(self):
        if self.peak_rate <= 0:
            raise InvalidParameterError("peak_rate must be positive")
        if self.linewidth <= 0:
            raise InvalidParameterError("linewidth must be positive")
        if self.background_rate < 0:
            raise InvalidParameterError("background_rate must be >= 0")

    @classmethod
    def from_cavity(cls, peak_rate: float, fsr: float = PAIR_CAVITY_FSR, finesse: float = RED_FINESSE, **kw):
        """Linewidth from the narrower (red) resonance, fsr / finesse."""
        return cls(peak_rate, fsr / finesse, finesse_red=finesse, **kw)

    def peak(self, t):
        """Peak frequency at ``t`` (scalar or array)."""
        if self.drift is not None:
            out = np.asarray(self.drift(t), dtype=float)
            return float(out) if out.ndim == 0 else out
        return self.drift_offset + self.drift_rate * t


def rate_at(landscape: ResonanceLandscape, offset, t) -> np.ndarray:
    """Expected count rate (counts/s) at lock offset ``offset`` (Hz) and time ``t``."""
    x = np.asarray(offset, dtype=float) - landscape.peak(t)
    half = 0.5 * landscape.linewidth
    return landscape.peak_rate / (1.0 + (x / half) ** 2) + landscape.background_rate


@dataclass(frozen=True)
class LockParams:
    gain: float = 2e3  # Hz of step per count of change in the averaged counts
    step_min: float = 5e3  # Hz
    step_max: float = 100e3  # Hz
    n_cycles: int = 10  # clock cycles averaged per decision
    cycle_time: float = 1e-3  # s per clock cycle
    initial_step: float = 20e3  # Hz, magnitude of the random first step
    capture_range: float = 2e6  # Hz

    def __post_init__(self):
        if self.n_cycles < 1:
            raise InvalidParameterError("n_cycles must be >= 1")
        if not 0 < self.step_min <= self.step_max:
            raise InvalidParameterError("need 0 < step_min <= step_max")
        if self.gain < 0 or self.cycle_time <= 0 or self.capture_range <= 0:
            raise InvalidParameterError("gain >= 0, cycle_time > 0 and capture_range > 0 required")
        if not self.step_min <= self.initial_step <= self.step_max:
            raise InvalidParameterError("initial_step must lie within [step_min, step_max]")

    @property
    def update_interval(self) -> float:
        return self.n_cycles * self.cycle_time


@dataclass(frozen=True)
class LockState:
    offset: float  # Hz
    step: float  # Hz, signed; the step taken to reach ``offset``
    history: Tuple[float, ...] = ()  # recent n-cycle averages, newest last
    n_cycles: int = 10
    step_min: float = 5e3
    step_max: float = 100e3
    gain: float = 2e3
    depth: int = 8  # ring size for ``history``

    def __post_init__(self):
        if self.step == 0:
            raise InvalidParameterError("lock needs a nonzero seed step")
        if self.n_cycles < 1:
            raise InvalidParameterError("n_cycles must be >= 1")

    @classmethod
    def start(cls, offset: float, params: LockParams, rng: Optional[np.random.Generator] = None) -> "LockState":
        """Initial state with a random-sign seed step of ``params.initial_step``."""
        rng = np.random.default_rng() if rng is None else rng
        sign = 1.0 if rng.random() < 0.5 else -1.0
        return cls(
            offset,
            sign * params.initial_step,
            (),
            params.n_cycles,
            params.step_min,
            params.step_max,
            params.gain,
        )


def phd_step(state: LockState, observed_mean_counts: float) -> LockState:
    """One controller decision given the mean counts observed at ``state.offset``.

    The first observation has nothing to compare with, so the seed step is
    taken as is.  Afterwards the step keeps its sign when the counts rose
    (or stayed equal) and flips when they fell.
    """
    history = (state.history + (float(observed_mean_counts),))[-state.depth :]
    if len(history) < 2:
        step = state.step
    else:
        diff = history[-1] - history[-2]
        size = min(max(state.gain * abs(diff), state.step_min), state.step_max)
        direction = math.copysign(1.0, state.step)
        if diff < 0:
            direction = -direction
        step = direction * size
    return replace(state, offset=state.offset + step, step=step, history=history)


@dataclass
class LockTrace:
    t: np.ndarray  # s, end of each averaging block
    offset: np.ndarray  # Hz, lock point during the block
    peak: np.ndarray  # Hz, true peak at the end of the block
    counts: np.ndarray  # mean counts per cycle in the block
    capture_losses: List[Tuple[float, float]] = field(default_factory=list)  # (t, error)
    params: Optional[LockParams] = None

    @property
    def error(self) -> np.ndarray:
        return self.offset - self.peak

    def rms_error(self, skip: int = 0) -> float:
        e = self.error[skip:]
        return float(np.sqrt(np.mean(e * e)))

    def steady_state_variance(self, skip: int = 0) -> float:
        return float(np.var(self.error[skip:]))

    def dither_center(self, last: int = 100) -> float:
        return float(np.mean(self.offset[-last:]))


def simulate_lock(
    landscape: ResonanceLandscape,
    params: LockParams,
    n_updates: int,
    seed: int,
    start_offset: float = 0.0,
    noise: bool = True,
) -> LockTrace:
    """Closed-loop run for ``n_updates`` controller decisions.

    Each decision averages ``n_cycles`` Poisson-sampled cycle counts (or their
    expectations with ``noise=False``).  A capture loss is logged whenever the
    tracking error first exceeds ``capture_range``; the loop keeps running.
    """
    if n_updates < 1:
        raise InvalidParameterError("n_updates must be >= 1")
    rng = np.random.default_rng(seed)
    state = LockState.start(start_offset, params, rng)
    n = params.n_cycles
    t_out = np.empty(n_updates)
    off = np.empty(n_updates)
    pk = np.empty(n_updates)
    cnt = np.empty(n_updates)
    losses = []
    lost = False
    t = 0.0
    cycle_starts = np.arange(n) * params.cycle_time
    for k in range(n_updates):
        mid = t + cycle_starts + 0.5 * params.cycle_time
        expected = rate_at(landscape, state.offset, mid) * params.cycle_time
        counts = rng.poisson(expected) if noise else expected
        mean = float(np.mean(counts))
        t += n * params.cycle_time
        t_out[k], off[k], pk[k], cnt[k] = t, state.offset, landscape.peak(t), mean
        err = state.offset - pk[k]
        if abs(err) > params.capture_range:
            if not lost:
                losses.append((t, float(err)))
            lost = True
        else:
            lost = False
        state = phd_step(state, mean)
    return LockTrace(t_out, off, pk, cnt, losses, params)
