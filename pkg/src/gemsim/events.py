"""
Synthetic time-tagged detection streams and the coincidence analysis chain.

Times are stored as integer ticks of the tagger resolution (default 100.1 ps),
so every tag is an exact multiple of the resolution.  Channel 0 carries the
heralds (idler detections) and channel 1 the signal detections.

The measurement repeats a fixed sequence of stages.  ``no_memory`` stages see
the input photons directly, ``memory`` stages store and recall them and
``no_input`` stages see only the control leakage background.  Each herald in a
control-on stage gates the control off for the storage window, so background
only arrives while the control is on.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    IncompatibleHistogramError,
    InvalidParameterError,
    MalformedStreamError,
    UndefinedEfficiencyError,
)

HERALD = 0
SIGNAL = 1
DEFAULT_RESOLUTION = 100.1e-12  # s
STAGE_LABELS = ("no_memory", "memory", "no_input")

TAG_MAGIC = b"GEMTAG01"
TEXT_MAGIC = "# GEMTAGS v1"
_HEADER = struct.Struct("<8sQQQ")  # magic, resolution_fs, count, duration_ps
_RECORD = np.dtype([("t_ps", "<u8"), ("channel", "u1")])


# =============================================================================
# Streams
# =============================================================================


@dataclass(frozen=True)
class EventStream:
    """Sorted detection tags on an integer tick grid."""

    ticks: np.ndarray  # int64, multiples of ``resolution``
    channels: np.ndarray  # uint8, HERALD or SIGNAL
    duration: float  # s
    resolution: float = DEFAULT_RESOLUTION
    live_time: Optional[float] = None  # control-on time represented by the stream

    def __post_init__(self):
        ticks = np.asarray(self.ticks, dtype=np.int64)
        channels = np.asarray(self.channels, dtype=np.uint8)
        object.__setattr__(self, "ticks", ticks)
        object.__setattr__(self, "channels", channels)
        if ticks.shape != channels.shape or ticks.ndim != 1:
            raise MalformedStreamError("ticks and channels must be 1-D arrays of equal length")
        if self.resolution <= 0 or self.duration <= 0:
            raise InvalidParameterError("resolution and duration must be positive")
        if ticks.size and np.any(np.diff(ticks) < 0):
            raise MalformedStreamError("tag times must be non-decreasing")
        if channels.size and not np.isin(channels, (HERALD, SIGNAL)).all():
            raise MalformedStreamError(f"unknown channel in {np.unique(channels)}")

    @classmethod
    def from_times(cls, times, channels, duration: float, resolution: float = DEFAULT_RESOLUTION) -> "EventStream":
        """Quantize times (s) to the tick grid and sort (stable, so ties keep input order)."""
        ticks = np.rint(np.asarray(times, dtype=float) / resolution).astype(np.int64)
        channels = np.asarray(channels, dtype=np.uint8)
        order = np.argsort(ticks, kind="stable")
        return cls(ticks[order], channels[order], duration, resolution)

    def __len__(self) -> int:
        return int(self.ticks.size)

    @property
    def times(self) -> np.ndarray:
        return self.ticks * self.resolution

    @property
    def tags(self) -> list:
        return list(zip(self.times.tolist(), self.channels.tolist()))

    def channel_times(self, channel: int) -> np.ndarray:
        return self.times[self.channels == channel]

    @property
    def n_heralds(self) -> int:
        return int(np.count_nonzero(self.channels == HERALD))

    @property
    def n_signals(self) -> int:
        return int(np.count_nonzero(self.channels == SIGNAL))

    def subset(self, mask: np.ndarray, live_time: Optional[float] = None) -> "EventStream":
        return replace(self, ticks=self.ticks[mask], channels=self.channels[mask], live_time=live_time)

    def equals(self, other: "EventStream") -> bool:
        return (
            self.resolution == other.resolution
            and self.duration == other.duration
            and np.array_equal(self.ticks, other.ticks)
            and np.array_equal(self.channels, other.channels)
        )


# =============================================================================
# Configuration
# =============================================================================


@dataclass(frozen=True)
class SequenceConfig:
    """Repeating measurement sequence: ordered (label, duration) stages."""

    stages: tuple = (
        ("no_memory", 0.1),
        ("memory", 0.3),
        ("no_memory", 0.1),
        ("memory", 0.3),
        ("no_memory", 0.1),
        ("memory", 0.3),
        ("no_memory", 0.1),
        ("memory", 0.3),
        ("no_input", 0.4),
    )
    period: float = 2.0

    def __post_init__(self):
        stages = tuple((str(label), float(d)) for label, d in self.stages)
        object.__setattr__(self, "stages", stages)
        if not stages:
            raise InvalidParameterError("sequence needs at least one stage")
        for label, d in stages:
            if label not in STAGE_LABELS:
                raise InvalidParameterError(f"unknown stage label {label!r}")
            if d <= 0:
                raise InvalidParameterError("stage durations must be positive")
        total = sum(d for _, d in stages)
        if not math.isclose(total, self.period, rel_tol=1e-9):
            raise InvalidParameterError(f"stage durations sum to {total} s, period is {self.period} s")

    @property
    def boundaries(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum([d for _, d in self.stages])])

    def stage_duration(self, label: str) -> float:
        """Total time per period spent in stages called ``label``."""
        return sum(d for lab, d in self.stages if lab == label)

    def stage_index(self, times: np.ndarray) -> np.ndarray:
        """Index into ``stages`` for each time, using half-open [start, end) stages."""
        phase = np.mod(np.asarray(times, dtype=float), self.period)
        idx = np.searchsorted(self.boundaries, phase, side="right") - 1
        return np.clip(idx, 0, len(self.stages) - 1)

    def labels_at(self, times: np.ndarray) -> np.ndarray:
        labels = np.array([lab for lab, _ in self.stages])
        return labels[self.stage_index(times)]

    def intervals(self, label: str, duration: float) -> np.ndarray:
        """(start, end) rows of every ``label`` stage inside [0, duration)."""
        rows = []
        n_periods = int(math.ceil(duration / self.period))
        b = self.boundaries
        for k in range(n_periods):
            for i, (lab, _) in enumerate(self.stages):
                if lab != label:
                    continue
                a, e = k * self.period + b[i], min(k * self.period + b[i + 1], duration)
                if e > a:
                    rows.append((a, e))
        return np.array(rows, dtype=float).reshape(-1, 2)


@dataclass(frozen=True)
class Shape:
    """Tabulated arrival-time density (need not be normalised) for Monte Carlo draws."""

    times: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        d = np.asarray(self.density, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "density", d)
        if t.ndim != 1 or t.shape != d.shape or t.size < 2:
            raise InvalidParameterError("shape needs matching 1-D times and density with >= 2 points")
        if np.any(np.diff(t) <= 0):
            raise InvalidParameterError("shape times must be strictly increasing")
        if np.any(d < 0) or not np.isfinite(d).all() or d.sum() <= 0:
            raise InvalidParameterError("shape density must be finite, non-negative and not all zero")
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (d[1:] + d[:-1]) * np.diff(t))])
        object.__setattr__(self, "_cdf", cdf / cdf[-1])

    @classmethod
    def from_function(cls, f: Callable, t_min: float, t_max: float, n: int = 2001) -> "Shape":
        t = np.linspace(t_min, t_max, n)
        return cls(t, np.asarray(f(t), dtype=float))

    @classmethod
    def box(cls, t_min: float, t_max: float) -> "Shape":
        return cls(np.array([t_min, t_max]), np.ones(2))

    @property
    def support(self) -> Tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Inverse-CDF draws; the density is linear between table points."""
        u = rng.random(n)
        cdf = self._cdf
        i = np.clip(np.searchsorted(cdf, u, side="right") - 1, 0, len(cdf) - 2)
        t0, t1 = self.times[i], self.times[i + 1]
        d0, d1 = self.density[i], self.density[i + 1]
        h = t1 - t0
        area = 0.5 * (d0 + d1) * h
        target = (u - cdf[i]) / (cdf[i + 1] - cdf[i] + 1e-300) * area
        # solve d0 x + (d1 - d0) x^2 / (2h) = target for x in [0, h]
        a = 0.5 * (d1 - d0) / h
        with np.errstate(divide="ignore", invalid="ignore"):
            quad = (-d0 + np.sqrt(np.maximum(d0 * d0 + 4.0 * a * target, 0.0))) / (2.0 * a)
            lin = np.where(d0 > 0, target / d0, 0.0)
        x = np.where(np.abs(a) * h > 1e-12 * np.maximum(d0, d1), quad, lin)
        return t0 + np.clip(np.nan_to_num(x), 0.0, h)


@dataclass(frozen=True)
class TruthConfig:
    """Ground truth for the Monte Carlo generator.

    ``input_shape`` is relative to the herald.  ``recall_shape`` is relative
    to the herald plus ``storage_delay`` (the moment the control returns).
    """

    herald_rate: float = 2000.0  # counts/s
    heralding_efficiency: float = 0.5
    memory_efficiency_true: float = 0.84
    storage_delay: float = 4e-6  # s
    background_rate: float = 5000.0  # counts/s on the signal channel, control on
    input_shape: Shape = field(default_factory=lambda: Shape.box(-1e-6, 0.0))
    recall_shape: Shape = field(default_factory=lambda: Shape.box(0.0, 1e-6))
    control_off_window: Optional[float] = None  # s after each herald; None -> storage_delay

    def __post_init__(self):
        for name in ("herald_rate", "background_rate", "storage_delay"):
            if getattr(self, name) < 0:
                raise InvalidParameterError(f"{name} must be >= 0")
        for name in ("heralding_efficiency", "memory_efficiency_true"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidParameterError(f"{name} must lie in [0, 1]")
        if self.control_off_window is not None and self.control_off_window < 0:
            raise InvalidParameterError("control_off_window must be >= 0")

    @property
    def off_window(self) -> float:
        return self.storage_delay if self.control_off_window is None else self.control_off_window


def _subtract_intervals(base: np.ndarray, holes: np.ndarray) -> np.ndarray:
    """Set difference of sorted disjoint ``base`` intervals and arbitrary ``holes``."""
    if holes.size == 0:
        return base
    holes = holes[np.argsort(holes[:, 0])]
    merged = [list(holes[0])]
    for a, b in holes[1:]:
        if a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    out = []
    j = 0
    for a, b in base:
        cur = a
        while j < len(merged) and merged[j][1] <= cur:
            j += 1
        k = j
        while k < len(merged) and merged[k][0] < b:
            ha, hb = merged[k]
            if ha > cur:
                out.append((cur, ha))
            cur = max(cur, hb)
            k += 1
        if cur < b:
            out.append((cur, b))
    return np.array(out, dtype=float).reshape(-1, 2)


def _uniform_on_intervals(rng: np.random.Generator, intervals: np.ndarray, rate: float) -> np.ndarray:
    lengths = intervals[:, 1] - intervals[:, 0]
    total = float(lengths.sum())
    if rate <= 0 or total <= 0:
        return np.empty(0)
    n = rng.poisson(rate * total)
    u = np.sort(rng.random(n)) * total
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    i = np.clip(np.searchsorted(cum, u, side="right") - 1, 0, len(lengths) - 1)
    return intervals[i, 0] + (u - cum[i])


def control_on_intervals(
    herald_times: np.ndarray, seq: SequenceConfig, duration: float, off_window: float
) -> np.ndarray:
    """Control-on intervals: memory and no_input stages minus the post-herald storage gaps."""
    base = np.concatenate([seq.intervals("memory", duration), seq.intervals("no_input", duration)])
    base = base[np.argsort(base[:, 0])]
    labels = seq.labels_at(herald_times)
    gated = herald_times[(labels == "memory") | (labels == "no_input")]
    holes = np.column_stack([gated, gated + off_window]) if off_window > 0 else np.empty((0, 2))
    return _subtract_intervals(base, holes)


def generate_events(
    truth: TruthConfig,
    seq: SequenceConfig,
    duration: float,
    seed: int,
    resolution: float = DEFAULT_RESOLUTION,
) -> EventStream:
    """Monte Carlo herald and signal tags for ``duration`` seconds of the sequence.

    Deterministic for a given (truth, seq, duration, seed, resolution).
    """
    if duration < seq.period * (1 - 1e-12):
        raise InvalidParameterError("duration must cover at least one full sequence period")
    rng = np.random.default_rng(seed)

    n_h = rng.poisson(truth.herald_rate * duration)
    heralds = np.sort(rng.random(n_h)) * duration
    labels = seq.labels_at(heralds)
    emitted = rng.random(n_h) < truth.heralding_efficiency

    sel_in = emitted & (labels == "no_memory")
    t_in = heralds[sel_in] + truth.input_shape.sample(rng, int(sel_in.sum()))

    sel_mem = emitted & (labels == "memory")
    survived = rng.random(int(sel_mem.sum())) < truth.memory_efficiency_true
    h_mem = heralds[sel_mem][survived]
    t_rec = h_mem + truth.storage_delay + truth.recall_shape.sample(rng, h_mem.size)

    on = control_on_intervals(heralds, seq, duration, truth.off_window)
    t_bg = _uniform_on_intervals(rng, on, truth.background_rate)

    signals = np.concatenate([t_in, t_rec, t_bg])
    signals = signals[(signals >= 0) & (signals < duration)]
    times = np.concatenate([heralds, signals])
    chans = np.concatenate([np.full(heralds.size, HERALD), np.full(signals.size, SIGNAL)])
    stream = EventStream.from_times(times, chans, duration, resolution)
    # rounding can push a tag onto the duration boundary
    keep = stream.ticks * resolution < duration
    return stream.subset(keep) if not keep.all() else stream


def sequence_split(
    stream: EventStream, seq: SequenceConfig, control_off_window: float = 0.0
) -> Dict[str, EventStream]:
    """Sub-streams per stage label, each carrying its live (control-on) time.

    ``control_off_window`` removes the post-herald storage gaps from the live
    time of control-on stages.  No-memory stages are credited with their wall
    time.
    """
    if stream.duration < seq.period * (1 - 1e-12):
        raise InvalidParameterError("stream is shorter than one sequence period")
    t = stream.times
    if t.size and (t[0] < 0 or t[-1] >= stream.duration):
        raise MalformedStreamError("tags outside [0, duration)")
    labels = seq.labels_at(t)
    heralds = t[stream.channels == HERALD]
    if control_off_window > 0:
        on = control_on_intervals(heralds, seq, stream.duration, control_off_window)
    out = {}
    for label in dict.fromkeys(lab for lab, _ in seq.stages):
        wall = seq.intervals(label, stream.duration)
        live = float((wall[:, 1] - wall[:, 0]).sum())
        if control_off_window > 0 and label != "no_memory":
            # intersect the stage intervals with the control-on intervals
            mid = 0.5 * (on[:, 0] + on[:, 1])
            live = float(((on[:, 1] - on[:, 0]) * (seq.labels_at(mid) == label)).sum())
        out[label] = stream.subset(labels == label, live_time=live)
    return out


# =============================================================================
# Histograms
# =============================================================================


@dataclass(frozen=True)
class CoincidenceHistogram:
    bin_width: float
    t0: float  # herald-relative start of bin 0
    counts: np.ndarray
    total_heralds: int
    live_time: Optional[float] = None
    variance: Optional[np.ndarray] = None  # per-bin; defaults to counts (Poisson)

    def __post_init__(self):
        counts = np.asarray(self.counts)
        object.__setattr__(self, "counts", counts)
        if self.variance is None:
            object.__setattr__(self, "variance", np.abs(counts).astype(float))
        if self.bin_width <= 0:
            raise InvalidParameterError("bin_width must be positive")

    @property
    def n_bins(self) -> int:
        return int(self.counts.size)

    @property
    def edges(self) -> np.ndarray:
        return self.t0 + self.bin_width * np.arange(self.n_bins + 1)

    @property
    def bin_starts(self) -> np.ndarray:
        return self.edges[:-1]

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def window_sum(self, window: Tuple[float, float]) -> Tuple[float, float]:
        """(counts, variance) inside ``window``; partially covered bins are weighted by overlap."""
        lo, hi = window
        e = self.edges
        overlap = np.clip(np.minimum(e[1:], hi) - np.maximum(e[:-1], lo), 0.0, None) / self.bin_width
        return float((overlap * self.counts).sum()), float((overlap**2 * self.variance).sum())

    def compatible(self, other: "CoincidenceHistogram") -> bool:
        return (
            self.n_bins == other.n_bins
            and math.isclose(self.bin_width, other.bin_width, rel_tol=1e-12)
            and math.isclose(self.t0, other.t0, rel_tol=1e-12, abs_tol=1e-15)
        )


def coincidence_histogram(
    stream: EventStream,
    window: Tuple[float, float],
    bin_width: float,
    first_only: bool = False,
) -> CoincidenceHistogram:
    """Histogram of signal-minus-herald delays in [t_min, t_max).

    Every signal tag in the window counts for every herald it follows; with
    ``first_only`` only the earliest signal tag per herald is kept.
    """
    t_min, t_max = window
    if t_max <= t_min:
        raise InvalidParameterError("window must satisfy t_max > t_min")
    if bin_width < stream.resolution * (1 - 1e-9):
        raise InvalidParameterError("bin_width must be at least the tag resolution")
    n_bins = int(math.ceil((t_max - t_min) / bin_width - 1e-9))
    res = stream.resolution
    h = stream.ticks[stream.channels == HERALD]
    s = stream.ticks[stream.channels == SIGNAL]
    # window edges in ticks: delay*res in [t_min, t_max)
    lo_tick = math.ceil(t_min / res - 1e-9)
    hi_tick = math.ceil(t_max / res - 1e-9)
    first = np.searchsorted(s, h + lo_tick, side="left")
    last = np.searchsorted(s, h + hi_tick, side="left")
    if first_only:
        last = np.minimum(last, first + 1)
    n_per = last - first
    counts = np.zeros(n_bins, dtype=np.int64)
    if n_per.sum():
        owner = np.repeat(np.arange(h.size), n_per)
        offs = np.arange(n_per.sum()) - np.repeat(np.cumsum(n_per) - n_per, n_per)
        delays = (s[first[owner] + offs] - h[owner]) * res
        idx = np.floor((delays - t_min) / bin_width + 1e-9).astype(np.int64)
        idx = np.clip(idx, 0, n_bins - 1)
        counts = np.bincount(idx, minlength=n_bins).astype(np.int64)
    return CoincidenceHistogram(bin_width, t_min, counts, int(h.size), stream.live_time)


def subtract_background(
    memory_hist: CoincidenceHistogram,
    noinput_hist: CoincidenceHistogram,
    scale: Optional[float] = None,
    mode: str = "live_time",
) -> CoincidenceHistogram:
    """Net recall histogram ``memory - scale * no_input`` with propagated variance.

    ``mode`` picks the scale: ``live_time`` (ratio of control-on times) or
    ``heralds`` (ratio of herald counts).  An explicit ``scale`` wins.
    Negative bins are kept.
    """
    if not memory_hist.compatible(noinput_hist):
        raise IncompatibleHistogramError("histograms differ in bin width, origin or bin count")
    if scale is None:
        if mode == "live_time":
            if not memory_hist.live_time or not noinput_hist.live_time:
                raise InvalidParameterError("live-time scaling needs live_time on both histograms")
            scale = memory_hist.live_time / noinput_hist.live_time
        elif mode == "heralds":
            if noinput_hist.total_heralds == 0:
                raise UndefinedEfficiencyError("no heralds in the no_input histogram")
            scale = memory_hist.total_heralds / noinput_hist.total_heralds
        else:
            raise InvalidParameterError(f"unknown scale mode {mode!r}")
    net = memory_hist.counts - scale * noinput_hist.counts
    var = memory_hist.variance + scale**2 * noinput_hist.variance
    return CoincidenceHistogram(
        memory_hist.bin_width,
        memory_hist.t0,
        net.astype(float),
        memory_hist.total_heralds,
        memory_hist.live_time,
        var,
    )


@dataclass(frozen=True)
class EfficiencyResult:
    value: float
    sigma: float
    window: str
    raw_counts: float
    background_counts: float
    input_counts: float
    interval: Tuple[float, float] = (0.0, 0.0)
    clipped: bool = False  # bound pulled onto the reported value


def efficiency_estimate(
    input_hist: CoincidenceHistogram,
    net_recall_hist: CoincidenceHistogram,
    windows: Dict[str, Tuple[float, float]],
    raw_recall_hist: Optional[CoincidenceHistogram] = None,
    input_window: Optional[Tuple[float, float]] = None,
) -> Dict[str, EfficiencyResult]:
    """Recall efficiency per window: (net recalled / herald) / (input / herald).

    The input rate uses ``input_window`` (default: the whole input
    histogram).  Keeping it tight around the input pulse limits accidental
    coincidences with other heralds' photons.  The error combines the
    Poisson noise of the raw, background and input totals; when
    ``raw_recall_hist`` is given the raw and background counts are reported
    separately.

    Background subtraction can leave negative net counts in the margins
    between windows, so raw window sums need not be ordered.  A ``lower``
    bound above the ``reported`` value (or an ``upper`` below it) is pulled
    onto the reported value and flagged ``clipped``; the reported value
    itself is never altered.
    """
    c_in = input_hist.total if input_window is None else input_hist.window_sum(input_window)[0]
    if c_in <= 0 or input_hist.total_heralds == 0 or net_recall_hist.total_heralds == 0:
        raise UndefinedEfficiencyError("input histogram has no counts or no heralds")
    per_in = c_in / input_hist.total_heralds
    out = {}
    for name, win in windows.items():
        net, var = net_recall_hist.window_sum(win)
        raw = raw_recall_hist.window_sum(win)[0] if raw_recall_hist is not None else net
        value = (net / net_recall_hist.total_heralds) / per_in
        if net != 0:
            rel2 = var / net**2 + 1.0 / c_in
            sigma = abs(value) * math.sqrt(rel2)
        else:
            sigma = math.sqrt(var) / net_recall_hist.total_heralds / per_in
        out[name] = EfficiencyResult(value, sigma, name, raw, raw - net, c_in, tuple(win))
    rep = out.get("reported")
    if rep is not None:
        for name, worse in (("lower", lambda v: v > rep.value), ("upper", lambda v: v < rep.value)):
            if name in out and worse(out[name].value):
                out[name] = replace(out[name], value=rep.value, sigma=rep.sigma, clipped=True)
    return out


def herald_windows(schedule, lower: Optional[Tuple[float, float]] = None) -> Dict[str, Tuple[float, float]]:
    """Read windows of a memory schedule expressed relative to the herald (the control-off event)."""
    origin = schedule.decay_origin
    w = schedule.read_windows()
    out = {k: (a - origin, b - origin) for k, (a, b) in w.items()}
    out["lower"] = tuple(lower) if lower is not None else out["reported"]
    return out


# =============================================================================
# Tag files
# =============================================================================


def _ticks_to_ps(ticks: np.ndarray, res_fs: int) -> np.ndarray:
    return (ticks.astype(np.uint64) * np.uint64(res_fs) + np.uint64(500)) // np.uint64(1000)


def _ps_to_ticks(ps: np.ndarray, res_fs: int) -> np.ndarray:
    return ((ps.astype(np.uint64) * np.uint64(1000) + np.uint64(res_fs // 2)) // np.uint64(res_fs)).astype(np.int64)


def _resolution_fs(stream: EventStream) -> int:
    res_fs = int(round(stream.resolution * 1e15))
    if res_fs < 1000:
        raise InvalidParameterError("tag files need a resolution of at least 1 ps")
    return res_fs


def write_tags(stream: EventStream, path, fmt: str = "binary") -> Path:
    """Write ``stream`` as picosecond records.

    binary: header ``<8sQQQ`` (magic ``GEMTAG01``, resolution in fs, record
    count, duration in ps) followed by packed little-endian ``(uint64 ps,
    uint8 channel)`` records.  text: a ``# GEMTAGS v1`` header line and one
    ``ps channel`` pair per line.
    """
    path = Path(path)
    res_fs = _resolution_fs(stream)
    ps = _ticks_to_ps(stream.ticks, res_fs)
    dur_ps = int(round(stream.duration * 1e12))
    if fmt == "binary":
        rec = np.empty(len(stream), dtype=_RECORD)
        rec["t_ps"] = ps
        rec["channel"] = stream.channels
        with open(path, "wb") as f:
            f.write(_HEADER.pack(TAG_MAGIC, res_fs, len(stream), dur_ps))
            f.write(rec.tobytes())
    elif fmt == "text":
        buf = io.StringIO()
        buf.write(f"{TEXT_MAGIC} resolution_fs={res_fs} duration_ps={dur_ps} count={len(stream)}\n")
        for t, c in zip(ps.tolist(), stream.channels.tolist()):
            buf.write(f"{t} {c}\n")
        path.write_text(buf.getvalue())
    else:
        raise InvalidParameterError(f"unknown tag format {fmt!r}")
    return path


def read_tags(path) -> EventStream:
    """Read a tag file written by :func:`write_tags` (format detected from the header)."""
    data = Path(path).read_bytes()
    if data.startswith(TAG_MAGIC):
        if len(data) < _HEADER.size:
            raise MalformedStreamError("truncated tag-file header")
        _, res_fs, count, dur_ps = _HEADER.unpack_from(data)
        body = data[_HEADER.size :]
        if len(body) != count * _RECORD.itemsize:
            raise MalformedStreamError(f"expected {count} records, found {len(body) / _RECORD.itemsize:g}")
        rec = np.frombuffer(body, dtype=_RECORD)
        ps, chans = rec["t_ps"], rec["channel"]
    elif data.startswith(TEXT_MAGIC.encode()):
        lines = data.decode().splitlines()
        try:
            meta = dict(kv.split("=") for kv in lines[0][len(TEXT_MAGIC) :].split())
            res_fs, dur_ps, count = int(meta["resolution_fs"]), int(meta["duration_ps"]), int(meta["count"])
            rows = np.array([ln.split() for ln in lines[1:] if ln.strip()], dtype=np.uint64).reshape(-1, 2)
        except (KeyError, ValueError) as exc:
            raise MalformedStreamError(f"unreadable text tag file: {exc}") from exc
        if rows.shape[0] != count:
            raise MalformedStreamError(f"expected {count} records, found {rows.shape[0]}")
        ps, chans = rows[:, 0], rows[:, 1]
    else:
        raise MalformedStreamError("unrecognised tag-file header")
    if res_fs < 1000:
        raise MalformedStreamError("resolution field below 1 ps")
    return EventStream(_ps_to_ticks(np.asarray(ps), res_fs), np.asarray(chans), dur_ps / 1e12, res_fs / 1e15)
