import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gemsim import events as ev
from gemsim.errors import (IncompatibleHistogramError, InvalidParameterError, MalformedStreamError,
                           UndefinedEfficiencyError)

RES = ev.DEFAULT_RESOLUTION


def stream_from(heralds, signals, duration=1.0):
    times = np.concatenate([heralds, signals])
    chans = np.concatenate([np.zeros(len(heralds)), np.ones(len(signals))])
    return ev.EventStream.from_times(times, chans, duration)


# -- streams and tag files ------------------------------------------------------


def test_stream_validation():
    with pytest.raises(MalformedStreamError):
        ev.EventStream(np.array([3, 1]), np.array([0, 1]), 1.0)
    with pytest.raises(MalformedStreamError):
        ev.EventStream(np.array([1, 3]), np.array([0, 7]), 1.0)


tick_arrays = st.lists(st.integers(0, 10**12), min_size=0, max_size=200).map(sorted)


@settings(max_examples=50)
@given(tick_arrays, st.sampled_from(["binary", "text"]), st.data())
def test_tag_round_trip_is_lossless(tmp_path_factory, ticks, fmt, data):
    chans = data.draw(st.lists(st.integers(0, 1), min_size=len(ticks), max_size=len(ticks)))
    s = ev.EventStream(np.array(ticks, dtype=np.int64), np.array(chans, dtype=np.uint8), 101.0)
    path = tmp_path_factory.mktemp("tags") / f"s.{fmt}"
    back = ev.read_tags(ev.write_tags(s, path, fmt))
    assert back.equals(s)
    assert back.resolution == RES


def test_tag_file_corruption_detected(tmp_path):
    s = stream_from([1e-6], [2e-6])
    p = ev.write_tags(s, tmp_path / "a.bin")
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(MalformedStreamError):
        ev.read_tags(p)
    (tmp_path / "b.bin").write_bytes(b"garbage")
    with pytest.raises(MalformedStreamError):
        ev.read_tags(tmp_path / "b.bin")


def test_binary_layout(tmp_path):
    s = stream_from([1e-6], [2e-6])
    raw = ev.write_tags(s, tmp_path / "a.bin").read_bytes()
    magic, res_fs, count, dur_ps = ev._HEADER.unpack_from(raw)
    assert (magic, res_fs, count, dur_ps) == (b"GEMTAG01", 100100, 2, 10**12)
    assert len(raw) == ev._HEADER.size + 2 * 9


# -- sequence -------------------------------------------------------------------


def test_sequence_labels_and_durations():
    seq = ev.SequenceConfig()
    assert seq.period == pytest.approx(2.0)
    assert seq.stage_duration("memory") == pytest.approx(1.2)
    assert seq.stage_duration("no_input") == pytest.approx(0.4)
    assert list(seq.labels_at(np.array([0.05, 0.2, 1.7, 2.05]))) == ["no_memory", "memory", "no_input", "no_memory"]


def test_split_rejects_tags_outside_duration():
    s = ev.EventStream(np.array([0, int(3 / RES)]), np.array([0, 1]), 2.0)
    with pytest.raises(MalformedStreamError):
        ev.sequence_split(s, ev.SequenceConfig())


def test_split_live_time_with_control_off_windows():
    seq = ev.SequenceConfig()
    s = stream_from([0.2, 1.7], [], duration=2.0)
    parts = ev.sequence_split(s, seq, control_off_window=1e-3)
    assert parts["memory"].live_time == pytest.approx(1.2 - 1e-3)
    assert parts["no_input"].live_time == pytest.approx(0.4 - 1e-3)
    assert parts["no_memory"].live_time == pytest.approx(0.4)


# -- shapes and generation ------------------------------------------------------


def test_shape_sampling_matches_density():
    rng = np.random.default_rng(1)
    tri = ev.Shape(np.array([0.0, 1.0]), np.array([0.0, 2.0]))  # density 2t on [0, 1]
    x = tri.sample(rng, 200_000)
    assert x.min() >= 0 and x.max() <= 1
    assert x.mean() == pytest.approx(2 / 3, abs=3e-3)
    assert np.mean(x < 0.5) == pytest.approx(0.25, abs=3e-3)


def test_generation_is_deterministic_and_seed_dependent():
    truth, seq = ev.TruthConfig(), ev.SequenceConfig()
    a = ev.generate_events(truth, seq, 2.0, 5)
    b = ev.generate_events(truth, seq, 2.0, 5)
    c = ev.generate_events(truth, seq, 2.0, 6)
    assert a.equals(b) and not a.equals(c)


def test_background_only_while_control_on():
    truth = ev.TruthConfig(herald_rate=2000, heralding_efficiency=0.0, background_rate=5e4, storage_delay=50e-6)
    seq = ev.SequenceConfig()
    s = ev.generate_events(truth, seq, 2.0, 0)
    sig = s.channel_times(ev.SIGNAL)
    assert not np.any(seq.labels_at(sig) == "no_memory")
    h = s.channel_times(ev.HERALD)
    h = h[seq.labels_at(h) != "no_memory"]
    i = np.searchsorted(h, sig, side="right") - 1
    gap = sig[i >= 0] - h[i[i >= 0]]
    assert np.all(gap >= 50e-6 - 2 * RES)


# -- histograms -----------------------------------------------------------------


def test_histogram_hand_counted():
    s = stream_from([1e-3, 2e-3], [1e-3 + 1.02e-6, 1e-3 + 3.5e-6, 2e-3 - 0.5e-6, 2e-3 + 20e-6])
    h = ev.coincidence_histogram(s, (-1e-6, 5e-6), 1e-6)
    assert list(h.counts) == [1, 0, 1, 0, 1, 0]
    assert h.total_heralds == 2
    first = ev.coincidence_histogram(s, (-1e-6, 5e-6), 1e-6, first_only=True)
    assert list(first.counts) == [1, 0, 1, 0, 0, 0]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_histogram_total_invariant_under_refinement(seed, k):
    rng = np.random.default_rng(seed)
    s = stream_from(np.sort(rng.random(50)) * 1e-2, np.sort(rng.random(400)) * 1e-2, duration=1e-2)
    coarse = ev.coincidence_histogram(s, (-40e-6, 80e-6), 4e-6)
    fine = ev.coincidence_histogram(s, (-40e-6, 80e-6), 4e-6 / k)
    assert fine.total == coarse.total
    np.testing.assert_array_equal(fine.counts.reshape(-1, k).sum(axis=1), coarse.counts)


def test_window_sum_weights_partial_bins():
    h = ev.CoincidenceHistogram(1.0, 0.0, np.array([4, 8]), 1)
    assert h.window_sum((0.5, 2.0)) == (2.0 + 8.0, 0.25 * 4 + 8.0)


def test_background_subtraction():
    a = ev.CoincidenceHistogram(1.0, 0.0, np.array([10, 4]), 5, live_time=3.0)
    b = ev.CoincidenceHistogram(1.0, 0.0, np.array([1, 2]), 2, live_time=1.0)
    net = ev.subtract_background(a, b)
    np.testing.assert_allclose(net.counts, [7.0, -2.0])
    np.testing.assert_allclose(net.variance, [10 + 9, 4 + 18])
    np.testing.assert_allclose(ev.subtract_background(a, b, mode="heralds").counts, [7.5, -1.0])
    with pytest.raises(IncompatibleHistogramError):
        ev.subtract_background(a, ev.CoincidenceHistogram(2.0, 0.0, np.array([1, 2]), 2, live_time=1.0))


def test_efficiency_estimate_hand_computed():
    inp = ev.CoincidenceHistogram(1.0, 0.0, np.array([50, 50]), 200)
    net = ev.CoincidenceHistogram(1.0, 0.0, np.array([20.0, 10.0]), 100, variance=np.array([25.0, 16.0]))
    e = ev.efficiency_estimate(inp, net, {"all": (0.0, 2.0), "first": (0.0, 1.0)})
    # (30 / 100) / (100 / 200)
    assert e["all"].value == pytest.approx(0.6)
    assert e["all"].sigma == pytest.approx(0.6 * math.sqrt(41 / 900 + 1 / 100))
    assert e["first"].value == pytest.approx(0.4)
    with pytest.raises(UndefinedEfficiencyError):
        ev.efficiency_estimate(ev.CoincidenceHistogram(1.0, 0.0, np.zeros(2), 0), net, {"a": (0, 1)})


def test_herald_windows_relative_to_control_off():
    from gemsim.memory import storage_schedule

    s = storage_schedule(1e-6, 4e-6, recall_duration=3e-6, echo_delay=0.5e-6)
    w = ev.herald_windows(s)
    assert w["reported"] == pytest.approx((4e-6, 7e-6))
    assert w["lower"] == w["reported"]


def test_invalid_histogram_arguments():
    s = stream_from([1e-3], [2e-3])
    with pytest.raises(InvalidParameterError):
        ev.coincidence_histogram(s, (1e-6, 0.0), 1e-7)
    with pytest.raises(InvalidParameterError):
        ev.coincidence_histogram(s, (0.0, 1e-6), 1e-12)


def test_bounds_bracket_reported_after_noisy_subtraction():
    inp = ev.CoincidenceHistogram(1.0, 0.0, np.array([100, 0, 0, 0]), 100)
    # negative net counts outside the lower window push the raw sums out of order
    net = ev.CoincidenceHistogram(1.0, 0.0, np.array([-5.0, 40.0, -3.0, 0.0]), 100)
    e = ev.efficiency_estimate(inp, net, {"upper": (0, 4), "reported": (0, 3), "lower": (1, 2)})
    assert e["reported"].value == pytest.approx(0.32)
    assert e["lower"].value == e["reported"].value and e["lower"].clipped
    assert e["upper"].value == pytest.approx(0.32) and not e["upper"].clipped
