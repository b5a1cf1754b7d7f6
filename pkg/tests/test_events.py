import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eventvel.errors import ConfigurationError, NonMonotonicError, OutOfBoundsEventError
from eventvel.events import Event, EventStream, Frame, WindowingPolicy, WindowMode, accumulate, frame_density


def stream_of(events, w=8, h=8):
    return EventStream.from_events(w, h, [Event(*e) for e in events])


@st.composite
def streams(draw, max_events=200):
    w = draw(st.integers(1, 12))
    h = draw(st.integers(1, 12))
    n = draw(st.integers(0, max_events))
    t = sorted(draw(st.lists(st.integers(0, 100_000), min_size=n, max_size=n)))
    x = draw(st.lists(st.integers(0, w - 1), min_size=n, max_size=n))
    y = draw(st.lists(st.integers(0, h - 1), min_size=n, max_size=n))
    p = draw(st.lists(st.sampled_from([-1, 1]), min_size=n, max_size=n))
    return EventStream(w, h, t, x, y, p)


def test_empty_stream_gives_no_frames():
    assert accumulate(EventStream(8, 8), WindowingPolicy.fixed_time(10_000)) == []


def test_single_event_single_pixel():
    frames = accumulate(stream_of([(5, 3, 4, 1)]), WindowingPolicy.fixed_time(10_000))
    assert len(frames) == 1
    f = frames[0]
    assert f.event_count == 1
    assert f.pixels.shape == (1, 8, 8)
    assert f.pixels[0, 4, 3] == 1 and f.pixels.sum() == 1
    assert (f.t_start, f.t_end) == (0, 10_000)


def test_fixed_time_windows_anchored_at_zero():
    s = stream_of([(15_000, 0, 0, 1), (25_000, 1, 0, 1), (41_000, 2, 0, -1)])
    frames = accumulate(s, WindowingPolicy.fixed_time(10_000))
    assert [(f.t_start, f.t_end) for f in frames] == [(k * 10_000, (k + 1) * 10_000) for k in range(5)]
    assert [f.event_count for f in frames] == [0, 1, 1, 0, 1]


def test_t_stop_emits_trailing_empty_windows_and_flags_partial():
    s = stream_of([(15_000, 0, 0, 1), (52_000, 1, 1, 1)])
    frames = accumulate(s, WindowingPolicy.fixed_time(20_000), t_stop_us=50_000)
    assert [(f.t_start, f.partial) for f in frames] == [(0, False), (20_000, False), (40_000, True)]
    # a partial window without events is dropped
    frames = accumulate(stream_of([(15_000, 0, 0, 1)]), WindowingPolicy.fixed_time(20_000), t_stop_us=50_000)
    assert [(f.t_start, f.partial) for f in frames] == [(0, False), (20_000, False)]


def test_fixed_count_windows():
    s = stream_of([(t, t % 8, 0, 1) for t in range(10)])
    frames = accumulate(s, WindowingPolicy.fixed_count(4))
    assert [f.event_count for f in frames] == [4, 4, 2]
    assert [f.partial for f in frames] == [False, False, True]
    assert [(f.t_start, f.t_end) for f in frames] == [(0, 4), (4, 8), (8, 10)]


def test_fixed_count_on_simulator_stream(small_sim_seq):
    stream = small_sim_seq[1].stream
    n = len(stream)
    frames = accumulate(stream, WindowingPolicy.fixed_count(1000))
    assert len(frames) == -(-n // 1000)
    assert sum(f.event_count for f in frames) == n
    # brute-force recount of each window
    for k, f in enumerate(frames):
        lo, hi = k * 1000, min((k + 1) * 1000, n)
        assert f.event_count == hi - lo
        assert f.t_start == stream.t[lo]
        img = np.zeros((stream.sensor_height, stream.sensor_width), np.uint8)
        for i in range(lo, hi):
            img[stream.y[i], stream.x[i]] = 1
        assert np.array_equal(f.pixels[0], img)


def test_polarity_split_channels():
    s = stream_of([(1, 0, 0, 1), (2, 1, 1, -1), (3, 0, 0, -1)])
    f = accumulate(s, WindowingPolicy.fixed_time(10, polarity_split=True))[0]
    assert f.channels == 2
    assert f.pixels[0, 0, 0] == 1 and f.pixels[0, 1, 1] == 0
    assert f.pixels[1, 1, 1] == 1 and f.pixels[1, 0, 0] == 1


def test_frame_density():
    zero = Frame(0, 10, np.zeros((1, 8, 8), np.uint8), 0)
    assert frame_density(zero) == 0.0
    one = zero.pixels.copy()
    one[0, 2, 2] = 1
    assert frame_density(Frame(0, 10, one, 1)) == 1 / 64


def test_frame_density_matches_pixel_scan(small_sim_seq):
    for f in accumulate(small_sim_seq[1].stream, WindowingPolicy.fixed_time(50_000, polarity_split=True)):
        count = sum(int(v) for v in f.pixels.ravel() if v)
        assert frame_density(f) == pytest.approx(count / (f.width * f.height * 2), abs=1e-15)


def test_out_of_bounds_event_names_index():
    with pytest.raises(OutOfBoundsEventError) as exc:
        stream_of([(0, 1, 1, 1), (1, 8, 0, 1)])
    assert exc.value.index == 1


def test_bad_polarity_and_negative_time_rejected():
    with pytest.raises(OutOfBoundsEventError):
        EventStream(4, 4, [0], [0], [0], [0])
    with pytest.raises(OutOfBoundsEventError):
        EventStream(4, 4, [-1], [0], [0], [1])


def test_non_monotonic_rejected():
    with pytest.raises(NonMonotonicError) as exc:
        stream_of([(5, 0, 0, 1), (4, 0, 0, 1)])
    assert exc.value.index == 1


def test_policy_validation():
    with pytest.raises(ConfigurationError):
        WindowingPolicy.fixed_time(0)
    with pytest.raises(ConfigurationError):
        WindowingPolicy.fixed_count(-3)
    assert WindowingPolicy("count").mode is WindowMode.FIXED_COUNT


def test_stream_arrays_read_only():
    s = stream_of([(0, 0, 0, 1)])
    with pytest.raises(ValueError):
        s.t[0] = 3


@settings(max_examples=60, deadline=None)
@given(streams(), st.integers(1, 30_000), st.booleans())
def test_partition_and_union_properties(stream, dt, count_mode):
    policy = WindowingPolicy.fixed_count(max(1, dt // 1000)) if count_mode else WindowingPolicy.fixed_time(dt)
    frames = accumulate(stream, policy)
    # partition: consecutive slices reproduce the stream in order
    idx = []
    for f in frames:
        idx.extend(range(f.first_event, f.first_event + f.event_count))
    assert idx == list(range(len(stream)))
    starts = [f.t_start for f in frames]
    if count_mode:
        # count windows may share a timestamp at their boundary
        assert all(b >= a for a, b in zip(starts, starts[1:]))
    else:
        assert all(b > a for a, b in zip(starts, starts[1:]))
    for f in frames:
        assert f.t_end > f.t_start
        assert np.count_nonzero(f.pixels) <= f.event_count
        lo, hi = f.first_event, f.first_event + f.event_count
        distinct = {(int(stream.x[i]), int(stream.y[i])) for i in range(lo, hi)}
        assert np.count_nonzero(f.pixels) == len(distinct)
    split = accumulate(stream, WindowingPolicy(policy.mode, policy.dt_us, policy.count, True))
    for a, b in zip(frames, split):
        assert np.array_equal(a.pixels[0], b.pixels.max(axis=0))
