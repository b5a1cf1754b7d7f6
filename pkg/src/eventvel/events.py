"""Event streams and their accumulation into binary frames.

Timestamps are integer microseconds from the start of the sequence. Frames
are binary occupancy grids: a pixel is set iff at least one event landed on
it inside the window.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NonMonotonicError, OutOfBoundsEventError


@dataclass(frozen=True)
class Event:
    t: int
    x: int
    y: int
    p: int


@dataclass(frozen=True, eq=False)
class EventStream:
    """Columnar, time-sorted event container.

    ``t`` is int64 microseconds, ``x``/``y`` int pixel coordinates and ``p``
    the polarity in {-1, +1}. Arrays are copied and made read-only.
    """

    sensor_width: int
    sensor_height: int
    t: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    x: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int32))
    y: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int32))
    p: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int8))

    def __post_init__(self):
        for name, dtype in (("t", np.int64), ("x", np.int32), ("y", np.int32), ("p", np.int8)):
            arr = np.array(getattr(self, name), dtype=dtype).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event columns must have equal length")
        if self.sensor_width <= 0 or self.sensor_height <= 0:
            raise ConfigurationError("sensor dimensions must be positive")
        self.validate()

    @classmethod
    def from_events(cls, width: int, height: int, events) -> "EventStream":
        events = list(events)
        cols = np.array([(e.t, e.x, e.y, e.p) for e in events], dtype=np.int64).reshape(-1, 4)
        return cls(width, height, cols[:, 0], cols[:, 1], cols[:, 2], cols[:, 3])

    def validate(self) -> None:
        """Check bounds, polarity and ordering; raise on the first offender."""
        bad = (self.x < 0) | (self.x >= self.sensor_width) | (self.y < 0) | (self.y >= self.sensor_height)
        if bad.any():
            i = int(np.argmax(bad))
            raise OutOfBoundsEventError(
                f"event {i} at ({self.x[i]}, {self.y[i]}) outside "
                f"{self.sensor_width}x{self.sensor_height} sensor",
                index=i,
            )
        badp = (self.p != 1) & (self.p != -1)
        if badp.any():
            i = int(np.argmax(badp))
            raise OutOfBoundsEventError(f"event {i} has polarity {self.p[i]}, expected -1 or +1", index=i)
        if len(self.t) and self.t[0] < 0:
            raise OutOfBoundsEventError("event 0 has negative timestamp", index=0)
        dec = np.diff(self.t) < 0
        if dec.any():
            i = int(np.argmax(dec)) + 1
            raise NonMonotonicError(f"event {i} timestamp {self.t[i]} precedes event {i - 1}", index=i)

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.sensor_width == other.sensor_width
            and self.sensor_height == other.sensor_height
            and all(np.array_equal(getattr(self, c), getattr(other, c)) for c in "txyp")
        )

    def slice(self, start: int, stop: int) -> "EventStream":
        return EventStream(
            self.sensor_width, self.sensor_height,
            self.t[start:stop], self.x[start:stop], self.y[start:stop], self.p[start:stop],
        )

    @property
    def duration_us(self) -> int:
        return int(self.t[-1] - self.t[0]) if len(self) else 0


class WindowMode(enum.Enum):
    FIXED_TIME = "time"
    FIXED_COUNT = "count"


@dataclass(frozen=True)
class WindowingPolicy:
    mode: WindowMode = WindowMode.FIXED_TIME
    dt_us: int = 80_000
    count: int = 5_000
    polarity_split: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", WindowMode(self.mode))
        if self.mode is WindowMode.FIXED_TIME and self.dt_us <= 0:
            raise ConfigurationError(f"dt_us must be positive, got {self.dt_us}")
        if self.mode is WindowMode.FIXED_COUNT and self.count <= 0:
            raise ConfigurationError(f"count must be positive, got {self.count}")

    @classmethod
    def fixed_time(cls, dt_us: int, polarity_split: bool = False) -> "WindowingPolicy":
        return cls(WindowMode.FIXED_TIME, dt_us=dt_us, polarity_split=polarity_split)

    @classmethod
    def fixed_count(cls, count: int, polarity_split: bool = False) -> "WindowingPolicy":
        return cls(WindowMode.FIXED_COUNT, count=count, polarity_split=polarity_split)


@dataclass(frozen=True, eq=False)
class Frame:
    """Binary occupancy over ``[t_start, t_end)``.

    ``pixels`` has shape (channels, height, width), dtype uint8. With two
    channels, channel 0 holds positive and channel 1 negative events.
    ``first_event`` is the stream index of the window's first event.
    """

    t_start: int
    t_end: int
    pixels: np.ndarray
    event_count: int
    first_event: int = 0
    partial: bool = False

    @property
    def channels(self) -> int:
        return self.pixels.shape[0]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]

    @property
    def t_mid(self) -> int:
        return (self.t_start + self.t_end) // 2

    def merged(self) -> np.ndarray:
        """Single-channel (H, W) float image, channels OR-ed together."""
        return self.pixels.max(axis=0).astype(np.float64)


def _occupancy(stream: EventStream, lo: int, hi: int, split: bool) -> np.ndarray:
    ch = 2 if split else 1
    img = np.zeros((ch, stream.sensor_height, stream.sensor_width), np.uint8)
    xs, ys = stream.x[lo:hi], stream.y[lo:hi]
    if split:
        pos = stream.p[lo:hi] > 0
        img[0, ys[pos], xs[pos]] = 1
        img[1, ys[~pos], xs[~pos]] = 1
    else:
        img[0, ys, xs] = 1
    return img


def accumulate(stream: EventStream, policy: WindowingPolicy, t_stop_us: int | None = None) -> list[Frame]:
    """Partition ``stream`` into consecutive frames.

    Fixed-time windows are anchored at t=0. When ``t_stop_us`` (the end of
    the recording) is known, every complete window up to it is emitted, empty
    or not; a window reaching past ``t_stop_us`` is emitted only if it holds
    events, and is flagged partial. Without ``t_stop_us`` the windows end at
    the one holding the last event.

    Fixed-count windows take ``count`` consecutive events; their time span
    runs from the first event to one microsecond past the last. A short
    trailing window is flagged partial.
    """
    stream.validate()
    split = policy.polarity_split
    n = len(stream)
    frames: list[Frame] = []
    if policy.mode is WindowMode.FIXED_TIME:
        dt = policy.dt_us
        n_win = 0 if n == 0 else int(stream.t[-1]) // dt + 1
        if t_stop_us is not None:
            n_win = max(n_win, -(-int(t_stop_us) // dt))
        edges = np.arange(n_win + 1, dtype=np.int64) * dt
        bounds = np.searchsorted(stream.t, edges, side="left")
        for k in range(n_win):
            lo, hi = int(bounds[k]), int(bounds[k + 1])
            partial = t_stop_us is not None and int(edges[k + 1]) > t_stop_us
            if partial and hi == lo:
                continue
            frames.append(Frame(int(edges[k]), int(edges[k + 1]), _occupancy(stream, lo, hi, split), hi - lo, lo, partial))
    else:
        c = policy.count
        for lo in range(0, n, c):
            hi = min(lo + c, n)
            frames.append(
                Frame(int(stream.t[lo]), int(stream.t[hi - 1]) + 1, _occupancy(stream, lo, hi, split), hi - lo, lo, hi - lo < c)
            )
    return frames


def frame_density(frame: Frame) -> float:
    """Fraction of set pixels over all channels."""
    return float(np.count_nonzero(frame.pixels)) / frame.pixels.size
