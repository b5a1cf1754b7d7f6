"""Landing sequences on disk.

A sequence is a directory holding::

    manifest.json    {"id", "split": "train"|"test", "sensor_width", "sensor_height"}
    events.csv       t_us,x,y,p        (integer microseconds, polarity -1/+1)
    trajectory.csv   t,x,y,z,vx,vy,vz,phi,theta,psi,p,q,r   (seconds, SI units, radians)
    ranges.csv       t,d               (seconds, metres)

Test sequences carry ``nan`` positions and velocities; the simulator puts the
hidden values in a ``truth.csv`` next to them, same columns as the
trajectory. Files are UTF-8 with LF endings; reals are written with 17
significant digits so they read back bit-exact.
"""

from __future__ import annotations

import csv
import enum
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (
    AlignmentError,
    CoverageError,
    InputValidationError,
    MalformedRowError,
    MissingFileError,
    MissingInputError,
    NonMonotonicError,
    OutOfBoundsEventError,
    TimestampUnitError,
)
from .events import EventStream, WindowingPolicy, accumulate
from .geometry import EulerAngles

EVENT_COLUMNS = ["t_us", "x", "y", "p"]
TRAJECTORY_COLUMNS = ["t", "x", "y", "z", "vx", "vy", "vz", "phi", "theta", "psi", "p", "q", "r"]
RANGE_COLUMNS = ["t", "d"]
SUBMISSION_COLUMNS = ["sequence_id", "t", "vx", "vy", "vz"]


class Split(enum.Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True, eq=False)
class LanderState:
    t: float
    pos: np.ndarray
    vel: np.ndarray
    euler: EulerAngles
    omega: np.ndarray

    def __post_init__(self):
        for name in ("pos", "vel", "omega"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(3))

    def as_row(self) -> list[float]:
        return [self.t, *self.pos, *self.vel, *self.euler.as_array(), *self.omega]

    @classmethod
    def from_row(cls, row) -> "LanderState":
        r = [float(v) for v in row]
        return cls(r[0], r[1:4], r[4:7], EulerAngles(*r[7:10]), r[10:13])

    def __eq__(self, other) -> bool:
        if not isinstance(other, LanderState):
            return NotImplemented
        return np.array_equal(np.array(self.as_row()), np.array(other.as_row()), equal_nan=True)


@dataclass(frozen=True)
class RangeReading:
    t: float
    d: float


@dataclass(eq=False)
class Sequence:
    id: str
    stream: EventStream
    trajectory: list[LanderState] = field(default_factory=list)
    ranges: list[RangeReading] = field(default_factory=list)
    split: Split = Split.TRAIN

    def __post_init__(self):
        self.split = Split(self.split)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Sequence):
            return NotImplemented
        return (
            self.id == other.id
            and self.split == other.split
            and self.stream == other.stream
            and self.trajectory == other.trajectory
            and self.ranges == other.ranges
        )

    # array views -------------------------------------------------------

    def state_times(self) -> np.ndarray:
        return np.array([s.t for s in self.trajectory], dtype=float)

    def velocities(self) -> np.ndarray:
        return np.array([s.vel for s in self.trajectory], dtype=float).reshape(-1, 3)

    def range_series(self) -> "TimeSeries":
        return TimeSeries([r.t for r in self.ranges], [r.d for r in self.ranges])

    def attitude_series(self) -> "TimeSeries":
        return TimeSeries(self.state_times(), np.array([s.euler.as_array() for s in self.trajectory]).reshape(-1, 3))

    @property
    def t_stop_us(self) -> int | None:
        """End of the recording in microseconds, from the trajectory clock."""
        if not self.trajectory:
            return None
        return int(round(self.trajectory[-1].t * 1e6))

    def validate(self) -> None:
        self.stream.validate()
        _validate_states(self.trajectory, self.split)
        _validate_ranges(self.ranges)
        _validate_time_units(self)


def _validate_states(states: list[LanderState], split: Split, path=None) -> None:
    prev = -math.inf
    for i, s in enumerate(states):
        line = i + 2
        if not np.isfinite(s.t):
            raise MalformedRowError("timestamp is not finite", path=path, line=line, column="t")
        if s.t < prev:
            raise NonMonotonicError(f"timestamp {s.t} decreases", path=path, line=line, column="t")
        prev = s.t
        ang, om = s.euler.as_array(), s.omega
        for name, v in zip(("phi", "theta", "psi", "p", "q", "r"), np.concatenate((ang, om))):
            if not np.isfinite(v):
                raise MalformedRowError("attitude and angular rate must be finite", path=path, line=line, column=name)
        vel_nan = np.isnan(s.vel)
        if split is Split.TEST and not vel_nan.all():
            raise InputValidationError("test split must have nan velocities", path=path, line=line, column="vx")
        if split is Split.TRAIN and vel_nan.any():
            raise InputValidationError("train split needs finite velocities", path=path, line=line, column="vx")


def _validate_ranges(ranges: list[RangeReading], path=None) -> None:
    prev = -math.inf
    for i, r in enumerate(ranges):
        line = i + 2
        if not (np.isfinite(r.d) and r.d > 0):
            raise MalformedRowError(f"range {r.d} must be positive", path=path, line=line, column="d")
        if not np.isfinite(r.t):
            raise MalformedRowError("timestamp is not finite", path=path, line=line, column="t")
        if r.t < prev:
            raise NonMonotonicError(f"timestamp {r.t} decreases", path=path, line=line, column="t")
        prev = r.t


def _validate_time_units(seq: Sequence, path=None) -> None:
    """Event clock (microseconds) must agree with the trajectory clock (seconds)."""
    st = seq.stream
    if not seq.trajectory or len(st) == 0:
        return
    t0_us = seq.trajectory[0].t * 1e6
    t1_us = seq.trajectory[-1].t * 1e6
    span = t1_us - t0_us
    slack = max(0.05 * span, 1000.0)
    last = int(st.t[-1])
    if last > t1_us + slack:
        i = int(np.argmax(st.t > t1_us + slack))
        raise TimestampUnitError(
            f"event {i} at t_us={int(st.t[i])} lies beyond the trajectory end ({seq.trajectory[-1].t} s); "
            "event times must be microseconds",
            path=path, line=i + 2, column="t_us",
        )
    if span >= 1e5 and len(st) >= 10 and last < t0_us + 1e-3 * span:
        raise TimestampUnitError(
            f"all events fall within the first {last} us of a {span / 1e6:.3g} s trajectory; "
            "timestamps look like seconds, expected microseconds",
            path=path, column="t_us",
        )


@dataclass(frozen=True)
class TimeSeries:
    """Sorted timestamps in seconds with one row of values per timestamp."""

    t: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, float).reshape(-1)
        v = np.asarray(self.values, float)
        v = v.reshape(len(t), -1) if v.size else v.reshape(0, v.shape[-1] if v.ndim > 1 else 1)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.t)


def interpolate_series(series: TimeSeries, t_query: float):
    """Piecewise-linear lookup, clamped to the end values outside the span.

    Returns ``(value, clamped)``; ``value`` has one entry per column.
    """
    if len(series.t) == 0:
        raise MissingInputError("cannot interpolate an empty series")
    t = series.t
    clamped = bool(t_query < t[0] or t_query > t[-1])
    if len(t) == 1 or t_query <= t[0]:
        return series.values[0].copy(), clamped
    if t_query >= t[-1]:
        return series.values[-1].copy(), clamped
    i = int(np.searchsorted(t, t_query, side="right"))
    t0, t1 = t[i - 1], t[i]
    w = (t_query - t0) / (t1 - t0)
    return (1 - w) * series.values[i - 1] + w * series.values[i], False


# reading ---------------------------------------------------------------


def _require(path: Path) -> Path:
    if not path.is_file():
        raise MissingFileError("required file is missing", path=path)
    return path


def _check_header(path: Path, expected: list[str]) -> None:
    with open(path, encoding="utf-8", newline="") as fh:
        header = next(csv.reader(fh), None)
    if header != expected:
        raise MalformedRowError(f"header {header} != expected {expected}", path=path, line=1)


def _read_real_rows(path: Path, columns: list[str]) -> np.ndarray:
    _check_header(path, columns)
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(columns):
                raise MalformedRowError(f"expected {len(columns)} fields, got {len(row)}", path=path, line=lineno)
            vals = []
            for name, text in zip(columns, row):
                try:
                    vals.append(float(text))
                except ValueError:
                    raise MalformedRowError(f"cannot parse {text!r} as a number", path=path, line=lineno, column=name) from None
            rows.append(vals)
    return np.array(rows, dtype=np.float64).reshape(-1, len(columns))


def _locate_bad_event_row(path: Path) -> None:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise MalformedRowError(f"expected 4 fields, got {len(row)}", path=path, line=lineno)
            for name, text in zip(EVENT_COLUMNS, row):
                try:
                    int(text)
                except ValueError:
                    raise MalformedRowError(f"{text!r} is not an integer", path=path, line=lineno, column=name) from None
    raise MalformedRowError("unparseable events file", path=path)


def read_events(path, width: int, height: int) -> EventStream:
    path = _require(Path(path))
    _check_header(path, EVENT_COLUMNS)
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, engine="c")
    except (pd.errors.ParserError, ValueError):
        _locate_bad_event_row(path)
    if len(df.columns) != 4:
        _locate_bad_event_row(path)
    cols = {}
    for name in EVENT_COLUMNS:
        s = df[name]
        ok = s.str.fullmatch(r"[+-]?\d+")
        if not ok.all():
            i = int(np.argmax(~ok.to_numpy()))
            raise MalformedRowError(f"{s.iloc[i]!r} is not an integer", path=path, line=i + 2, column=name)
        cols[name] = s.astype(np.int64).to_numpy()
    p = cols["p"]
    vals = set(np.unique(p).tolist())
    if vals <= {0, 1} and 0 in vals:
        p = np.where(p == 0, -1, 1)
    elif not vals <= {-1, 1}:
        bad = (p != -1) & (p != 1)
        i = int(np.argmax(bad))
        raise MalformedRowError(f"polarity {p[i]} not in {{-1, +1}}", path=path, line=i + 2, column="p")
    try:
        return EventStream(width, height, cols["t_us"], cols["x"], cols["y"], p)
    except OutOfBoundsEventError as exc:
        col = "p" if "polarity" in exc.message else ("t_us" if "timestamp" in exc.message else "x/y")
        raise OutOfBoundsEventError(exc.message, index=exc.index, path=path, line=exc.index + 2, column=col) from None
    except NonMonotonicError as exc:
        raise NonMonotonicError(exc.message, index=exc.index, path=path, line=exc.index + 2, column="t_us") from None


def read_manifest(path) -> dict:
    path = _require(Path(path))
    try:
        man = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedRowError(f"invalid JSON: {exc.msg}", path=path, line=exc.lineno) from None
    for key, typ in (("id", str), ("split", str), ("sensor_width", int), ("sensor_height", int)):
        if not isinstance(man.get(key), typ):
            raise MalformedRowError(f"manifest field {key!r} missing or not {typ.__name__}", path=path, column=key)
    if man["split"] not in ("train", "test"):
        raise MalformedRowError(f"split must be 'train' or 'test', got {man['split']!r}", path=path, column="split")
    return man


def read_states(path, split: Split) -> list[LanderState]:
    path = _require(Path(path))
    arr = _read_real_rows(path, TRAJECTORY_COLUMNS)
    finite = np.isfinite(arr[:, 7:])
    if not finite.all():
        i, j = np.argwhere(~finite)[0]
        raise MalformedRowError("attitude and angular rate must be finite", path=path, line=int(i) + 2, column=TRAJECTORY_COLUMNS[7 + j])
    states = [LanderState.from_row(r) for r in arr]
    _validate_states(states, split, path)
    return states


def read_ranges(path) -> list[RangeReading]:
    path = _require(Path(path))
    arr = _read_real_rows(path, RANGE_COLUMNS)
    ranges = [RangeReading(float(t), float(d)) for t, d in arr]
    _validate_ranges(ranges, path)
    return ranges


def read_sequence(dir_path) -> Sequence:
    """Load and validate a sequence directory.

    Every failure raises an :class:`InputValidationError` subclass naming
    the file and, where it applies, line and column.
    """
    d = Path(dir_path)
    if not d.is_dir():
        raise MissingFileError("sequence directory not found", path=d)
    man = read_manifest(d / "manifest.json")
    split = Split(man["split"])
    stream = read_events(d / "events.csv", man["sensor_width"], man["sensor_height"])
    seq = Sequence(man["id"], stream, read_states(d / "trajectory.csv", split), read_ranges(d / "ranges.csv"), split)
    _validate_time_units(seq, d / "events.csv")
    return seq


def read_truth(dir_path) -> list[LanderState] | None:
    """Hidden ground truth of a test sequence, or None if absent."""
    p = Path(dir_path) / "truth.csv"
    if not p.is_file():
        return None
    return read_states(p, Split.TRAIN)


# writing ---------------------------------------------------------------


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def atomic_write(path, data: str | bytes) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header: list[str], rows) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(r) for r in rows)
    return "\n".join(lines) + "\n"


def events_csv_text(stream: EventStream) -> str:
    if len(stream) == 0:
        return ",".join(EVENT_COLUMNS) + "\n"
    arr = np.column_stack((stream.t, stream.x, stream.y, stream.p)).astype(np.int64)
    body = pd.DataFrame(arr).to_csv(index=False, header=False, lineterminator="\n")
    return ",".join(EVENT_COLUMNS) + "\n" + body


def states_csv_text(states: list[LanderState]) -> str:
    return _csv_text(TRAJECTORY_COLUMNS, ([_fmt(v) for v in s.as_row()] for s in states))


def write_sequence(seq: Sequence, dir_path) -> None:
    """Inverse of :func:`read_sequence`."""
    if not set(np.unique(seq.stream.p).tolist()) <= {-1, 1}:
        raise InputValidationError("polarity must be -1/+1 when writing")
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {
        "id": seq.id,
        "split": seq.split.value,
        "sensor_width": seq.stream.sensor_width,
        "sensor_height": seq.stream.sensor_height,
    }
    atomic_write(d / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    atomic_write(d / "events.csv", events_csv_text(seq.stream))
    atomic_write(d / "trajectory.csv", states_csv_text(seq.trajectory))
    atomic_write(d / "ranges.csv", _csv_text(RANGE_COLUMNS, ([_fmt(r.t), _fmt(r.d)] for r in seq.ranges)))


def write_truth(states: list[LanderState], dir_path) -> None:
    atomic_write(Path(dir_path) / "truth.csv", states_csv_text(states))


# summaries and submissions ---------------------------------------------


def summarize(seq: Sequence, policy: WindowingPolicy | None = None) -> dict:
    """Descriptive statistics of a sequence; JSON-serialisable."""
    policy = policy or WindowingPolicy()
    st = seq.stream
    n = len(st)
    times = seq.state_times()
    if len(times) > 1:
        duration = float(times[-1] - times[0])
    else:
        duration = int(st.t[-1]) * 1e-6 if n else 0.0
    vel = seq.velocities()
    finite = vel[np.all(np.isfinite(vel), axis=1)] if len(vel) else vel
    out = {
        "id": seq.id,
        "split": seq.split.value,
        "sensor_width": st.sensor_width,
        "sensor_height": st.sensor_height,
        "event_count": n,
        "positive_events": int(np.count_nonzero(st.p > 0)),
        "duration_s": duration,
        "events_per_second": n / duration if duration > 0 else None,
        "state_count": len(seq.trajectory),
        "mean_speed_mps": float(np.linalg.norm(finite, axis=1).mean()) if len(finite) else None,
        "mean_velocity_mps": finite.mean(axis=0).tolist() if len(finite) else None,
        "velocity_available": bool(len(finite)),
        "range_min_m": min(r.d for r in seq.ranges) if seq.ranges else None,
        "range_max_m": max(r.d for r in seq.ranges) if seq.ranges else None,
        "frame_count": len(accumulate(st, policy, seq.t_stop_us)),
        "window": {"mode": policy.mode.value, "dt_us": policy.dt_us, "count": policy.count},
    }
    return out


def resample_velocities(sample_t, sample_v, query_t, max_extrapolation_s: float) -> np.ndarray:
    """Linear interpolation of (N, 3) velocities onto ``query_t`` (seconds).

    Queries between the first and last sample are always covered. Those
    further than ``max_extrapolation_s`` outside that span are gaps and raise
    :class:`CoverageError`; the others take the end value.
    """
    st = np.asarray(sample_t, float)
    sv = np.asarray(sample_v, float).reshape(-1, 3)
    q = np.asarray(query_t, float)
    if len(st) == 0:
        raise CoverageError("no estimates to interpolate", uncovered=q.tolist())
    gaps = q[(q < st[0] - max_extrapolation_s) | (q > st[-1] + max_extrapolation_s)]
    if len(gaps):
        shown = ", ".join(f"{t:.6g}" for t in gaps[:10])
        raise CoverageError(f"{len(gaps)} timestamps not covered by estimates: {shown}", uncovered=gaps.tolist())
    return np.column_stack([np.interp(q, st, sv[:, a]) for a in range(3)])


def write_submission(estimates: dict, targets: dict, path, max_extrapolation_s: float) -> None:
    """One row per target timestamp: ``sequence_id,t,vx,vy,vz``.

    ``estimates`` maps sequence id to ``(times_s, (N, 3) velocities)``,
    ``targets`` maps sequence id to the state timestamps to report. Rows are
    ordered by sequence id, then time.
    """
    rows = []
    for sid in sorted(targets):
        if sid not in estimates:
            raise CoverageError(f"no estimates for sequence {sid!r}", uncovered=list(targets[sid]))
        q = np.asarray(targets[sid], float)
        try:
            v = resample_velocities(*estimates[sid], q, max_extrapolation_s)
        except CoverageError as exc:
            raise CoverageError(f"sequence {sid}: {exc.message}", uncovered=exc.uncovered, path=path) from None
        rows.extend([sid, _fmt(t), _fmt(a), _fmt(b), _fmt(c)] for t, (a, b, c) in zip(q, v))
    atomic_write(path, _csv_text(SUBMISSION_COLUMNS, rows))


def read_submission(path) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Inverse of :func:`write_submission`: id -> (times, (N, 3) velocities)."""
    path = _require(Path(path))
    _check_header(path, SUBMISSION_COLUMNS)
    out: dict[str, list] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 5:
                raise MalformedRowError(f"expected 5 fields, got {len(row)}", path=path, line=lineno)
            try:
                vals = [float(v) for v in row[1:]]
            except ValueError:
                raise MalformedRowError("non-numeric value", path=path, line=lineno) from None
            out.setdefault(row[0], []).append(vals)
    res = {}
    for sid, rows in out.items():
        arr = np.array(rows)
        if np.any(np.diff(arr[:, 0]) < 0):
            raise NonMonotonicError(f"times of sequence {sid!r} are not sorted", path=path)
        res[sid] = (arr[:, 0], arr[:, 1:4])
    return res


def align_by_time(a_t, b_t, atol: float = 1e-9) -> None:
    """Raise :class:`AlignmentError` unless the two time vectors match."""
    a_t, b_t = np.asarray(a_t, float), np.asarray(b_t, float)
    if a_t.shape != b_t.shape or not np.allclose(a_t, b_t, rtol=0, atol=atol):
        raise AlignmentError(f"series are not aligned ({len(a_t)} vs {len(b_t)} samples)")
