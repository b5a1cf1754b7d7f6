"""Synthetic descents over a flat textured plane, with exact ground truth.

The world plane z = 0 carries a seeded, band-limited value-noise albedo. A
pinhole camera, nadir-mounted on the lander, renders log intensity at an
internal rate; each pixel emits an event whenever its log intensity moves
one contrast threshold away from the level at its previous event, with the
event time interpolated linearly between renders.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .dataio import LanderState, RangeReading, Sequence, Split
from .errors import ConfigurationError
from .events import EventStream
from .geometry import NADIR_MOUNT, CameraModel, EulerAngles, rotation_matrix
from .homography import Homography

logger = logging.getLogger(__name__)

DEFAULT_WIDTH = 256
DEFAULT_HEIGHT = 256
DEFAULT_CONTRAST = 0.15


@dataclass(frozen=True)
class SceneConfig:
    texture_seed: int = 0
    texture_scale: float = 0.5  # metres per texture feature
    albedo_range: tuple[float, float] = (0.03, 0.97)
    raster_size: int = 1024  # texels per side; the texture repeats beyond

    def __post_init__(self):
        lo, hi = self.albedo_range
        if not (0 < lo < hi <= 1):
            raise ConfigurationError(f"albedo_range must satisfy 0 < lo < hi <= 1, got {self.albedo_range}")
        if not self.texture_scale > 0:
            raise ConfigurationError("texture_scale must be positive")


class Texture:
    """Periodic albedo raster, sampled bilinearly in world metres."""

    def __init__(self, scene: SceneConfig):
        rng = np.random.default_rng(scene.texture_seed)
        n = scene.raster_size
        self.cell = scene.texture_scale / 4.0
        fine = ndimage.gaussian_filter(rng.standard_normal((n, n)), 2.0, mode="wrap")
        coarse = ndimage.gaussian_filter(rng.standard_normal((n, n)), 8.0, mode="wrap")
        tex = fine / fine.std() + 0.7 * coarse / coarse.std()
        tex = (tex - tex.min()) / (tex.max() - tex.min())
        lo, hi = scene.albedo_range
        self.albedo = lo + (hi - lo) * tex
        self.n = n

    def sample(self, wx: np.ndarray, wy: np.ndarray) -> np.ndarray:
        gx = wx / self.cell
        gy = wy / self.cell
        x0 = np.floor(gx)
        y0 = np.floor(gy)
        fx = gx - x0
        fy = gy - y0
        n = self.n
        xi = x0.astype(np.int64) % n
        yi = y0.astype(np.int64) % n
        xj = (xi + 1) % n
        yj = (yi + 1) % n
        a = self.albedo
        return (a[yi, xi] * (1 - fx) + a[yi, xj] * fx) * (1 - fy) + (a[yj, xi] * (1 - fx) + a[yj, xj] * fx) * fy


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    angles: EulerAngles = EulerAngles()

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, float).reshape(3))

    def camera_to_world(self) -> np.ndarray:
        return rotation_matrix(self.angles) @ NADIR_MOUNT


def plane_to_image(cam: CameraModel, pose: Pose) -> np.ndarray:
    """3x3 map from plane coordinates (X, Y, 1) to homogeneous pixels."""
    r_cw = pose.camera_to_world().T
    t = -r_cw @ pose.position
    return cam.K @ np.column_stack((r_cw[:, 0], r_cw[:, 1], t))


def plane_homography(cam: CameraModel, ref: Pose, view: Pose) -> Homography:
    """Exact homography taking pixels of ``ref`` to pixels of ``view``."""
    return Homography(plane_to_image(cam, view) @ np.linalg.inv(plane_to_image(cam, ref)))


class Renderer:
    """Ray-casts the textured plane for a fixed camera and sensor size."""

    def __init__(self, scene: SceneConfig, cam: CameraModel, width: int, height: int):
        self.texture = Texture(scene)
        self.cam = cam
        self.width, self.height = width, height
        yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
        self.rays = np.stack(((xx.ravel() - cam.cx) / cam.fx, (yy.ravel() - cam.cy) / cam.fy, np.ones(xx.size)))

    def albedo(self, pose: Pose) -> np.ndarray:
        if pose.position[2] <= 0:
            raise ConfigurationError("camera must be above the plane")
        d = pose.camera_to_world() @ self.rays
        if np.any(d[2] >= 0):
            raise ConfigurationError("plane is behind the camera for part of the view")
        lam = -pose.position[2] / d[2]
        wx = pose.position[0] + lam * d[0]
        wy = pose.position[1] + lam * d[1]
        return self.texture.sample(wx, wy).reshape(self.height, self.width)

    def log_intensity(self, pose: Pose) -> np.ndarray:
        return np.log(self.albedo(pose))


def render_view(scene: SceneConfig, cam: CameraModel, width: int, height: int, pose: Pose, ref_pose: Pose | None = None):
    """Albedo image of ``pose`` and the homography from ``ref_pose`` to it."""
    img = Renderer(scene, cam, width, height).albedo(pose)
    return img, plane_homography(cam, ref_pose or pose, pose)


class EventEmitter:
    """Per-pixel threshold-crossing event generator.

    Feed successive log-intensity images with :meth:`step`. Between two
    renders the log intensity is taken to vary linearly, and every crossing
    of ``reference ± k·threshold`` becomes one event.
    """

    def __init__(self, log_img: np.ndarray, t_us: float, threshold: float):
        if not threshold > 0:
            raise ConfigurationError("contrast threshold must be positive")
        self.ref = np.array(log_img, dtype=np.float64).ravel()
        self.prev = self.ref.copy()
        self.t_prev = float(t_us)
        self.threshold = threshold
        self.width = log_img.shape[1]

    def step(self, log_img: np.ndarray, t_us: float):
        """Return (t, x, y, p) arrays of the events since the last call."""
        cur = np.asarray(log_img, dtype=np.float64).ravel()
        c = self.threshold
        diff = cur - self.ref
        n = np.floor(np.abs(diff) / c).astype(np.int64)
        idx = np.flatnonzero(n)
        out_t = np.zeros(0, np.int64)
        out_i = np.zeros(0, np.int64)
        out_p = np.zeros(0, np.int8)
        if idx.size:
            counts = n[idx]
            pix = np.repeat(idx, counts)
            starts = np.cumsum(counts) - counts
            k = np.arange(counts.sum()) - np.repeat(starts, counts) + 1
            sign = np.sign(diff[pix])
            level = self.ref[pix] + sign * k * c
            span = cur[pix] - self.prev[pix]
            frac = np.where(span != 0, (level - self.prev[pix]) / np.where(span != 0, span, 1.0), 1.0)
            frac = np.clip(frac, 0.0, 1.0)
            out_t = np.rint(self.t_prev + frac * (t_us - self.t_prev)).astype(np.int64)
            out_i = pix
            out_p = sign.astype(np.int8)
            self.ref[idx] += np.sign(diff[idx]) * counts * c
        self.prev = cur
        self.t_prev = float(t_us)
        return out_t, out_i % self.width, out_i // self.width, out_p


@dataclass(frozen=True)
class DescentProfile:
    """Kinematics of one descent.

    Velocity and attitude are piecewise linear through their control
    points ``(t, a, b, c)``; positions integrate the velocity exactly.
    """

    initial_pos: tuple = (0.0, 0.0, 40.0)
    velocity_points: tuple = ((0.0, 0.0, 0.0, -4.0),)
    attitude_points: tuple = ((0.0, 0.0, 0.0, 0.0),)
    duration: float = 2.0
    contrast_threshold: float = DEFAULT_CONTRAST
    frame_rate_internal: float = 1000.0
    state_rate: float = 50.0

    def __post_init__(self):
        for name in ("velocity_points", "attitude_points"):
            pts = tuple(tuple(float(v) for v in p) for p in getattr(self, name))
            if not pts or any(len(p) != 4 for p in pts):
                raise ConfigurationError(f"{name} needs rows of (t, a, b, c)")
            if any(b[0] <= a[0] for a, b in zip(pts, pts[1:])):
                raise ConfigurationError(f"{name} times must increase")
            object.__setattr__(self, name, pts)
        object.__setattr__(self, "initial_pos", tuple(float(v) for v in self.initial_pos))
        if not self.duration > 0:
            raise ConfigurationError("duration must be positive")
        if not self.contrast_threshold > 0:
            raise ConfigurationError("contrast_threshold must be positive")
        if not (self.frame_rate_internal > 0 and self.state_rate > 0):
            raise ConfigurationError("rates must be positive")
        tt = np.linspace(0.0, self.duration, 2001)
        if np.any(self.position(tt)[:, 2] <= 0):
            raise ConfigurationError("altitude must stay positive throughout the descent")

    def _knots(self, pts):
        arr = np.array(pts)
        return arr[:, 0], arr[:, 1:]

    def velocity(self, t) -> np.ndarray:
        kt, kv = self._knots(self.velocity_points)
        t = np.atleast_1d(np.asarray(t, float))
        return np.column_stack([np.interp(t, kt, kv[:, a]) for a in range(3)])

    def position(self, t) -> np.ndarray:
        """Exact integral of the piecewise-linear velocity."""
        kt, kv = self._knots(self.velocity_points)
        t = np.atleast_1d(np.asarray(t, float))
        # extend knots with constant extrapolation from t=0 out to the query
        grid = np.unique(np.concatenate(([0.0], kt[(kt > 0)], [max(t.max(), 0.0)])))
        gv = np.column_stack([np.interp(grid, kt, kv[:, a]) for a in range(3)])
        cum = np.vstack((np.zeros(3), np.cumsum(0.5 * (gv[1:] + gv[:-1]) * np.diff(grid)[:, None], axis=0)))
        i = np.clip(np.searchsorted(grid, t, side="right") - 1, 0, len(grid) - 1)
        dt = t - grid[i]
        v0 = gv[i]
        v1 = self.velocity(t)
        return np.asarray(self.initial_pos) + cum[i] + 0.5 * (v0 + v1) * dt[:, None]

    def attitude(self, t) -> np.ndarray:
        kt, ka = self._knots(self.attitude_points)
        t = np.atleast_1d(np.asarray(t, float))
        return np.column_stack([np.interp(t, kt, ka[:, a]) for a in range(3)])

    def euler_rates(self, t) -> np.ndarray:
        kt, ka = self._knots(self.attitude_points)
        t = np.atleast_1d(np.asarray(t, float))
        if len(kt) == 1:
            return np.zeros((len(t), 3))
        slopes = np.diff(ka, axis=0) / np.diff(kt)[:, None]
        seg = np.clip(np.searchsorted(kt, t, side="right") - 1, 0, len(kt) - 2)
        inside = (t >= kt[0]) & (t < kt[-1])
        return np.where(inside[:, None], slopes[seg], 0.0)

    def body_rates(self, t) -> np.ndarray:
        """(p, q, r) for the yaw-pitch-roll convention."""
        ang = self.attitude(t)
        d = self.euler_rates(t)
        phi, th = ang[:, 0], ang[:, 1]
        p = d[:, 0] - d[:, 2] * np.sin(th)
        q = d[:, 1] * np.cos(phi) + d[:, 2] * np.cos(th) * np.sin(phi)
        r = -d[:, 1] * np.sin(phi) + d[:, 2] * np.cos(th) * np.cos(phi)
        return np.column_stack((p, q, r))

    def pose(self, t: float) -> Pose:
        return Pose(self.position(t)[0], EulerAngles(*self.attitude(t)[0]))

    def reversed(self) -> "DescentProfile":
        """Same path flown backwards in time."""
        end = self.position(self.duration)[0]
        d = self.duration
        vel = tuple((d - t, -a, -b, -c) for t, a, b, c in reversed(self._clip(self.velocity_points, self.velocity)))
        att = tuple((d - t, a, b, c) for t, a, b, c in reversed(self._clip(self.attitude_points, self.attitude)))
        return DescentProfile(tuple(end), vel, att, d, self.contrast_threshold, self.frame_rate_internal, self.state_rate)

    def _clip(self, pts, fn):
        ts = sorted({0.0, self.duration, *[p[0] for p in pts if 0 < p[0] < self.duration]})
        vals = fn(np.array(ts))
        return [(t, *v) for t, v in zip(ts, vals)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["initial_pos"] = list(self.initial_pos)
        d["velocity_points"] = [list(p) for p in self.velocity_points]
        d["attitude_points"] = [list(p) for p in self.attitude_points]
        return d


def default_camera(width: int = DEFAULT_WIDTH, height: int = DEFAULT_HEIGHT) -> CameraModel:
    """Pinhole with roughly 65 degrees of horizontal field of view."""
    return CameraModel(0.78 * width, 0.78 * width, width / 2.0, height / 2.0)


@dataclass(frozen=True)
class SimulationConfig:
    """Everything ``simulate`` needs; the JSON profile document mirrors it."""

    profile: DescentProfile = field(default_factory=DescentProfile)
    scene: SceneConfig = field(default_factory=SceneConfig)
    width: int = DEFAULT_WIDTH
    height: int = DEFAULT_HEIGHT
    camera: CameraModel | None = None
    sequence_id: str = "sim"

    @property
    def cam(self) -> CameraModel:
        return self.camera or default_camera(self.width, self.height)

    def to_dict(self) -> dict:
        c = self.cam
        return {
            "sequence_id": self.sequence_id,
            "sensor_width": self.width,
            "sensor_height": self.height,
            "camera": {"fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy},
            "scene": {**asdict(self.scene), "albedo_range": list(self.scene.albedo_range)},
            **self.profile.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationConfig":
        d = dict(d)
        width = int(d.pop("sensor_width", DEFAULT_WIDTH))
        height = int(d.pop("sensor_height", DEFAULT_HEIGHT))
        cam = d.pop("camera", None)
        scene = d.pop("scene", {}) or {}
        if "albedo_range" in scene:
            scene = {**scene, "albedo_range": tuple(scene["albedo_range"])}
        sid = str(d.pop("sequence_id", "sim"))
        known = set(DescentProfile.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown profile fields: {sorted(unknown)}")
        try:
            prof = DescentProfile(**d)
            scn = SceneConfig(**scene)
            camera = CameraModel(**cam) if cam else None
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None
        return cls(prof, scn, width, height, camera, sid)

    @classmethod
    def load(cls, path) -> "SimulationConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON: {exc.msg}") from None


def generate_events(
    scene: SceneConfig, profile: DescentProfile, cam: CameraModel, width: int, height: int, warmup: float = 0.1
) -> EventStream:
    """Event stream of the descent, sorted by (t, y, x).

    The sensor runs for ``warmup`` seconds before t=0 (motion extrapolated
    at the initial velocity) so that pixel reference levels are already
    spread out when recording starts; events before t=0 are discarded.
    """
    renderer = Renderer(scene, cam, width, height)
    rate = profile.frame_rate_internal
    n_pre = int(round(warmup * rate))
    n_steps = int(round(profile.duration * rate))
    times = np.arange(-n_pre, n_steps + 1) / rate
    times[-1] = profile.duration
    pos = profile.position(times)
    att = profile.attitude(times)
    emitter = EventEmitter(renderer.log_intensity(Pose(pos[0], EulerAngles(*att[0]))), times[0] * 1e6, profile.contrast_threshold)
    chunks = []
    for k in range(1, len(times)):
        img = renderer.log_intensity(Pose(pos[k], EulerAngles(*att[k])))
        t, x, y, p = emitter.step(img, times[k] * 1e6)
        keep = t >= 0
        if keep.any():
            chunks.append((t[keep], x[keep], y[keep], p[keep]))
    if not chunks:
        return EventStream(width, height)
    t, x, y, p = (np.concatenate(c) for c in zip(*chunks))
    order = np.lexsort((x, y, t))
    return EventStream(width, height, t[order], x[order], y[order], p[order])


def true_states(profile: DescentProfile, times) -> list[LanderState]:
    times = np.asarray(times, float)
    pos, vel = profile.position(times), profile.velocity(times)
    att, rates = profile.attitude(times), profile.body_rates(times)
    return [LanderState(float(t), pos[i], vel[i], EulerAngles(*att[i]), rates[i]) for i, t in enumerate(times)]


def range_readings(profile: DescentProfile, times) -> list[RangeReading]:
    """Distance along the body -z axis to the plane."""
    times = np.asarray(times, float)
    pos, att = profile.position(times), profile.attitude(times)
    out = []
    for t, p, a in zip(times, pos, att):
        cos_off = rotation_matrix(EulerAngles(*a))[2, 2]
        if cos_off <= 0:
            raise ConfigurationError(f"rangefinder does not see the surface at t={t}")
        out.append(RangeReading(float(t), float(p[2] / cos_off)))
    return out


def generate_sequence(cfg: SimulationConfig, split: Split | str = Split.TRAIN):
    """Build a sequence. Returns ``(sequence, truth)``; ``truth`` is None for train."""
    split = Split(split)
    prof = cfg.profile
    n_states = int(round(prof.duration * prof.state_rate))
    times = np.linspace(0.0, prof.duration, n_states + 1)
    states = true_states(prof, times)
    stream = generate_events(cfg.scene, prof, cfg.cam, cfg.width, cfg.height)
    ranges = range_readings(prof, times)
    truth = None
    if split is Split.TEST:
        truth = states
        nan3 = np.full(3, np.nan)
        states = [LanderState(s.t, nan3, nan3, s.euler, s.omega) for s in states]
    return Sequence(cfg.sequence_id, stream, states, ranges, split), truth


def random_descent(seed: int, duration: float = 3.0, width: int = DEFAULT_WIDTH, height: int = DEFAULT_HEIGHT, **kw) -> SimulationConfig:
    """Seeded 6-DoF descent whose velocity swings on every axis.

    Lateral velocity alternates sign between control points and the sink
    rate alternates between fast and slow, so each axis has a few m/s of
    variation. Tilt stays within a few degrees and drifts slowly; yaw
    turns freely. Roll and pitch rates are kept small because rotation about
    any axis but the optical one shifts the centre pixel like a translation.
    """
    rng = np.random.default_rng(seed)
    n = 4
    ts = np.linspace(0.0, duration, n)
    alt = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    lateral = rng.uniform(2.5, 5.0, size=(n, 2)) * alt[:, None] * rng.choice([-1.0, 1.0], size=2)
    vz = np.where(alt > 0, rng.uniform(-6.0, -4.5, n), rng.uniform(-2.5, -1.5, n))
    if rng.random() < 0.5:
        vz = vz[::-1]
    vel = tuple((t, a, b, c) for t, (a, b), c in zip(ts, lateral, vz))
    tilt0 = rng.uniform(-0.05, 0.05, size=2)
    tilt1 = tilt0 + rng.uniform(-0.0005, 0.0005, size=2) * duration
    psi0 = rng.uniform(-np.pi, np.pi)
    psi1 = psi0 + rng.uniform(-0.15, 0.15) * duration
    att = ((0.0, tilt0[0], tilt0[1], psi0), (duration, tilt1[0], tilt1[1], psi1))
    z0 = rng.uniform(26.0, 32.0)
    xy0 = rng.uniform(-50.0, 50.0, size=2)
    prof = DescentProfile((xy0[0], xy0[1], z0), vel, att, duration, **kw)
    return SimulationConfig(prof, SceneConfig(texture_seed=seed), width, height, None, f"sim{seed:03d}")
