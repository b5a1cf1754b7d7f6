"""From frame-to-frame homographies to world-frame velocities.

The camera looks at a locally flat surface. For each pair of frames the
centre pixel is pushed through the homography: its image displacement,
times the range to the surface, gives the lateral translation; the local
scale change (square root of the warp Jacobian's determinant) gives the
translation along the optical axis. Rotating by the known attitude puts the
result in the world frame (see :mod:`eventvel.geometry` for the frames).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    InsufficientDataError,
    MissingInputError,
    NumericalError,
    ReflectionError,
)
from .dataio import TimeSeries, interpolate_series
from .events import EventStream, Frame, WindowingPolicy, accumulate
from .geometry import NADIR_MOUNT, CameraModel, EulerAngles, rotation_matrix
from .homography import EccConfig, EccResult, Homography, apply_point, estimate_frames, jacobian_at

logger = logging.getLogger(__name__)

__all__ = [
    "NADIR_MOUNT",
    "CameraModel",
    "EgomotionConfig",
    "EulerAngles",
    "VelocitySample",
    "camera_motion",
    "camera_translation",
    "estimate_sequence",
    "rotation_matrix",
    "to_world_velocity",
]


def camera_translation(h: Homography, cam: CameraModel, range_m: float, dt_s: float | None = None):
    """Metric inter-frame displacement read off the centre pixel.

    Returns ``(dx, dy, dz, s)``: ``dx, dy`` are the centre pixel's image
    displacement scaled to metres at ``range_m``; ``s`` the isotropic scale
    change at the centre and ``dz = (s - 1) * range_m``, positive when the
    image expands (approach). ``dx, dy`` follow the image motion of the
    scene, which is opposite to the camera's own lateral motion.

    ``dt_s`` is only checked; the result is a displacement, not a rate.
    """
    if dt_s is not None and not dt_s > 0:
        raise ConfigurationError(f"dt_s must be positive, got {dt_s}")
    if not range_m > 0:
        raise ConfigurationError(f"range must be positive, got {range_m}")
    c = (cam.cx, cam.cy)
    u2, v2 = apply_point(h, c)
    det = float(np.linalg.det(jacobian_at(h, c)))
    if det <= 0:
        raise ReflectionError(f"warp Jacobian determinant {det:.3g} is not positive at the centre")
    s = np.sqrt(det)
    return (u2 - cam.cx) * range_m / cam.fx, (v2 - cam.cy) * range_m / cam.fy, (s - 1.0) * range_m, s


def camera_motion(dx: float, dy: float, dz: float) -> np.ndarray:
    """Camera ego-displacement from :func:`camera_translation` output.

    The scene slides opposite to the camera in x and y; approach is already
    expressed as positive camera z.
    """
    return np.array([-dx, -dy, dz])


def to_world_velocity(v_cam, angles: EulerAngles, mount: np.ndarray = NADIR_MOUNT, convention: str = "zyx") -> np.ndarray:
    """``R(angles) · mount · v_cam``. Origins cancel for velocities."""
    return rotation_matrix(angles, convention) @ np.asarray(mount, float) @ np.asarray(v_cam, float)


@dataclass(frozen=True)
class VelocitySample:
    t: int  # microseconds, midpoint between the two frame centres
    v: np.ndarray
    v_cam: np.ndarray
    ecc_value: float = float("nan")
    gap_filled: bool = False
    static: bool = False
    clamped: bool = False
    homography: Homography | None = field(default=None, repr=False)

    @property
    def t_s(self) -> float:
        return self.t * 1e-6


@dataclass(frozen=True)
class EgomotionConfig:
    policy: WindowingPolicy = field(default_factory=WindowingPolicy)
    ecc: EccConfig = field(default_factory=EccConfig)
    camera: CameraModel | None = None  # None: identity model for the sensor size
    mount: np.ndarray = field(default_factory=lambda: NADIR_MOUNT.copy())
    euler_convention: str = "zyx"
    warm_start: bool = True
    include_partial: bool = False


def estimate_sequence(
    stream: EventStream,
    ranges: TimeSeries,
    orientations: TimeSeries,
    cfg: EgomotionConfig | None = None,
    t_stop_us: int | None = None,
) -> list[VelocitySample]:
    """Velocity per consecutive frame pair, in the world frame.

    ``ranges`` holds one column (metres), ``orientations`` three (phi,
    theta, psi in radians); both are sampled at the pair midpoint. Pairs
    where neither frame saw an event are static: identity homography, zero
    velocity. Pairs whose alignment fails numerically repeat the previous
    valid velocity and are flagged ``gap_filled``.
    """
    cfg = cfg or EgomotionConfig()
    if len(ranges.t) == 0:
        raise MissingInputError("range series is empty")
    if len(orientations.t) == 0:
        raise MissingInputError("orientation series is empty")
    cam = cfg.camera or CameraModel.identity(stream.sensor_width, stream.sensor_height)
    frames = [f for f in accumulate(stream, cfg.policy, t_stop_us) if cfg.include_partial or not f.partial]
    if len(frames) < 2:
        raise InsufficientDataError(f"need at least 2 frames, got {len(frames)}")
    att = TimeSeries(orientations.t, np.unwrap(orientations.values, axis=0))
    samples: list[VelocitySample] = []
    init = cfg.ecc.init
    last_v, last_vc = np.zeros(3), np.zeros(3)
    for fa, fb in zip(frames[:-1], frames[1:]):
        samples.append(_pair_velocity(fa, fb, ranges, att, cam, cfg, init, last_v, last_vc))
        s = samples[-1]
        if not s.gap_filled:
            last_v, last_vc = s.v, s.v_cam
            if cfg.warm_start and s.homography is not None:
                init = s.homography
    return samples


def _pair_velocity(fa: Frame, fb: Frame, ranges, att, cam, cfg, init, last_v, last_vc) -> VelocitySample:
    t_mid = (fa.t_mid + fb.t_mid) // 2
    dt_s = (fb.t_mid - fa.t_mid) * 1e-6
    rng, c1 = interpolate_series(ranges, t_mid * 1e-6)
    ang, c2 = interpolate_series(att, t_mid * 1e-6)
    clamped = c1 or c2
    angles = EulerAngles(*ang)
    if fa.event_count == 0 and fb.event_count == 0:
        h = Homography.identity()
        zero = np.zeros(3)
        return VelocitySample(t_mid, zero, zero.copy(), 1.0, static=True, clamped=clamped, homography=h)
    ecc_cfg = EccConfig(cfg.ecc.max_iterations, cfg.ecc.eps, cfg.ecc.smooth_sigma, init, cfg.ecc.per_channel)
    try:
        res: EccResult = estimate_frames(fa, fb, ecc_cfg)
        dx, dy, dz, _ = camera_translation(res.homography, cam, float(rng[0]), dt_s)
    except NumericalError as exc:
        logger.warning("pair at t=%d us: %s; holding previous velocity", t_mid, exc)
        return VelocitySample(t_mid, last_v.copy(), last_vc.copy(), float("nan"), gap_filled=True, clamped=clamped)
    v_cam = camera_motion(dx, dy, dz) / dt_s
    v = to_world_velocity(v_cam, angles, cfg.mount, cfg.euler_convention)
    return VelocitySample(t_mid, v, v_cam, res.ecc_value, clamped=clamped, homography=res.homography)
