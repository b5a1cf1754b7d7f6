"""Camera intrinsics, attitude and rotation conventions.

Frames:

* camera: x right, y down, z along the optical axis (toward the surface);
* body: the lander frame, rotated into the world by the Euler angles;
* world: fixed, z up, surface at z = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

# Nadir-pointing mount, camera-to-body: camera x = body x, camera z = body -z.
NADIR_MOUNT = np.diag([1.0, -1.0, -1.0])


@dataclass(frozen=True)
class CameraModel:
    fx: float = 1.0
    fy: float = 1.0
    cx: float = 0.0
    cy: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigurationError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @classmethod
    def identity(cls, width: int, height: int) -> "CameraModel":
        """Unit focal length, principal point at the image centre."""
        return cls(1.0, 1.0, width / 2.0, height / 2.0)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class EulerAngles:
    phi: float = 0.0
    theta: float = 0.0
    psi: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite([self.phi, self.theta, self.psi])):
            raise ConfigurationError("Euler angles must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.phi, self.theta, self.psi])


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def rotation_matrix(angles: EulerAngles, convention: str = "zyx") -> np.ndarray:
    """Body-to-world rotation.

    ``"zyx"`` (default) is yaw-pitch-roll, ``Rz(psi) Ry(theta) Rx(phi)``;
    ``"xyz"`` is ``Rx(phi) Ry(theta) Rz(psi)``.
    """
    if convention == "zyx":
        return _rz(angles.psi) @ _ry(angles.theta) @ _rx(angles.phi)
    if convention == "xyz":
        return _rx(angles.phi) @ _ry(angles.theta) @ _rz(angles.psi)
    raise ConfigurationError(f"unknown Euler convention {convention!r}")
