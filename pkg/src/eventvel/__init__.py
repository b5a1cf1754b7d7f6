"""Lander velocity estimation from event-camera data.

Events are accumulated into binary frames, consecutive frames are aligned
with an ECC homography, and the homography at the image centre is turned
into a metric velocity using the rangefinder and the known attitude.
"""

from .calibration import CalibrationResult, TrajectoryScore, apply_calibration, fit_scale_factors, pearson, score_trajectory
from .dataio import Sequence, Split, read_sequence, write_sequence
from .egomotion import EgomotionConfig, VelocitySample, camera_translation, estimate_sequence, to_world_velocity
from .events import EventStream, Frame, WindowingPolicy, WindowMode, accumulate
from .geometry import CameraModel, EulerAngles, rotation_matrix
from .homography import EccConfig, EccResult, Homography, estimate_ecc, warp_frame

__version__ = "0.1.0"

__all__ = [
    "CalibrationResult",
    "CameraModel",
    "EccConfig",
    "EccResult",
    "EgomotionConfig",
    "EulerAngles",
    "EventStream",
    "Frame",
    "Homography",
    "Sequence",
    "Split",
    "TrajectoryScore",
    "VelocitySample",
    "WindowMode",
    "WindowingPolicy",
    "accumulate",
    "apply_calibration",
    "camera_translation",
    "estimate_ecc",
    "estimate_sequence",
    "fit_scale_factors",
    "pearson",
    "read_sequence",
    "rotation_matrix",
    "score_trajectory",
    "to_world_velocity",
    "warp_frame",
    "write_sequence",
]
