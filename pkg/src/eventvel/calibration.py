"""Per-axis scale calibration and trajectory diagnostics.

Velocities estimated with an approximate camera model are off by a
multiplicative factor per axis. The factor is fitted in closed form against
ground truth (no bias term). The score reported here is a stand-in, the
mean of the per-axis RMSEs, and is labelled ``SURROGATE`` wherever it is
written out.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AlignmentError, ConfigurationError, DegenerateAxisError, MalformedRowError, MissingFileError, UndefinedCorrelationError

SCORE_LABEL = "SURROGATE mean per-axis velocity RMSE"


@dataclass(frozen=True)
class CalibrationResult:
    f: np.ndarray
    residual_rms: float
    n_samples: int

    def __post_init__(self):
        object.__setattr__(self, "f", np.asarray(self.f, float).reshape(3))
        if self.n_samples < 1 or not self.residual_rms >= 0:
            raise ConfigurationError("calibration needs n_samples >= 1 and residual_rms >= 0")

    def to_dict(self) -> dict:
        return {"f": [float(v) for v in self.f], "residual_rms": float(self.residual_rms), "n_samples": int(self.n_samples)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationResult":
        try:
            return cls(d["f"], float(d["residual_rms"]), int(d["n_samples"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedRowError(f"bad calibration document: {exc}") from None

    @classmethod
    def load(cls, path) -> "CalibrationResult":
        p = Path(path)
        if not p.is_file():
            raise MissingFileError("calibration file not found", path=p)
        try:
            return cls.from_dict(json.loads(p.read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise MalformedRowError(f"invalid JSON: {exc.msg}", path=p, line=exc.lineno) from None


def _stack(series) -> np.ndarray:
    if isinstance(series, np.ndarray):
        return np.asarray(series, float).reshape(-1, 3)
    parts = [np.asarray(s, float).reshape(-1, 3) for s in series]
    return np.vstack(parts) if parts else np.zeros((0, 3))


def fit_scale_factors(estimated, truth) -> CalibrationResult:
    """Least-squares factors ``f_a = sum(est_a * true_a) / sum(est_a ** 2)``.

    ``estimated`` and ``truth`` are (N, 3) arrays, or matching lists of them
    (one per sequence), sampled at the same timestamps.
    """
    est, tru = _stack(estimated), _stack(truth)
    if est.shape != tru.shape:
        raise AlignmentError(f"estimated {est.shape} and truth {tru.shape} differ")
    if len(est) == 0:
        raise DegenerateAxisError("no samples to calibrate on")
    den = np.sum(est * est, axis=0)
    if np.any(den == 0):
        raise DegenerateAxisError(f"axis {'xyz'[int(np.argmax(den == 0))]} has all-zero estimates")
    f = np.sum(est * tru, axis=0) / den
    resid = est * f - tru
    return CalibrationResult(f, float(np.sqrt(np.mean(resid**2))), len(est))


def apply_calibration(samples, f) -> np.ndarray:
    return np.asarray(samples, float).reshape(-1, 3) * np.asarray(f, float).reshape(1, 3)


@dataclass(frozen=True)
class TrajectoryScore:
    rmse_per_axis: np.ndarray
    score: float

    def to_dict(self) -> dict:
        return {"rmse_per_axis": [float(v) for v in self.rmse_per_axis], "score": float(self.score), "label": SCORE_LABEL}


def score_trajectory(estimated, truth) -> TrajectoryScore:
    est = np.asarray(estimated, float).reshape(-1, 3)
    tru = np.asarray(truth, float).reshape(-1, 3)
    if est.shape != tru.shape:
        raise AlignmentError(f"cannot score {len(est)} estimates against {len(tru)} truth samples")
    if len(est) == 0:
        raise AlignmentError("nothing to score")
    rmse = np.sqrt(np.mean((est - tru) ** 2, axis=0))
    return TrajectoryScore(rmse, float(rmse.mean()))


def normalize_trajectory(series):
    """Per-axis z-score. Returns ``(normalized, constant)``.

    Axes whose standard deviation is below 1e-12 come back as zeros and are
    flagged in the boolean ``constant`` array.
    """
    x = np.asarray(series, float)
    x = x.reshape(len(x), -1)
    if len(x) < 2:
        raise AlignmentError("need at least 2 samples to normalise")
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    constant = sd < 1e-12
    out = np.zeros_like(x)
    ok = ~constant
    out[:, ok] = (x[:, ok] - mu[ok]) / sd[ok]
    return out, constant


def pearson(a, b) -> float:
    a = np.asarray(a, float).ravel()
    b = np.asarray(b, float).ravel()
    if a.shape != b.shape:
        raise AlignmentError(f"series lengths differ: {len(a)} vs {len(b)}")
    if len(a) < 2:
        raise UndefinedCorrelationError("need at least 2 samples")
    az, bz = a - a.mean(), b - b.mean()
    da, db = np.sqrt(az @ az), np.sqrt(bz @ bz)
    if da < 1e-12 * max(1.0, np.abs(a).max()) or db < 1e-12 * max(1.0, np.abs(b).max()):
        raise UndefinedCorrelationError("correlation undefined for a constant series")
    return float(np.clip((az @ bz) / (da * db), -1.0, 1.0))
