"""Effective run configuration: built-in defaults < config file < flags."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .egomotion import EgomotionConfig
from .errors import ConfigurationError
from .events import WindowingPolicy, WindowMode
from .geometry import CameraModel
from .homography import EccConfig

EULER_CONVENTIONS = ("zyx", "xyz")


@dataclass(frozen=True)
class RunConfig:
    windowing: WindowingPolicy = field(default_factory=WindowingPolicy)
    ecc: EccConfig = field(default_factory=EccConfig)
    camera: dict | None = None  # fx, fy and optionally cx, cy; None means identity
    calibration_path: str | None = None
    euler_convention: str = "zyx"
    output_dir: str | None = None  # commands that need one fall back to "./out"
    seed: int | None = None
    jobs: int = 1

    def __post_init__(self):
        if self.euler_convention not in EULER_CONVENTIONS:
            raise ConfigurationError(f"euler_convention must be one of {EULER_CONVENTIONS}")
        if self.jobs < 1:
            raise ConfigurationError("jobs must be >= 1")
        if self.camera is not None:
            unknown = set(self.camera) - {"fx", "fy", "cx", "cy"}
            if unknown or not {"fx", "fy"} <= set(self.camera):
                raise ConfigurationError("camera needs fx and fy, optionally cx and cy")

    def camera_for(self, width: int, height: int) -> CameraModel:
        if self.camera is None:
            return CameraModel.identity(width, height)
        c = self.camera
        return CameraModel(float(c["fx"]), float(c["fy"]), float(c.get("cx", width / 2.0)), float(c.get("cy", height / 2.0)))

    def egomotion(self, width: int, height: int) -> EgomotionConfig:
        return EgomotionConfig(
            policy=self.windowing,
            ecc=self.ecc,
            camera=self.camera_for(width, height),
            euler_convention=self.euler_convention,
        )

    def max_extrapolation_s(self) -> float:
        """How far past the outermost estimate a state may still be filled in."""
        if self.windowing.mode is WindowMode.FIXED_TIME:
            return 2.0 * self.windowing.dt_us * 1e-6
        return 0.5

    def to_dict(self) -> dict:
        w, e = self.windowing, self.ecc
        return {
            "windowing": {"mode": w.mode.value, "dt_us": w.dt_us, "count": w.count, "polarity_split": w.polarity_split},
            "ecc": {"max_iterations": e.max_iterations, "eps": e.eps, "smooth_sigma": e.smooth_sigma, "per_channel": e.per_channel},
            "camera": self.camera,
            "calibration_path": self.calibration_path,
            "euler_convention": self.euler_convention,
            "output_dir": self.output_dir,
            "seed": self.seed,
            "jobs": self.jobs,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _merge(cfg: RunConfig, d: dict) -> RunConfig:
    d = dict(d)
    unknown = set(d) - set(RunConfig.__dataclass_fields__)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    current = cfg.to_dict()
    kw = {}
    if "windowing" in d:
        w = _submerge(current["windowing"], d.pop("windowing"), "windowing")
        try:
            kw["windowing"] = WindowingPolicy(WindowMode(w["mode"]), int(w["dt_us"]), int(w["count"]), bool(w["polarity_split"]))
        except (ValueError, TypeError) as exc:
            raise ConfigurationError(f"bad windowing config: {exc}") from None
    if "ecc" in d:
        e = _submerge(current["ecc"], d.pop("ecc"), "ecc")
        try:
            kw["ecc"] = EccConfig(int(e["max_iterations"]), float(e["eps"]), float(e["smooth_sigma"]), per_channel=bool(e["per_channel"]))
        except (ValueError, TypeError) as exc:
            raise ConfigurationError(f"bad ecc config: {exc}") from None
    kw.update(d)
    try:
        return replace(cfg, **kw)
    except TypeError as exc:
        raise ConfigurationError(f"bad config value: {exc}") from None


def _submerge(base: dict, upd, name: str) -> dict:
    if not isinstance(upd, dict):
        raise ConfigurationError(f"'{name}' must be an object")
    unknown = set(upd) - set(base)
    if unknown:
        raise ConfigurationError(f"unknown {name} keys: {sorted(unknown)}")
    return {**base, **upd}


def load_config_file(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"config file not found: {p}")
    try:
        d = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{p}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(d, dict):
        raise ConfigurationError(f"{p}: top level must be an object")
    return d


def resolve(config_path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the config file, then ``overrides`` (from flags)."""
    cfg = RunConfig()
    if config_path is not None:
        cfg = _merge(cfg, load_config_file(config_path))
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg
