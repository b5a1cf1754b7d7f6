"""Homography algebra, image warping and direct ECC alignment.

Pixel convention: integer coordinates address pixel centres, origin at the
top-left, x to the right, y down. Images are indexed ``img[y, x]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import (
    ConfigurationError,
    DegenerateInputError,
    EccDivergenceError,
    SingularityError,
    SingularProjectionError,
)
from .events import Frame

logger = logging.getLogger(__name__)

_EPS_PROJ = 1e-12
_EPS_DET = 1e-12


@dataclass(frozen=True, eq=False)
class Homography:
    """3x3 projective map, stored normalised so that ``h[2, 2] == 1``."""

    h: np.ndarray

    def __post_init__(self):
        m = np.array(self.h, dtype=np.float64).reshape(3, 3)
        if not np.all(np.isfinite(m)):
            raise SingularityError("homography has non-finite entries")
        if abs(m[2, 2]) < _EPS_DET:
            raise SingularityError("cannot normalise homography with h33 == 0")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) < _EPS_DET:
            raise SingularityError(f"homography is singular (det={np.linalg.det(m):.3g})")
        m.setflags(write=False)
        object.__setattr__(self, "h", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        return cls(np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]]))

    @classmethod
    def scaling(cls, s: float) -> "Homography":
        return cls(np.diag([s, s, 1.0]))

    def __matmul__(self, other: "Homography") -> "Homography":
        return compose(self, other)

    def allclose(self, other: "Homography", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.h, other.h, rtol=0.0, atol=atol))

    def __repr__(self) -> str:
        return f"Homography({np.array2string(self.h, precision=6, separator=', ')})"


def _denominator(h: np.ndarray, x, y):
    w = h[2, 0] * x + h[2, 1] * y + h[2, 2]
    if np.any(np.abs(w) < _EPS_PROJ):
        raise SingularProjectionError(f"projective denominator vanishes at ({x}, {y})")
    return w


def apply_point(h: Homography, u) -> tuple[float, float]:
    """Map pixel ``u = (x, y)`` through ``h``."""
    m = h.h
    x, y = float(u[0]), float(u[1])
    w = _denominator(m, x, y)
    return ((m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w, (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w)


def apply_points(h: Homography, pts: np.ndarray) -> np.ndarray:
    """Vectorised :func:`apply_point` over an (N, 2) array."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    m = h.h
    x, y = pts[:, 0], pts[:, 1]
    w = _denominator(m, x, y)
    return np.column_stack(((m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w, (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w))


def jacobian_at(h: Homography, u) -> np.ndarray:
    """Analytic 2x2 derivative of :func:`apply_point` with respect to ``u``.

    Rows are output coordinates (x', y'), columns input coordinates (x, y).
    """
    m = h.h
    x, y = float(u[0]), float(u[1])
    w = _denominator(m, x, y)
    xp = (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w
    yp = (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w
    return np.array(
        [
            [(m[0, 0] - xp * m[2, 0]) / w, (m[0, 1] - xp * m[2, 1]) / w],
            [(m[1, 0] - yp * m[2, 0]) / w, (m[1, 1] - yp * m[2, 1]) / w],
        ]
    )


def compose(a: Homography, b: Homography) -> Homography:
    """``a · b``: apply ``b`` first, then ``a``."""
    return Homography(a.h @ b.h)


def inverse(h: Homography) -> Homography:
    m = h.h
    if np.linalg.cond(m) > 1e12:
        raise SingularityError("homography is too close to singular to invert")
    return Homography(np.linalg.inv(m))


def corner_error(a: Homography, b: Homography, width: int, height: int) -> float:
    """Largest distance between where ``a`` and ``b`` send the image corners."""
    corners = np.array([[0, 0], [width - 1, 0], [width - 1, height - 1], [0, height - 1]], float)
    return float(np.max(np.linalg.norm(apply_points(a, corners) - apply_points(b, corners), axis=1)))


def _sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    return ndimage.map_coordinates(img, [ys, xs], order=1, mode="constant", cval=0.0, prefilter=False)


def warp_frame(src, h: Homography) -> tuple[np.ndarray, np.ndarray]:
    """Push ``src`` forward through ``h``: ``out(u) = src(h^-1 u)``.

    Bilinear interpolation. Returns the warped image and a boolean validity
    mask; samples falling outside ``src`` are zero and invalid.
    """
    img = src.merged() if isinstance(src, Frame) else np.asarray(src, dtype=np.float64)
    if img.size == 0:
        raise DegenerateInputError("cannot warp an empty image")
    hgt, wid = img.shape
    yy, xx = np.mgrid[0:hgt, 0:wid]
    pts = apply_points(inverse(h), np.column_stack((xx.ravel(), yy.ravel())))
    sx, sy = pts[:, 0], pts[:, 1]
    valid = (sx >= 0) & (sx <= wid - 1) & (sy >= 0) & (sy <= hgt - 1)
    out = np.zeros(img.size)
    out[valid] = _sample(img, sx[valid], sy[valid])
    return out.reshape(hgt, wid), valid.reshape(hgt, wid)


@dataclass(frozen=True)
class EccConfig:
    max_iterations: int = 100
    eps: float = 1e-6
    smooth_sigma: float = 2.0
    init: Homography = field(default_factory=Homography.identity)
    per_channel: bool = False

    def __post_init__(self):
        if not self.smooth_sigma > 0:
            # sigma 0 blurs nothing and leaves sparse binary frames without usable gradients
            raise ConfigurationError(f"smooth_sigma must be > 0, got {self.smooth_sigma}")
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be >= 1")
        if not self.eps > 0:
            raise ConfigurationError("eps must be > 0")


@dataclass(frozen=True)
class EccResult:
    homography: Homography
    ecc_value: float
    iterations: int
    converged: bool
    history: tuple = ()


def _as_image(f) -> np.ndarray:
    if isinstance(f, Frame):
        if f.channels != 1:
            raise ConfigurationError("estimate_ecc needs single-channel frames; merge polarity channels first")
        return f.pixels[0].astype(np.float64)
    img = np.asarray(f, dtype=np.float64)
    if img.ndim != 2:
        raise ConfigurationError(f"expected a 2-D image, got shape {img.shape}")
    return img


class _EccProblem:
    """Precomputed state for one template/target pair.

    Parameters are the 8 free entries of the homography expressed in
    centred, scaled coordinates (``x_n = (x - c) / s``), which keeps the
    Gauss-Newton normal matrix well conditioned.
    """

    def __init__(self, template: np.ndarray, target: np.ndarray, sigma: float):
        hgt, wid = template.shape
        self.shape = (hgt, wid)
        tmpl = ndimage.gaussian_filter(template, sigma, mode="constant")
        self.img = ndimage.gaussian_filter(target, sigma, mode="constant")
        self.gx = ndimage.gaussian_filter(target, sigma, order=(0, 1), mode="constant")
        self.gy = ndimage.gaussian_filter(target, sigma, order=(1, 0), mode="constant")
        if np.ptp(tmpl) <= 1e-12 or np.ptp(self.img) <= 1e-12:
            raise DegenerateInputError("frame is blank after smoothing")
        margin = int(np.ceil(2 * sigma))
        if 2 * margin + 4 > min(hgt, wid):
            margin = 0
        self.lo_x, self.hi_x = margin, wid - 1 - margin
        self.lo_y, self.hi_y = margin, hgt - 1 - margin
        yy, xx = np.mgrid[self.lo_y : self.hi_y + 1, self.lo_x : self.hi_x + 1]
        self.scale = max(wid, hgt) / 2.0
        self.cx, self.cy = (wid - 1) / 2.0, (hgt - 1) / 2.0
        self.xn = (xx.ravel() - self.cx) / self.scale
        self.yn = (yy.ravel() - self.cy) / self.scale
        self.tmpl = tmpl[self.lo_y : self.hi_y + 1, self.lo_x : self.hi_x + 1].ravel()
        self.norm = np.array([[1 / self.scale, 0, -self.cx / self.scale], [0, 1 / self.scale, -self.cy / self.scale], [0, 0, 1]])
        self.denorm = np.linalg.inv(self.norm)

    def to_params(self, h: Homography) -> np.ndarray:
        m = self.norm @ h.h @ self.denorm
        m = m / m[2, 2]
        return m.ravel()[:8].copy()

    def to_homography(self, p: np.ndarray) -> Homography:
        return Homography(self.denorm @ np.append(p, 1.0).reshape(3, 3) @ self.norm)

    def warp(self, p: np.ndarray):
        w = p[6] * self.xn + p[7] * self.yn + 1.0
        xw = (p[0] * self.xn + p[1] * self.yn + p[2]) / w
        yw = (p[3] * self.xn + p[4] * self.yn + p[5]) / w
        px = xw * self.scale + self.cx
        py = yw * self.scale + self.cy
        valid = (px >= self.lo_x) & (px <= self.hi_x) & (py >= self.lo_y) & (py <= self.hi_y) & (w > 0)
        return w, xw, yw, px, py, valid

    def correlation(self, p: np.ndarray) -> float:
        _, _, _, px, py, valid = self.warp(p)
        if valid.sum() < 16:
            return -np.inf
        t = self.tmpl[valid]
        iw = _sample(self.img, px[valid], py[valid])
        return _zncc(t, iw)

    def step(self, p: np.ndarray):
        """Return (correlation, parameter increment) at ``p``."""
        w, xw, yw, px, py, valid = self.warp(p)
        if valid.sum() < 16:
            raise DegenerateInputError("warp leaves too few overlapping pixels")
        px, py, w, xw, yw = px[valid], py[valid], w[valid], xw[valid], yw[valid]
        xn, yn = self.xn[valid], self.yn[valid]
        t = self.tmpl[valid]
        iw = _sample(self.img, px, py)
        gx = _sample(self.gx, px, py) * self.scale
        gy = _sample(self.gy, px, py) * self.scale
        a, b = xn / w, yn / w
        inv_w = 1.0 / w
        jac = np.column_stack(
            (gx * a, gx * b, gx * inv_w, gy * a, gy * b, gy * inv_w, -(gx * xw + gy * yw) * a, -(gx * xw + gy * yw) * b)
        )
        tz = t - t.mean()
        iz = iw - iw.mean()
        jac -= jac.mean(axis=0)
        hess = jac.T @ jac
        rho = _zncc(t, iw)
        g_i = jac.T @ iz
        g_t = jac.T @ tz
        try:
            hi_gi = np.linalg.solve(hess, g_i)
            hi_gt = np.linalg.solve(hess, g_t)
        except np.linalg.LinAlgError as exc:
            raise DegenerateInputError(f"singular normal matrix: {exc}") from None
        ii, ti = iz @ iz, tz @ iz
        proj_ii, proj_ti, proj_tt = g_i @ hi_gi, g_t @ hi_gi, g_t @ hi_gt
        den = ti - proj_ti
        if den > 0:
            lam = (ii - proj_ii) / den
        else:
            lam = max(np.sqrt(max(proj_ii, 0.0) / proj_tt), (proj_ti - ti) / proj_tt)
        return rho, lam * hi_gt - hi_gi


def _zncc(a: np.ndarray, b: np.ndarray) -> float:
    az = a - a.mean()
    bz = b - b.mean()
    den = np.sqrt((az @ az) * (bz @ bz))
    if den <= 0:
        return 0.0
    return float(np.clip((az @ bz) / den, -1.0, 1.0))


def estimate_ecc(template, target, cfg: EccConfig | None = None) -> EccResult:
    """Estimate the homography taking ``template`` (time t) onto ``target`` (t+1).

    A point ``u`` in the template is found at ``apply_point(H, u)`` in the
    target. Both images are Gaussian-smoothed with ``cfg.smooth_sigma``; the
    8 free parameters are updated by the ECC Gauss-Newton step. A step that
    lowers the correlation is halved, up to 8 times, and abandoned if it still
    does not improve. Iteration stops once the accepted correlation gain drops
    below ``cfg.eps`` or after ``cfg.max_iterations`` steps.
    """
    cfg = cfg or EccConfig()
    tmpl, tgt = _as_image(template), _as_image(target)
    if tmpl.shape != tgt.shape:
        raise ConfigurationError(f"frame shapes differ: {tmpl.shape} vs {tgt.shape}")
    prob = _EccProblem(tmpl, tgt, cfg.smooth_sigma)
    p = prob.to_params(cfg.init)
    rho = prob.correlation(p)
    history = [rho]
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        rho_here, dp = prob.step(p)
        if not (np.all(np.isfinite(dp)) and np.isfinite(rho_here)):
            raise EccDivergenceError("non-finite ECC update", it)
        alpha = 1.0
        accepted = False
        for _ in range(9):
            cand = p + alpha * dp
            rho_c = prob.correlation(cand)
            if not np.isfinite(rho_c) and rho_c != -np.inf:
                raise EccDivergenceError("non-finite correlation", it)
            if rho_c >= rho:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            converged = True
            break
        gain = rho_c - rho
        p, rho = cand, rho_c
        history.append(rho)
        if gain < cfg.eps:
            converged = True
            break
    try:
        h = prob.to_homography(p)
    except SingularityError:
        raise EccDivergenceError("estimate became singular", it) from None
    return EccResult(h, float(rho), it, converged, tuple(history))


def estimate_frames(frame_a: Frame, frame_b: Frame, cfg: EccConfig | None = None) -> EccResult:
    """ECC between two frames, handling polarity-split input.

    Split frames are OR-merged unless ``cfg.per_channel`` is set, in which
    case each polarity is aligned separately and the normalised matrices are
    averaged entry by entry.
    """
    cfg = cfg or EccConfig()
    if frame_a.channels == 1 or not cfg.per_channel:
        return estimate_ecc(frame_a.merged(), frame_b.merged(), cfg)
    results = [estimate_ecc(frame_a.pixels[c].astype(float), frame_b.pixels[c].astype(float), cfg) for c in range(frame_a.channels)]
    h = Homography(np.mean([r.homography.h for r in results], axis=0))
    return EccResult(
        h,
        float(np.mean([r.ecc_value for r in results])),
        max(r.iterations for r in results),
        all(r.converged for r in results),
    )
