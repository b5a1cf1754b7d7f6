"""Static figures and image dumps for the CLI diagnostics.

Everything renders off-screen with the Agg backend and is written as PNG,
which Agg produces deterministically.
"""

from __future__ import annotations

import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.image as mpimg  # noqa: E402
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .dataio import atomic_write  # noqa: E402
from .events import Frame  # noqa: E402

AXES = ("x", "y", "z")
_PNG_META = {"Software": None}


def frame_rgb(frame: Frame) -> np.ndarray:
    """White-on-black for one channel; red (positive) / green (negative) for two."""
    h, w = frame.height, frame.width
    rgb = np.zeros((h, w, 3), np.uint8)
    if frame.channels == 1:
        rgb[frame.pixels[0] > 0] = 255
    else:
        rgb[..., 0] = frame.pixels[0] * 255
        rgb[..., 1] = frame.pixels[1] * 255
    return rgb


def _save_array(path, img: np.ndarray, **kw) -> None:
    buf = io.BytesIO()
    mpimg.imsave(buf, img, format="png", metadata=_PNG_META, **kw)
    atomic_write(path, buf.getvalue())


def save_frame(frame: Frame, path) -> None:
    _save_array(path, frame_rgb(frame))


def triptych(frame_t: np.ndarray, warped: np.ndarray, next_frame: np.ndarray) -> tuple[np.ndarray, float]:
    """``[frame_t | warped | |warped - next|]`` as one uint8 image, plus mean abs diff."""
    diff = np.abs(warped - next_frame)
    panels = [np.clip(p, 0.0, 1.0) for p in (frame_t, warped, diff)]
    sep = np.full((frame_t.shape[0], 2), 0.5)
    img = np.hstack((panels[0], sep, panels[1], sep, panels[2]))
    return np.rint(img * 255).astype(np.uint8), float(diff.mean())


def save_triptych(img: np.ndarray, path) -> None:
    _save_array(path, img, cmap="gray", vmin=0, vmax=255)


def _save_figure(fig, path) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=100, metadata=_PNG_META)
    plt.close(fig)
    atomic_write(path, buf.getvalue())


def plot_velocity_comparison(t, est, truth, path, *, title: str = "", normalized: bool = False, correlations=None) -> None:
    """Three stacked panels, estimate against ground truth per axis."""
    fig, axes = plt.subplots(3, 1, figsize=(8, 7), sharex=True)
    unit = "z-score" if normalized else "m/s"
    for a, ax in enumerate(axes):
        ax.plot(t, est[:, a], color="tab:blue", lw=1.2, label="estimated")
        if truth is not None:
            ax.plot(t, truth[:, a], color="tab:orange", lw=1.2, ls="--", label="ground truth")
        label = f"v{AXES[a]} [{unit}]"
        if correlations is not None and correlations[a] is not None:
            label += f"\nr={correlations[a]:.3f}"
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
    axes[0].legend(loc="upper right", fontsize=8)
    axes[-1].set_xlabel("t [s]")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    _save_figure(fig, Path(path))
