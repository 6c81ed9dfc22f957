"""Heatmap rendering of saliency maps.

Images put time on the x axis and mel channel on the y axis (channel 0 at
the bottom). The colormap is fixed to "magma"; overlay mode blends the
saliency over a grayscale spectrogram at 60% opacity. Output size is the
map size times an integer scale factor, identical with or without overlay.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.image as mimage  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib import colormaps  # noqa: E402

from .errors import DomainError  # noqa: E402

COLORMAP = "magma"
OVERLAY_ALPHA = 0.6


def _to_image(map_2d, scale):
    # rows are channels with channel 0 at the bottom, columns are frames
    img = np.asarray(map_2d, dtype=np.float64).T[::-1, :]
    if scale > 1:
        img = np.kron(img, np.ones((scale, scale)))
    return img


def _colorize(img, cmap_name, vmin, vmax):
    span = vmax - vmin
    norm = (img - vmin) / span if span > 0 else np.zeros_like(img)
    return colormaps[cmap_name](np.clip(norm, 0.0, 1.0))[..., :3]


def render_map(map_2d, out_path, overlay_frames=None, scale=4):
    """Write a heatmap PNG; optionally blended over a spectrogram."""
    sal = _to_image(map_2d, scale)
    rgb = _colorize(sal, COLORMAP, float(sal.min()), float(sal.max()))
    if overlay_frames is not None:
        if np.asarray(overlay_frames).shape != np.asarray(map_2d).shape:
            raise DomainError("overlay spectrogram shape does not match map")
        base = _to_image(overlay_frames, scale)
        gray = _colorize(base, "gray", float(base.min()), float(base.max()))
        rgb = (1.0 - OVERLAY_ALPHA) * gray + OVERLAY_ALPHA * rgb
    mimage.imsave(out_path, np.clip(rgb, 0.0, 1.0))


def render_bundle(bundle, out_path, token=None, overlay_frames=None, scale=4):
    """Render the sentence map, or token map k when ``token`` is given."""
    if token is None:
        target = bundle.sentence
    else:
        if not (1 <= token <= bundle.n_positions):
            raise DomainError(
                f"token index {token} outside 1..{bundle.n_positions}"
            )
        target = bundle.spec_maps[token - 1]
    render_map(target, out_path, overlay_frames=overlay_frames, scale=scale)
