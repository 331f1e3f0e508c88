"""Slice-montage rendering of saliency maps over anatomy.

Output layout mirrors the usual side-by-side presentation: one row per
requested slice; columns are the grayscale processed slice, then for each
method its raw colormapped map and the map blended over the slice (per-pixel
alpha = 0.4 * importance, so zero importance leaves anatomy untouched).
Rendering is pure array math plus a PNG write, so identical inputs produce
byte-identical files.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from .errors import IndexOutOfRange

OVERLAY_ALPHA = 0.4

# cold-to-hot ramp anchors (position, RGB); high importance maps to the hot end
_RAMP = (
    (0.00, (10, 10, 120)),
    (0.25, (35, 110, 210)),
    (0.50, (90, 200, 160)),
    (0.75, (250, 210, 50)),
    (1.00, (230, 30, 30)),
)

_AXES = {"x": 0, "y": 1, "axial": 2, "z": 2}


def apply_ramp(values: np.ndarray) -> np.ndarray:
    """Map values in [0,1] to RGB float [H, W, 3] by piecewise-linear anchors."""
    v = np.clip(values, 0.0, 1.0)
    rgb = np.zeros(v.shape + (3,), dtype=np.float64)
    for (p0, c0), (p1, c1) in zip(_RAMP[:-1], _RAMP[1:]):
        seg = (v >= p0) & (v <= p1)
        w = np.zeros_like(v)
        w[seg] = (v[seg] - p0) / (p1 - p0)
        for ch in range(3):
            rgb[..., ch][seg] = c0[ch] + (c1[ch] - c0[ch]) * w[seg]
    return rgb / 255.0


def _slice2d(arr: np.ndarray, axis: int, index: int) -> np.ndarray:
    if not 0 <= index < arr.shape[axis]:
        raise IndexOutOfRange(
            f"slice {index} outside axis of size {arr.shape[axis]}"
        )
    sl = np.take(arr, index, axis=axis)
    # display with the first remaining axis horizontal: rows = second axis
    return sl.T


def _gray_rgb(slice2d: np.ndarray) -> np.ndarray:
    g = np.clip(slice2d, 0.0, 1.0)
    return np.stack([g, g, g], axis=-1)


def render_overlay(
    volume: np.ndarray,
    maps: dict,
    axis: str,
    indices,
    out_path,
    gap: int = 2,
) -> str:
    """Write one PNG montage; ``maps`` is {method: normalized map array}.

    Rows are slice indices; columns are [anatomy] + per method [raw map,
    overlay]. Returns the output path.
    """
    if axis not in _AXES:
        raise ValueError(f"axis must be one of {sorted(_AXES)}, got {axis!r}")
    ax = _AXES[axis]
    methods = list(maps)
    rows = []
    for index in indices:
        anat = _slice2d(volume, ax, index)
        cells = [_gray_rgb(anat)]
        for method in methods:
            m = _slice2d(maps[method], ax, index)
            colored = apply_ramp(m)
            cells.append(colored)
            alpha = (OVERLAY_ALPHA * np.clip(m, 0.0, 1.0))[..., None]
            cells.append(_gray_rgb(anat) * (1.0 - alpha) + colored * alpha)
        rows.append(cells)

    ch, cw = rows[0][0].shape[:2]
    ncols = len(rows[0])
    height = len(rows) * ch + (len(rows) - 1) * gap
    width = ncols * cw + (ncols - 1) * gap
    canvas = np.ones((height, width, 3), dtype=np.float64)
    for r, cells in enumerate(rows):
        for c, cell in enumerate(cells):
            y0 = r * (ch + gap)
            x0 = c * (cw + gap)
            canvas[y0 : y0 + ch, x0 : x0 + cw] = cell
    img = Image.fromarray((np.round(canvas * 255.0)).astype(np.uint8))
    img.save(out_path, format="PNG")
    return str(out_path)
