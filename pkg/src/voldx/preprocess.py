"""CT volume preprocessing chain.

Raw Hounsfield volumes are brain-windowed to [0, 1], stripped of disconnected
bright clutter (scanner bed), resampled to a canonical matrix size by
spline-interpolated zoom, and min-max normalized. The default order applies
background removal *before* resampling so bed intensity cannot bleed into the
head during interpolation; ``order="paper-literal"`` restores the literal
window -> resample -> removal sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.interpolate import make_interp_spline

from .errors import DegenerateAxis, EmptyVolume, NonPositiveWidth
from .volume import Volume, load_volume

DEFAULT_WINDOW = (40.0, 80.0)  # brain window: level 40 HU, width 80 HU
DEFAULT_TARGET = (128, 128, 64)
DESK_TARGET = (64, 64, 32)


@dataclass
class WindowSpec:
    """Linear display window: level = centre HU, width = span in HU."""

    level: float = DEFAULT_WINDOW[0]
    width: float = DEFAULT_WINDOW[1]

    def __post_init__(self):
        if not self.width > 0:
            raise NonPositiveWidth(f"window width must be > 0, got {self.width}")


@dataclass
class PreprocessConfig:
    target_shape: tuple[int, int, int] = DEFAULT_TARGET
    window: WindowSpec = field(default_factory=WindowSpec)
    bg_threshold: float = 0.05
    connectivity: int = 26
    spline_order: int = 3
    order: str = "window-first"  # "window-first" | "paper-literal"


def window_volume(vol: Volume, window: WindowSpec | None = None) -> Volume:
    """Map HU values into [0, 1] linearly across the window, clamping outside.

    x -> clamp((x - (level - width/2)) / width, 0, 1)
    """
    w = window or WindowSpec()
    lo = w.level - w.width / 2.0
    out = np.clip((vol.voxels.astype(np.float64) - lo) / w.width, 0.0, 1.0)
    return Volume(out, vol.spacing)


def _connectivity_structure(connectivity: int) -> np.ndarray:
    rank = {6: 1, 18: 2, 26: 3}
    if connectivity not in rank:
        raise ValueError(f"connectivity must be 6, 18 or 26, got {connectivity}")
    return ndimage.generate_binary_structure(3, rank[connectivity])


def remove_background(
    vol: Volume,
    threshold: float = 0.05,
    connectivity: int = 26,
) -> tuple[Volume, np.ndarray]:
    """Zero everything outside the largest bright connected component.

    The windowed volume is binarized at ``threshold``, the largest 3D
    connected component is kept, its interior is filled slice-wise along z,
    and all voxels outside the filled mask are zeroed. Returns the masked
    volume and the boolean head mask.
    """
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must lie in (0,1), got {threshold}")
    x = vol.voxels
    binary = x > threshold
    if not binary.any():
        raise EmptyVolume(f"no voxel above threshold {threshold}")
    structure = _connectivity_structure(connectivity)
    labels, n = ndimage.label(binary, structure=structure)
    if n > 1:
        counts = np.bincount(labels.ravel())
        counts[0] = 0
        keep = int(np.argmax(counts))
        mask = labels == keep
    else:
        mask = binary
    filled = np.empty_like(mask)
    for k in range(mask.shape[2]):
        filled[:, :, k] = ndimage.binary_fill_holes(mask[:, :, k])
    out = np.where(filled, x, 0.0)
    return Volume(out, vol.spacing), filled


def _axis_coords(n_src: int, n_tgt: int) -> np.ndarray:
    """Endpoint-aligned sample coordinates: target i -> source i*(ns-1)/(nt-1)."""
    if n_tgt == 1:
        return np.array([(n_src - 1) / 2.0])
    return np.arange(n_tgt, dtype=np.float64) * (n_src - 1) / (n_tgt - 1)


def siz_resample(
    vol: Volume,
    target: tuple[int, int, int] = DEFAULT_TARGET,
    spline_order: int = 3,
    clamp: bool = True,
) -> Volume:
    """Spline-interpolated zoom to an exact target shape.

    Interpolation is separable: an order-k interpolating spline (not-a-knot
    for k=3) is built along each axis in turn and evaluated at endpoint
    aligned target coordinates, so unit zoom reproduces the input exactly.
    Spline overshoot is clipped back to [0, 1] unless ``clamp`` is False.
    """
    if spline_order < 1:
        raise ValueError(f"spline_order must be >= 1, got {spline_order}")
    shape = vol.shape
    if min(shape) < 2:
        raise DegenerateAxis(f"every axis needs >= 2 samples to resample, got {shape}")
    target = tuple(int(t) for t in target)
    if min(target) < 1:
        raise ValueError(f"target shape must be positive, got {target}")

    data = vol.voxels.astype(np.float64)
    for axis in range(3):
        n_src = data.shape[axis]
        n_tgt = target[axis]
        if n_tgt == n_src:
            continue
        k = min(spline_order, n_src - 1)
        grid = np.arange(n_src, dtype=np.float64)
        spline = make_interp_spline(grid, data, k=k, axis=axis)
        data = spline(_axis_coords(n_src, n_tgt))
        # BSpline evaluation moves the interpolation axis first; restore it
        data = np.moveaxis(data, 0, axis)
    if clamp:
        data = np.clip(data, 0.0, 1.0)
    new_spacing = tuple(
        vol.spacing[a] * shape[a] / target[a] for a in range(3)
    )
    return Volume(np.ascontiguousarray(data), new_spacing)


def normalize_intensity(vol: Volume) -> Volume:
    """Min-max rescale to span exactly [0, 1]; constant volumes become zeros."""
    x = vol.voxels.astype(np.float64)
    lo = float(x.min())
    hi = float(x.max())
    if hi == lo:
        return Volume(np.zeros_like(x), vol.spacing)
    return Volume((x - lo) / (hi - lo), vol.spacing)


def preprocess(
    source: "Volume | str",
    config: PreprocessConfig | None = None,
) -> Volume:
    """Full preprocessing chain: load -> window -> bed removal -> SIZ -> normalize.

    ``source`` may be a loaded Volume or a file path. With
    ``config.order == "paper-literal"`` the background removal runs after
    resampling instead (the literal published sequence).
    """
    cfg = config or PreprocessConfig()
    if cfg.order not in ("window-first", "paper-literal"):
        raise ValueError(f"unknown pipeline order {cfg.order!r}")
    vol = source if isinstance(source, Volume) else load_volume(source)
    vol = window_volume(vol, cfg.window)
    if cfg.order == "window-first":
        vol, _ = remove_background(vol, cfg.bg_threshold, cfg.connectivity)
        vol = siz_resample(vol, cfg.target_shape, cfg.spline_order)
    else:
        vol = siz_resample(vol, cfg.target_shape, cfg.spline_order)
        vol, _ = remove_background(vol, cfg.bg_threshold, cfg.connectivity)
    return normalize_intensity(vol)
