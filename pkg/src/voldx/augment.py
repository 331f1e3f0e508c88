"""Online 3D augmentation: random rotation, zoom, and y-axis flip.

Rotation (up to +-10 degrees about each axis) and isotropic zoom (0.9 to 1.2)
are composed into a single trilinear resample about the volume centre with
zero fill, so at most one interpolation touches the data; the flip is an
exact array reversal. Each transform fires independently with its configured
probability. Draws are consumed in a fixed order regardless of which
transforms fire, so a given RNG state always yields the same augmentation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass
class AugmentSpec:
    rotation_deg: float = 10.0
    zoom_range: tuple[float, float] = (0.9, 1.2)
    rotate_prob: float = 0.5
    zoom_prob: float = 0.5
    flip_prob: float = 0.5

    def __post_init__(self):
        for p in (self.rotate_prob, self.zoom_prob, self.flip_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} outside [0,1]")


def _rotation_matrix(angles_rad) -> np.ndarray:
    ax, ay, az = angles_rad
    cx, sx = math.cos(ax), math.sin(ax)
    cy, sy = math.cos(ay), math.sin(ay)
    cz, sz = math.cos(az), math.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rx @ ry @ rz


def augment(volume: np.ndarray, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    """Apply the drawn transforms to one volume; shape and [0,1] range preserved."""
    do_rotate = rng.random() < spec.rotate_prob
    angles = np.deg2rad(rng.uniform(-spec.rotation_deg, spec.rotation_deg, size=3))
    do_zoom = rng.random() < spec.zoom_prob
    zoom = float(rng.uniform(*spec.zoom_range))
    do_flip = rng.random() < spec.flip_prob

    out = volume
    if do_rotate or do_zoom:
        rot = _rotation_matrix(angles if do_rotate else (0.0, 0.0, 0.0))
        factor = zoom if do_zoom else 1.0
        # output coord o samples input at c + R^-1 (o - c) / f
        matrix = rot.T / factor
        center = (np.asarray(volume.shape) - 1) / 2.0
        offset = center - matrix @ center
        out = ndimage.affine_transform(
            out, matrix, offset=offset, order=1, mode="constant", cval=0.0
        )
        out = np.clip(out, 0.0, 1.0)
    if do_flip:
        out = out[:, ::-1, :]
    return np.ascontiguousarray(out) if out is not volume else volume.copy()
