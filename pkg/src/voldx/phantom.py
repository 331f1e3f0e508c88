"""Synthetic head phantoms with known ground truth.

A phantom is an ellipsoidal skull shell around a noisy brain interior on an
air background, optionally carrying a hyperdense spherical lesion whose exact
voxel mask is returned alongside the volume. Everything is a pure function of
the spec (including its seed), so phantoms double as regression fixtures and
saliency oracles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LesionOutsideBrain
from .volume import Volume

AIR_HU = -1000.0


@dataclass
class LesionSpec:
    """Hyperdense sphere: center in voxel coordinates, radius in mm."""

    center: tuple[float, float, float]
    radius_mm: float = 5.0
    intensity: float = 70.0

    def __post_init__(self):
        if not self.radius_mm > 0:
            raise ValueError(f"lesion radius must be > 0, got {self.radius_mm}")


@dataclass
class PhantomSpec:
    shape: tuple[int, int, int] = (80, 80, 40)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    skull_intensity: float = 900.0
    brain_intensity: float = 30.0
    lesion: LesionSpec | None = None
    noise_std: float = 5.0
    seed: int = 0
    # geometry knobs: ellipsoid semi-axes as a fraction of each half-extent,
    # and skull shell thickness in mm
    head_fraction: tuple[float, float, float] = (0.88, 0.88, 0.82)
    skull_thickness_mm: float = 3.0


def _mm_grids(shape, spacing):
    center = [(n - 1) / 2.0 for n in shape]
    axes = [
        (np.arange(n, dtype=np.float64) - c) * s
        for n, c, s in zip(shape, center, spacing)
    ]
    return np.meshgrid(*axes, indexing="ij")


def _ellipsoid_mask(grids, semi_axes_mm):
    rho2 = sum((g / a) ** 2 for g, a in zip(grids, semi_axes_mm))
    return rho2 <= 1.0


def lesion_mask(spec: LesionSpec, shape, spacing) -> np.ndarray:
    """Boolean voxel mask of the lesion sphere (voxel-center inclusion)."""
    gx, gy, gz = np.meshgrid(
        *[np.arange(n, dtype=np.float64) for n in shape], indexing="ij"
    )
    d2 = (
        ((gx - spec.center[0]) * spacing[0]) ** 2
        + ((gy - spec.center[1]) * spacing[1]) ** 2
        + ((gz - spec.center[2]) * spacing[2]) ** 2
    )
    return d2 <= spec.radius_mm ** 2


def generate_phantom(spec: PhantomSpec) -> tuple[Volume, np.ndarray]:
    """Render the phantom; returns (volume in HU, boolean lesion mask)."""
    shape = tuple(int(n) for n in spec.shape)
    grids = _mm_grids(shape, spec.spacing)
    outer_mm = [
        f * (n - 1) * s / 2.0
        for f, n, s in zip(spec.head_fraction, shape, spec.spacing)
    ]
    inner_mm = [max(a - spec.skull_thickness_mm, 1.0) for a in outer_mm]
    outer = _ellipsoid_mask(grids, outer_mm)
    inner = _ellipsoid_mask(grids, inner_mm)

    vox = np.full(shape, AIR_HU, dtype=np.float64)
    vox[outer] = spec.skull_intensity
    vox[inner] = spec.brain_intensity

    if spec.lesion is not None:
        lmask = lesion_mask(spec.lesion, shape, spec.spacing)
        if not lmask.any():
            raise LesionOutsideBrain("lesion sphere covers no voxel")
        if np.any(lmask & ~inner):
            raise LesionOutsideBrain(
                f"lesion at {spec.lesion.center} r={spec.lesion.radius_mm}mm "
                "extends outside the brain interior"
            )
        vox[lmask] = spec.lesion.intensity
    else:
        lmask = np.zeros(shape, dtype=bool)

    if spec.noise_std > 0:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed)))
        noise = rng.normal(0.0, spec.noise_std, size=shape)
        vox[inner] += noise[inner]

    return Volume(vox, spec.spacing), lmask


def add_scanner_bed(
    vol: Volume,
    intensity: float = 500.0,
    thickness: int = 3,
) -> Volume:
    """Return a copy with a bright slab along low-y rows, mimicking a bed.

    The slab spans x and z at y in [0, thickness); phantom head ellipsoids
    leave that margin empty, so the slab is a disjoint bright component.
    """
    out = vol.voxels.copy()
    out[:, :thickness, :] = intensity
    return Volume(out, vol.spacing)
