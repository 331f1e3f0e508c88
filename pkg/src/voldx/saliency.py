"""Model explanations: occlusion sensitivity maps and 3D Grad-CAM.

Occlusion sweeps a fill patch over a stride lattice (boundary patches are
clipped, so every voxel is covered); a voxel's importance is the mean of
f(x) - f(x_occluded) over the patches covering it, so positive values mark
regions whose occlusion lowers the predicted probability. Grad-CAM weights a
residual block's channels by the spatially pooled gradient of the output
probability, rectifies the weighted sum, and upsamples it trilinearly to
volume resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PatchLargerThanVolume
from .models import Model, gradcam_block_gradient


@dataclass
class OcclusionSpec:
    patch: tuple[int, int, int] = (16, 16, 8)
    stride: tuple[int, int, int] = (8, 8, 4)
    fill: str | float = "mean"  # "mean", "zero", or an explicit value

    def __post_init__(self):
        if any(p < 1 for p in self.patch) or any(s < 1 for s in self.stride):
            raise ValueError("patch and stride entries must be >= 1")
        if isinstance(self.fill, str) and self.fill not in ("mean", "zero"):
            raise ValueError(f"fill must be 'mean', 'zero' or a number, got {self.fill!r}")


@dataclass
class SaliencyMap:
    values: np.ndarray
    method: str  # "osm" | "gradcam"
    normalization: tuple[float, float] | None = None


def _fill_value(volume: np.ndarray, spec: OcclusionSpec) -> float:
    if spec.fill == "mean":
        return float(volume.mean())
    if spec.fill == "zero":
        return 0.0
    return float(spec.fill)


def occlusion_positions(shape, spec: OcclusionSpec):
    """Stride-lattice patch origins; the tail patch is clipped, not skipped."""
    axes = []
    for n, s in zip(shape, spec.stride):
        axes.append(list(range(0, n, s)))
    return [(x, y, z) for x in axes[0] for y in axes[1] for z in axes[2]]


def occlusion_map(
    evaluator,
    volume: np.ndarray,
    spec: OcclusionSpec | None = None,
    batch_evaluator=None,
    batch_size: int = 8,
) -> SaliencyMap:
    """Occlusion sensitivity of ``evaluator`` (volume -> probability).

    ``batch_evaluator`` optionally maps a stacked [K, X, Y, Z] array to K
    probabilities in one call; results are identical to the one-by-one path.
    """
    spec = spec or OcclusionSpec()
    shape = volume.shape
    if any(p > n for p, n in zip(spec.patch, shape)):
        raise PatchLargerThanVolume(f"patch {spec.patch} exceeds volume {shape}")
    fill = _fill_value(volume, spec)
    base = float(evaluator(volume)) if batch_evaluator is None else float(
        batch_evaluator(volume[None])[0]
    )

    positions = occlusion_positions(shape, spec)
    contrib = np.zeros(shape, dtype=np.float64)
    count = np.zeros(shape, dtype=np.int64)

    def slices(origin):
        return tuple(
            slice(o, min(o + p, n)) for o, p, n in zip(origin, spec.patch, shape)
        )

    if batch_evaluator is None:
        for origin in positions:
            sl = slices(origin)
            occluded = volume.copy()
            occluded[sl] = fill
            delta = base - float(evaluator(occluded))
            contrib[sl] += delta
            count[sl] += 1
    else:
        for start in range(0, len(positions), batch_size):
            chunk = positions[start : start + batch_size]
            stack = np.repeat(volume[None], len(chunk), axis=0)
            for j, origin in enumerate(chunk):
                stack[(j,) + slices(origin)] = fill
            outs = np.asarray(batch_evaluator(stack), dtype=np.float64)
            for j, origin in enumerate(chunk):
                sl = slices(origin)
                contrib[sl] += base - outs[j]
                count[sl] += 1

    return SaliencyMap(values=contrib / count, method="osm")


def _resize_linear(arr: np.ndarray, target) -> np.ndarray:
    """Separable endpoint-aligned linear resize (same convention as SIZ)."""
    out = arr.astype(np.float64)
    for axis in range(3):
        n_src = out.shape[axis]
        n_tgt = int(target[axis])
        if n_tgt == n_src:
            continue
        if n_src == 1:
            out = np.repeat(out, n_tgt, axis=axis)
            continue
        coords = (
            np.arange(n_tgt, dtype=np.float64) * (n_src - 1) / (n_tgt - 1)
            if n_tgt > 1
            else np.array([(n_src - 1) / 2.0])
        )
        i0 = np.floor(coords).astype(np.int64)
        i0 = np.minimum(i0, n_src - 2)
        w = coords - i0
        lo = np.take(out, i0, axis=axis)
        hi = np.take(out, i0 + 1, axis=axis)
        shape = [1] * out.ndim
        shape[axis] = n_tgt
        w = w.reshape(shape)
        out = lo * (1.0 - w) + hi * w
    return out


def grad_cam(
    model: Model,
    volume: np.ndarray,
    clinical=None,
    target_block: int = 0,
) -> SaliencyMap:
    """Grad-CAM at a residual block (default: the final block).

    Channel weights are the spatial means of d(probability)/d(activation);
    the rectified weighted activation sum is upsampled to volume shape.
    """
    if target_block == 0:
        target_block = len(model.spec.block_channels)
    clin = None if clinical is None else np.asarray(clinical, dtype=np.float64).reshape(1, -1)
    _, acts, grads = gradcam_block_gradient(
        model, volume[None], clin, target_block=target_block
    )
    a = acts[0].astype(np.float64)       # [C, x, y, z]
    g = grads[0].astype(np.float64)
    weights = g.mean(axis=(1, 2, 3))
    raw = np.maximum(np.tensordot(weights, a, axes=1), 0.0)
    return SaliencyMap(values=_resize_linear(raw, volume.shape), method="gradcam")


def normalize_map(smap: SaliencyMap) -> SaliencyMap:
    """Min-max normalize to [0, 1], recording (lo, hi); constant maps go to zero."""
    v = smap.values.astype(np.float64)
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        return SaliencyMap(np.zeros_like(v), smap.method, normalization=(lo, hi))
    return SaliencyMap((v - lo) / (hi - lo), smap.method, normalization=(lo, hi))
