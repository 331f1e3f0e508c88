"""Labeled synthetic datasets: generation, manifests, and array loading.

``generate_dataset`` writes one VOLR volume per subject plus a JSON manifest
recording labels, clinical fields, lesion geometry and every seed, so a
dataset is fully reconstructible from (seed, parameters). Per-subject seeds
are derived with ``SeedSequence([generator_seed, subject_index, stream])``;
the stream tags below keep phantom noise, geometry draws and clinical draws
on independent streams.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clinical import ClinicalRecord, EncodingSchema, encode_clinical, generate_clinical
from .errors import InvalidPrevalence
from .phantom import LesionSpec, PhantomSpec, generate_phantom
from .preprocess import PreprocessConfig, preprocess
from .volume import Volume, load_volume, save_volume

MANIFEST_VERSION = 1

# seed-mixing stream tags
_STREAM_LABELS = 0
_STREAM_GEOMETRY = 1
_STREAM_NOISE = 2
_STREAM_CLINICAL = 3


@dataclass
class SubjectEntry:
    subject_id: str
    volume_path: str
    label: int
    clinical: ClinicalRecord
    seed: int
    lesion: LesionSpec | None = None

    def to_dict(self) -> dict:
        d = {
            "subject_id": self.subject_id,
            "volume_path": self.volume_path,
            "label": int(self.label),
            "clinical": self.clinical.to_dict(),
            "seed": int(self.seed),
            "lesion": None,
        }
        if self.lesion is not None:
            d["lesion"] = {
                "center": [float(c) for c in self.lesion.center],
                "radius_mm": float(self.lesion.radius_mm),
                "intensity": float(self.lesion.intensity),
            }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SubjectEntry":
        lesion = None
        if d.get("lesion"):
            lesion = LesionSpec(
                center=tuple(d["lesion"]["center"]),
                radius_mm=d["lesion"]["radius_mm"],
                intensity=d["lesion"]["intensity"],
            )
        return cls(
            subject_id=d["subject_id"],
            volume_path=d["volume_path"],
            label=int(d["label"]),
            clinical=ClinicalRecord.from_dict(d["clinical"]),
            seed=int(d["seed"]),
            lesion=lesion,
        )


@dataclass
class DatasetManifest:
    subjects: list[SubjectEntry]
    generator_seed: int
    prevalence: float
    lesion_signal: bool
    clinical_signal: bool
    raw_shape: tuple[int, int, int]
    spacing: tuple[float, float, float]
    noise_std: float
    root: str = "."
    format_version: int = MANIFEST_VERSION

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "generator_seed": int(self.generator_seed),
            "n": len(self.subjects),
            "prevalence": float(self.prevalence),
            "lesion_signal": bool(self.lesion_signal),
            "clinical_signal": bool(self.clinical_signal),
            "raw_shape": [int(v) for v in self.raw_shape],
            "spacing": [float(v) for v in self.spacing],
            "noise_std": float(self.noise_std),
            "subjects": [s.to_dict() for s in self.subjects],
        }

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.subjects], dtype=np.int64)

    def subject(self, subject_id: str) -> SubjectEntry:
        for s in self.subjects:
            if s.subject_id == subject_id:
                return s
        raise KeyError(f"no subject {subject_id!r} in manifest")

    def volume(self, entry: SubjectEntry) -> Volume:
        return load_volume(os.path.join(self.root, entry.volume_path))


def _json_dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def manifest_checksum(manifest: DatasetManifest) -> str:
    return hashlib.sha256(_json_dumps(manifest.to_dict()).encode()).hexdigest()


def save_manifest(manifest: DatasetManifest, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    with open(path) as fh:
        d = json.load(fh)
    m = DatasetManifest(
        subjects=[SubjectEntry.from_dict(s) for s in d["subjects"]],
        generator_seed=d["generator_seed"],
        prevalence=d["prevalence"],
        lesion_signal=d["lesion_signal"],
        clinical_signal=d["clinical_signal"],
        raw_shape=tuple(d["raw_shape"]),
        spacing=tuple(d["spacing"]),
        noise_std=d["noise_std"],
        root=str(Path(path).parent),
        format_version=d["format_version"],
    )
    ids = [s.subject_id for s in m.subjects]
    if len(set(ids)) != len(ids):
        raise ValueError("manifest contains duplicate subject ids")
    return m


# lesion geometry draws, relative to the brain interior
LESION_RADIUS_RANGE_MM = (3.5, 6.5)
LESION_INTENSITY_RANGE = (60.0, 80.0)


def _draw_lesion(rng, spec: PhantomSpec) -> LesionSpec:
    """Place a sphere uniformly inside the brain with margin so it fits."""
    shape, spacing = spec.shape, spec.spacing
    radius = float(rng.uniform(*LESION_RADIUS_RANGE_MM))
    intensity = float(rng.uniform(*LESION_INTENSITY_RANGE))
    center_idx = [(n - 1) / 2.0 for n in shape]
    outer_mm = [
        f * (n - 1) * s / 2.0
        for f, n, s in zip(spec.head_fraction, shape, spacing)
    ]
    inner_mm = [max(a - spec.skull_thickness_mm, 1.0) for a in outer_mm]
    for _ in range(1000):
        # uniform in the bounding box, accept when the whole sphere fits
        u = rng.uniform(-1.0, 1.0, size=3)
        pos_mm = [u[i] * inner_mm[i] for i in range(3)]
        # shrink test: point must lie inside the ellipsoid eroded by radius+1mm
        margin = [max(a - radius - 1.0, 0.5) for a in inner_mm]
        if sum((pos_mm[i] / margin[i]) ** 2 for i in range(3)) <= 1.0:
            center = tuple(
                center_idx[i] + pos_mm[i] / spacing[i] for i in range(3)
            )
            return LesionSpec(center=center, radius_mm=radius, intensity=intensity)
    raise RuntimeError("could not place lesion inside brain after 1000 tries")


def generate_dataset(
    n: int,
    prevalence: float,
    seed: int,
    out_dir: str | os.PathLike,
    lesion_signal: bool = True,
    clinical_signal: bool = True,
    raw_shape: tuple[int, int, int] = (80, 80, 40),
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0),
    noise_std: float = 5.0,
) -> DatasetManifest:
    """Generate n labeled phantom subjects and persist volumes + manifest.

    Exactly round(n * prevalence) subjects are positive. Positives carry a
    lesion iff ``lesion_signal``; clinical features are label-correlated iff
    ``clinical_signal`` (otherwise every record is drawn from the negative
    class distribution).
    """
    if n < 2:
        raise ValueError(f"need n >= 2 subjects, got {n}")
    if not 0.0 < prevalence < 1.0:
        raise InvalidPrevalence(f"prevalence must lie in (0,1), got {prevalence}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    n_pos = int(round(n * prevalence))
    labels = np.zeros(n, dtype=np.int64)
    labels[:n_pos] = 1
    rng_labels = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([seed, _STREAM_LABELS]))
    )
    rng_labels.shuffle(labels)

    subjects = []
    width = max(4, len(str(n)))
    for i in range(n):
        label = int(labels[i])
        geo_rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([seed, i, _STREAM_GEOMETRY]))
        )
        noise_seed_entropy = [seed, i, _STREAM_NOISE]
        noise_seed = int(
            np.random.SeedSequence(noise_seed_entropy).generate_state(1)[0]
        )
        head_fraction = tuple(geo_rng.uniform(0.80, 0.92, size=3))
        spec = PhantomSpec(
            shape=raw_shape,
            spacing=spacing,
            noise_std=noise_std,
            seed=noise_seed,
            head_fraction=head_fraction,
        )
        if label == 1 and lesion_signal:
            spec.lesion = _draw_lesion(geo_rng, spec)
        vol, _ = generate_phantom(spec)

        clinical_label = label if clinical_signal else 0
        record = generate_clinical(
            clinical_label, np.random.SeedSequence([seed, i, _STREAM_CLINICAL])
        )

        sid = f"s{i:0{width}d}"
        vpath = f"{sid}.volr"
        save_volume(vol, out_dir / vpath)
        subjects.append(
            SubjectEntry(
                subject_id=sid,
                volume_path=vpath,
                label=label,
                clinical=record,
                seed=noise_seed,
                lesion=spec.lesion,
            )
        )

    manifest = DatasetManifest(
        subjects=subjects,
        generator_seed=seed,
        prevalence=prevalence,
        lesion_signal=lesion_signal,
        clinical_signal=clinical_signal,
        raw_shape=tuple(raw_shape),
        spacing=tuple(spacing),
        noise_std=noise_std,
        root=str(out_dir),
    )
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest


def canonical_lesion_mask(
    entry: SubjectEntry,
    raw_shape: tuple[int, int, int],
    spacing: tuple[float, float, float],
    target_shape: tuple[int, int, int],
) -> np.ndarray:
    """Lesion mask in canonical-volume coordinates.

    Resampling uses endpoint-aligned coordinates (target i maps to source
    i*(ns-1)/(nt-1)), so the sphere maps to an analytic ellipsoid test on the
    mapped source coordinates; no interpolated mask thresholding needed.
    """
    if entry.lesion is None:
        return np.zeros(target_shape, dtype=bool)
    coords = []
    for a in range(3):
        ns, nt = raw_shape[a], target_shape[a]
        if nt == 1:
            coords.append(np.array([(ns - 1) / 2.0]))
        else:
            coords.append(np.arange(nt, dtype=np.float64) * (ns - 1) / (nt - 1))
    gx, gy, gz = np.meshgrid(*coords, indexing="ij")
    c = entry.lesion.center
    d2 = (
        ((gx - c[0]) * spacing[0]) ** 2
        + ((gy - c[1]) * spacing[1]) ** 2
        + ((gz - c[2]) * spacing[2]) ** 2
    )
    return d2 <= entry.lesion.radius_mm ** 2


@dataclass
class DatasetArrays:
    """Preprocessed, model-ready arrays for a whole manifest."""

    volumes: np.ndarray        # float32 [N, X, Y, Z] canonical
    clinical: np.ndarray       # float32 [N, F]
    labels: np.ndarray         # int64 [N]
    subject_ids: list[str] = field(default_factory=list)


def load_dataset_arrays(
    manifest: DatasetManifest,
    preprocess_config: PreprocessConfig,
    schema: EncodingSchema | None = None,
) -> DatasetArrays:
    """Run every subject through preprocessing and encode its clinical record."""
    schema = schema or EncodingSchema()
    n = len(manifest.subjects)
    target = tuple(preprocess_config.target_shape)
    volumes = np.empty((n,) + target, dtype=np.float32)
    clinical = np.empty((n, schema.length), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    ids = []
    for i, entry in enumerate(manifest.subjects):
        vol = preprocess(manifest.volume(entry), preprocess_config)
        volumes[i] = vol.voxels.astype(np.float32)
        clinical[i] = encode_clinical(entry.clinical, schema)
        labels[i] = entry.label
        ids.append(entry.subject_id)
    return DatasetArrays(volumes, clinical, labels, ids)
