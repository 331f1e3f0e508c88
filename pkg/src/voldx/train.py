"""Seeded training loop: shuffle, augment, forward/backward, RAdam + cosine LR.

The learning rate is stepped per epoch (cosine over T = epochs). Randomness
is derived from the config seed with fixed stream tags: the epoch shuffle
from (seed, SHUFFLE, epoch) and each sample's augmentation from
(seed, AUGMENT, epoch, subject_index), so the data stream cannot depend on
batch scheduling. Two runs with the same config are bitwise identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentSpec, augment
from .dataset import DatasetArrays, DatasetManifest, load_dataset_arrays
from .errors import DivergedLoss
from .models import DESK_BLOCK_CHANNELS, DEFAULT_BLOCK_CHANNELS, Model, ModelSpec, compute_gradients
from .optim import RAdamState, ScheduleSpec, cosine_lr, radam_step
from .preprocess import DESK_TARGET, DEFAULT_TARGET, PreprocessConfig

# seed stream tags
_STREAM_INIT = 10
_STREAM_SHUFFLE = 11
_STREAM_AUGMENT = 12

PROFILES = {
    "full": {"input_shape": DEFAULT_TARGET, "block_channels": DEFAULT_BLOCK_CHANNELS},
    "desk": {"input_shape": DESK_TARGET, "block_channels": DESK_BLOCK_CHANNELS},
}


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 4
    seed: int = 0
    lr0: float = 5e-4
    eta_min: float = 0.0
    profile: str = "desk"
    augment: AugmentSpec | None = field(default_factory=AugmentSpec)
    checkpoint_cadence: int = 0  # epochs between checkpoints; 0 = none

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}")

    def to_dict(self) -> dict:
        d = {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "lr0": self.lr0,
            "eta_min": self.eta_min,
            "profile": self.profile,
            "checkpoint_cadence": self.checkpoint_cadence,
            "augment": None,
        }
        if self.augment is not None:
            a = self.augment
            d["augment"] = {
                "rotation_deg": a.rotation_deg,
                "zoom_range": list(a.zoom_range),
                "rotate_prob": a.rotate_prob,
                "zoom_prob": a.zoom_prob,
                "flip_prob": a.flip_prob,
            }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if d.get("augment") is not None:
            a = dict(d["augment"])
            a["zoom_range"] = tuple(a["zoom_range"])
            d["augment"] = AugmentSpec(**a)
        return cls(**d)


def profile_preprocess_config(profile: str) -> PreprocessConfig:
    return PreprocessConfig(target_shape=PROFILES[profile]["input_shape"])


def model_spec_for(variant: str, profile: str) -> ModelSpec:
    prof = PROFILES[profile]
    return ModelSpec(
        variant=variant,
        input_shape=prof["input_shape"],
        block_channels=prof["block_channels"],
    )


def _rng(*entropy) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(entropy))))


def train_arrays(
    variant: str,
    data: DatasetArrays,
    config: TrainConfig,
    indices=None,
    model: Model | None = None,
    checkpoint_fn=None,
) -> tuple[Model, list[dict]]:
    """Train one model on ``data[indices]``; returns (model, per-epoch history).

    ``checkpoint_fn(model, epoch)`` is invoked on the configured cadence.
    """
    if indices is None:
        indices = np.arange(len(data.labels))
    indices = np.asarray(indices)
    if indices.size == 0:
        raise ValueError("empty training set")
    if model is None:
        init_seed = int(
            np.random.SeedSequence([config.seed, _STREAM_INIT]).generate_state(1)[0]
        )
        model = Model(model_spec_for(variant, config.profile), seed=init_seed)

    needs_volumes = variant in ("rcnn", "mrcnn")
    needs_clinical = variant in ("clinical", "mrcnn")
    schedule = ScheduleSpec(lr0=config.lr0, eta_min=config.eta_min, total_steps=config.epochs)
    state = RAdamState.for_params(model.params)
    history = []

    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, schedule)
        order = indices[_rng(config.seed, _STREAM_SHUFFLE, epoch).permutation(indices.size)]
        epoch_loss = 0.0
        epoch_correct = 0
        for start in range(0, order.size, config.batch_size):
            batch = order[start : start + config.batch_size]
            labels = data.labels[batch]
            volumes = None
            clinical = data.clinical[batch] if needs_clinical else None
            if needs_volumes:
                vols = data.volumes[batch]
                if config.augment is not None:
                    vols = np.stack(
                        [
                            augment(
                                vols[j],
                                config.augment,
                                _rng(config.seed, _STREAM_AUGMENT, epoch, int(batch[j])),
                            )
                            for j in range(len(batch))
                        ]
                    )
                volumes = vols
            loss, probs, grads, _ = compute_gradients(model, volumes, clinical, labels)
            if not np.isfinite(loss):
                raise DivergedLoss(f"loss became non-finite at epoch {epoch}")
            radam_step(model.params, grads, state, lr)
            epoch_loss += loss * len(batch)
            epoch_correct += int(np.sum((probs >= 0.5) == (labels == 1)))
        history.append(
            {
                "epoch": epoch,
                "lr": lr,
                "loss": epoch_loss / order.size,
                "train_accuracy": epoch_correct / order.size,
            }
        )
        if (
            checkpoint_fn is not None
            and config.checkpoint_cadence > 0
            and (epoch + 1) % config.checkpoint_cadence == 0
        ):
            checkpoint_fn(model, epoch)
    return model, history


def train(
    variant: str,
    manifest: DatasetManifest,
    config: TrainConfig,
    checkpoint_fn=None,
) -> tuple[Model, list[dict]]:
    """Preprocess every manifest subject at the configured profile, then train."""
    data = load_dataset_arrays(manifest, profile_preprocess_config(config.profile))
    return train_arrays(variant, data, config, checkpoint_fn=checkpoint_fn)


def write_history(history: list[dict], path) -> None:
    with open(path, "w") as fh:
        for row in history:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
