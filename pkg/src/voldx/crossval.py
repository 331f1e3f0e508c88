"""Stratified k-fold cross-validation of the diagnostic models.

Folds are dealt round-robin within each class after a seeded shuffle, so
per-fold positive counts stay within one of proportional. Every fold trains
a fresh model on the remaining folds (per-fold seeds derived from the CV
seed) and scores its held-out subjects exactly once; summaries report mean,
sample std, and the Student-t 95% confidence interval across folds.
"""

from __future__ import annotations

import numpy as np

from .dataset import DatasetArrays, DatasetManifest, load_dataset_arrays
from .errors import InsufficientClassMembers
from .metrics import confusion_metrics, mean_std_ci, roc_auc
from .train import TrainConfig, profile_preprocess_config, train_arrays

REPORT_VERSION = 1

_STREAM_FOLDS = 20
_STREAM_FOLD_TRAIN = 21

SUMMARY_METRICS = ("accuracy", "sensitivity", "specificity", "auc")


def make_folds(labels, k: int = 5, seed: int = 0, stratified: bool = True) -> np.ndarray:
    """Assign each subject a fold index in [0, k); partition is disjoint/exhaustive."""
    labels = np.asarray(labels)
    n = labels.size
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, _STREAM_FOLDS])))
    assignment = np.empty(n, dtype=np.int64)
    if stratified:
        for cls in np.unique(labels):
            idx = np.flatnonzero(labels == cls)
            if idx.size < k:
                raise InsufficientClassMembers(
                    f"class {cls} has {idx.size} members, need >= {k}"
                )
            idx = rng.permutation(idx)
            assignment[idx] = np.arange(idx.size) % k
    else:
        if n < k:
            raise InsufficientClassMembers(f"{n} subjects for {k} folds")
        idx = rng.permutation(n)
        assignment[idx] = np.arange(n) % k
    return assignment


def _fold_train_config(config: TrainConfig, seed: int, fold: int, variant: str) -> TrainConfig:
    variant_code = {"clinical": 0, "rcnn": 1, "mrcnn": 2}[variant]
    fold_seed = int(
        np.random.SeedSequence(
            [seed, _STREAM_FOLD_TRAIN, fold, variant_code]
        ).generate_state(1)[0]
    )
    d = config.to_dict()
    d["seed"] = fold_seed
    return TrainConfig.from_dict(d)


def cross_validate_arrays(
    data: DatasetArrays,
    variant: str,
    config: TrainConfig,
    k: int = 5,
    seed: int = 0,
) -> dict:
    """k-fold CV on preloaded arrays; returns the metrics report dict."""
    folds = make_folds(data.labels, k=k, seed=seed)
    fold_rows = []
    per_metric = {m: [] for m in SUMMARY_METRICS}
    for f in range(k):
        test_idx = np.flatnonzero(folds == f)
        train_idx = np.flatnonzero(folds != f)
        fold_cfg = _fold_train_config(config, seed, f, variant)
        model, _ = train_arrays(variant, data, fold_cfg, indices=train_idx)
        volumes = data.volumes[test_idx] if variant in ("rcnn", "mrcnn") else None
        clinical = data.clinical[test_idx] if variant in ("clinical", "mrcnn") else None
        scores, _ = model.forward(volumes=volumes, clinical=clinical)
        labels = data.labels[test_idx]
        cm = confusion_metrics(scores, labels)
        auc, roc_points = roc_auc(scores, labels)
        row = {
            "fold": f,
            "test_subjects": [data.subject_ids[i] for i in test_idx]
            if data.subject_ids
            else [int(i) for i in test_idx],
            "counts": {key: cm[key] for key in ("tp", "fp", "fn", "tn")},
            "accuracy": cm["accuracy"],
            "sensitivity": cm["sensitivity"],
            "specificity": cm["specificity"],
            "auc": auc,
            "roc": [[float(x), float(y)] for x, y in roc_points],
        }
        fold_rows.append(row)
        for m in SUMMARY_METRICS:
            per_metric[m].append(row[m])

    summary = {}
    for m, values in per_metric.items():
        if any(v is None for v in values):
            summary[m] = {"per_fold": values, "mean": None, "std": None, "ci95": None}
            continue
        mu, sd, ci = mean_std_ci(values)
        summary[m] = {
            "per_fold": values,
            "mean": mu,
            "std": sd,
            "ci95": [ci[0], ci[1]],
        }
    return {
        "format_version": REPORT_VERSION,
        "variant": variant,
        "k": k,
        "seed": seed,
        "train_config": config.to_dict(),
        "folds": fold_rows,
        "summary": summary,
    }


def cross_validate(
    manifest: DatasetManifest,
    variant: str,
    config: TrainConfig,
    k: int = 5,
    seed: int = 0,
) -> dict:
    data = load_dataset_arrays(manifest, profile_preprocess_config(config.profile))
    return cross_validate_arrays(data, variant, config, k=k, seed=seed)
