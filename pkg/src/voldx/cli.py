"""Command-line entry point tying the modules into reproducible runs.

Subcommands: synth, preprocess, train, evaluate, report, explain, reproduce.
Every command accepts ``--config file.json`` (flat keys named like the long
flags with underscores); explicit flags override file values, unknown keys
are rejected. Artifact-producing commands refuse to overwrite prior outputs
and leave a run manifest next to what they wrote.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .augment import AugmentSpec
from .checkpoint import CKPT_VERSION, load_checkpoint, save_checkpoint
from .config import (
    RunRecorder,
    create_output_dir,
    load_config_file,
    refuse_overwrite,
    resolve_config,
)
from .crossval import REPORT_VERSION, cross_validate
from .dataset import (
    MANIFEST_VERSION,
    canonical_lesion_mask,
    generate_dataset,
    load_manifest,
    manifest_checksum,
)
from .errors import ConfigInvalid, MissingProvenance, VoldxError
from .metrics import compare_models
from .models import VARIANTS
from .preprocess import PreprocessConfig, WindowSpec, preprocess
from .saliency import OcclusionSpec, grad_cam, normalize_map, occlusion_map
from .render import render_overlay
from .train import PROFILES, TrainConfig, train, write_history
from .volume import VOLR_VERSION, Volume, load_volume, save_volume

METRIC_TOL = 1e-9


def _parse_triple(text: str, cast=int) -> tuple:
    parts = [cast(v) for v in str(text).split(",")]
    if len(parts) != 3:
        raise ConfigInvalid(f"expected three comma-separated values, got {text!r}")
    return tuple(parts)


def _parse_window(text: str) -> WindowSpec:
    try:
        level, width = str(text).split(":")
        return WindowSpec(level=float(level), width=float(width))
    except ValueError as exc:
        raise ConfigInvalid(f"window must look like 40:80, got {text!r}") from exc


def _parse_slices(text: str) -> tuple[str, list[int]]:
    try:
        axis, idx = str(text).split(":")
        return axis, [int(v) for v in idx.split(",")]
    except ValueError as exc:
        raise ConfigInvalid(f"slices must look like axial:10,32,54, got {text!r}") from exc


def _cli_values(args, keys) -> dict:
    return {k: getattr(args, k) for k in keys if getattr(args, k) is not None}


def _resolve(args, schema) -> dict:
    file_cfg = load_config_file(args.config) if args.config else None
    return resolve_config(schema, file_cfg, _cli_values(args, schema.keys()))


def _build_train_config(cfg: dict) -> TrainConfig:
    aug = None if cfg["no_augment"] else AugmentSpec()
    return TrainConfig(
        epochs=cfg["epochs"],
        batch_size=cfg["batch"],
        seed=cfg["seed"],
        lr0=cfg["lr0"],
        profile=cfg["profile"],
        augment=aug,
        checkpoint_cadence=cfg["checkpoint_cadence"],
    )


# ---- commands ----

_SYNTH_SCHEMA = {
    "n": (int, 250),
    "prevalence": (float, 0.5),
    "seed": (int, 42),
    "out": (str, None),
    "no_lesion_signal": (bool, False),
    "no_clinical_signal": (bool, False),
    "raw_shape": (str, "80,80,40"),
    "noise_std": (float, 5.0),
}


def cmd_synth(args) -> int:
    cfg = _resolve(args, _SYNTH_SCHEMA)
    if not cfg["out"]:
        raise ConfigInvalid("synth requires --out")
    out = create_output_dir(cfg["out"])
    rec = RunRecorder("synth", cfg)
    manifest = generate_dataset(
        n=cfg["n"],
        prevalence=cfg["prevalence"],
        seed=cfg["seed"],
        out_dir=out,
        lesion_signal=not cfg["no_lesion_signal"],
        clinical_signal=not cfg["no_clinical_signal"],
        raw_shape=_parse_triple(cfg["raw_shape"]),
        noise_std=cfg["noise_std"],
    )
    rec.add_output_tree(out)
    rec.write(out / "run_manifest.json")
    print(f"wrote {len(manifest.subjects)} subjects to {out}")
    print(f"manifest checksum {manifest_checksum(manifest)}")
    return 0


_PREPROCESS_SCHEMA = {
    "in_path": (str, None),
    "out": (str, None),
    "target": (str, "128,128,64"),
    "window": (str, "40:80"),
    "bg_threshold": (float, 0.05),
    "spline_order": (int, 3),
    "order": (str, "window-first"),
}


def cmd_preprocess(args) -> int:
    cfg = _resolve(args, _PREPROCESS_SCHEMA)
    if not cfg["in_path"] or not cfg["out"]:
        raise ConfigInvalid("preprocess requires --in and --out")
    if cfg["order"] not in ("window-first", "paper-literal"):
        raise ConfigInvalid(f"order must be window-first or paper-literal")
    out = refuse_overwrite(cfg["out"])
    rec = RunRecorder("preprocess", cfg)
    rec.add_input(cfg["in_path"])
    pc = PreprocessConfig(
        target_shape=_parse_triple(cfg["target"]),
        window=_parse_window(cfg["window"]),
        bg_threshold=cfg["bg_threshold"],
        spline_order=cfg["spline_order"],
        order=cfg["order"],
    )
    vol = preprocess(cfg["in_path"], pc)
    save_volume(vol, out)
    rec.add_output(out)
    rec.write(str(out) + ".run.json")
    print(f"wrote canonical volume {vol.shape} to {out}")
    return 0


_TRAIN_SCHEMA = {
    "variant": (str, "mrcnn"),
    "manifest": (str, None),
    "epochs": (int, 100),
    "batch": (int, 4),
    "seed": (int, 0),
    "lr0": (float, 5e-4),
    "profile": (str, "desk"),
    "no_augment": (bool, False),
    "checkpoint_cadence": (int, 0),
    "out": (str, None),
    "history": (str, None),
}


def cmd_train(args) -> int:
    cfg = _resolve(args, _TRAIN_SCHEMA)
    if not cfg["manifest"] or not cfg["out"]:
        raise ConfigInvalid("train requires --manifest and --out")
    if cfg["variant"] not in VARIANTS:
        raise ConfigInvalid(f"variant must be one of {VARIANTS}")
    if cfg["profile"] not in PROFILES:
        raise ConfigInvalid(f"profile must be one of {tuple(PROFILES)}")
    out = refuse_overwrite(cfg["out"])
    rec = RunRecorder("train", cfg)
    rec.add_input(cfg["manifest"])
    manifest = load_manifest(cfg["manifest"])
    tc = _build_train_config(cfg)

    def cadence_ckpt(model, epoch):
        save_checkpoint(model, f"{out}.epoch{epoch + 1}")

    model, history = train(cfg["variant"], manifest, tc, checkpoint_fn=cadence_ckpt)
    save_checkpoint(model, out)
    rec.add_output(out)
    history_path = cfg["history"] or (str(out) + ".history.jsonl")
    write_history(history, history_path)
    rec.add_output(history_path)
    rec.write(str(out) + ".run.json")
    last = history[-1]
    print(
        f"trained {cfg['variant']} for {len(history)} epochs: "
        f"loss {last['loss']:.4f}, train accuracy {last['train_accuracy']:.3f}"
    )
    return 0


_EVALUATE_SCHEMA = {
    "manifest": (str, None),
    "variant": (str, "mrcnn"),
    "k": (int, 5),
    "seed": (int, 0),
    "epochs": (int, 20),
    "batch": (int, 8),
    "lr0": (float, 5e-4),
    "profile": (str, "desk"),
    "no_augment": (bool, False),
    "out": (str, None),
}


def cmd_evaluate(args) -> int:
    cfg = _resolve(args, _EVALUATE_SCHEMA)
    if not cfg["manifest"] or not cfg["out"]:
        raise ConfigInvalid("evaluate requires --manifest and --out")
    if cfg["variant"] not in VARIANTS:
        raise ConfigInvalid(f"variant must be one of {VARIANTS}")
    out = refuse_overwrite(cfg["out"])
    rec = RunRecorder("evaluate", cfg)
    rec.add_input(cfg["manifest"])
    manifest = load_manifest(cfg["manifest"])
    tc = TrainConfig(
        epochs=cfg["epochs"],
        batch_size=cfg["batch"],
        seed=cfg["seed"],
        lr0=cfg["lr0"],
        profile=cfg["profile"],
        augment=None if cfg["no_augment"] else AugmentSpec(),
        checkpoint_cadence=0,
    )
    report = cross_validate(manifest, cfg["variant"], tc, k=cfg["k"], seed=cfg["seed"])
    report["provenance"] = {
        "manifest_path": str(Path(cfg["manifest"]).resolve()),
        "manifest_sha256": manifest_checksum(manifest),
        "package_version": __version__,
    }
    report["timing"] = {"wall_time_s": rec_elapsed(rec)}
    with open(out, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    rec.add_output(out)
    rec.write(str(out) + ".run.json")
    s = report["summary"]
    for metric in ("accuracy", "sensitivity", "specificity", "auc"):
        m = s[metric]
        if m["mean"] is None:
            continue
        print(f"{metric:12s} {m['mean']:.3f} +- {m['std']:.3f} CI95 {m['ci95']}")
    return 0


def rec_elapsed(rec: RunRecorder) -> float:
    import time

    return time.time() - rec.started


_REPORT_SCHEMA = {
    "in_path": (str, None),
    "roc_plot": (str, None),
    "compare": (str, None),
}


def cmd_report(args) -> int:
    cfg = _resolve(args, _REPORT_SCHEMA)
    if not cfg["in_path"]:
        raise ConfigInvalid("report requires --in")
    with open(cfg["in_path"]) as fh:
        report = json.load(fh)
    print(f"variant {report['variant']}  k={report['k']}  seed={report['seed']}")
    for metric, m in sorted(report["summary"].items()):
        if m["mean"] is None:
            print(f"  {metric:12s} undefined for some fold")
            continue
        lo, hi = m["ci95"]
        print(
            f"  {metric:12s} {m['mean']:.4f} +- {m['std']:.4f}  "
            f"CI95 [{lo:.4f}, {hi:.4f}]"
        )
    if cfg["compare"]:
        with open(cfg["compare"]) as fh:
            other = json.load(fh)
        for metric in ("accuracy", "sensitivity", "specificity", "auc"):
            a = other["summary"][metric]["per_fold"]
            b = report["summary"][metric]["per_fold"]
            if None in a or None in b:
                continue
            p, diff = compare_models(a, b)
            print(
                f"  {metric}: mean diff {diff:+.4f} vs {other['variant']}, "
                f"one-sided p = {p:.4f}"
            )
    if cfg["roc_plot"]:
        _plot_roc(report, cfg["roc_plot"])
        print(f"wrote ROC plot to {cfg['roc_plot']}")
    return 0


def _plot_roc(report: dict, out_path: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 5))
    for row in report["folds"]:
        roc = np.asarray(row["roc"])
        ax.plot(roc[:, 0], roc[:, 1], lw=1.2, label=f"fold {row['fold']} (AUC {row['auc']:.3f})")
    ax.plot([0, 1], [0, 1], "k--", lw=0.8)
    mean_auc = report["summary"]["auc"]["mean"]
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    title = f"{report['variant']} ROC"
    if mean_auc is not None:
        title += f" (mean AUC {mean_auc:.3f})"
    ax.set_title(title)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


_EXPLAIN_SCHEMA = {
    "ckpt": (str, None),
    "manifest": (str, None),
    "subject": (str, None),
    "method": (str, "both"),
    "patch": (str, "16,16,8"),
    "stride": (str, "8,8,4"),
    "fill": (str, "mean"),
    "target_block": (int, 0),
    "slices": (str, None),
    "out": (str, None),
}


def cmd_explain(args) -> int:
    cfg = _resolve(args, _EXPLAIN_SCHEMA)
    for key in ("ckpt", "manifest", "subject", "out"):
        if not cfg[key]:
            raise ConfigInvalid(f"explain requires --{key}")
    if cfg["method"] not in ("osm", "gradcam", "both"):
        raise ConfigInvalid("method must be osm, gradcam or both")
    out = create_output_dir(cfg["out"])
    rec = RunRecorder("explain", cfg)
    rec.add_input(cfg["ckpt"])
    rec.add_input(cfg["manifest"])

    model = load_checkpoint(cfg["ckpt"])
    manifest = load_manifest(cfg["manifest"])
    entry = manifest.subject(cfg["subject"])
    pc = PreprocessConfig(target_shape=tuple(model.spec.input_shape))
    vol = preprocess(manifest.volume(entry), pc)
    voxels = vol.voxels.astype(np.float32)

    clinical = None
    from .clinical import encode_clinical

    if model.spec.variant == "mrcnn":
        clinical = encode_clinical(entry.clinical, model.spec.schema)

    maps = {}
    if cfg["method"] in ("osm", "both"):
        spec = OcclusionSpec(
            patch=_parse_triple(cfg["patch"]),
            stride=_parse_triple(cfg["stride"]),
            fill=cfg["fill"] if cfg["fill"] in ("mean", "zero") else float(cfg["fill"]),
        )

        def batch_eval(stack):
            clin = (
                None
                if clinical is None
                else np.repeat(clinical[None], stack.shape[0], axis=0)
            )
            p, _ = model.forward(volumes=stack, clinical=clin)
            return p

        maps["osm"] = occlusion_map(None, voxels, spec, batch_evaluator=batch_eval)
    if cfg["method"] in ("gradcam", "both"):
        maps["gradcam"] = grad_cam(
            model, voxels, clinical=clinical, target_block=cfg["target_block"]
        )

    normalized = {}
    for name, smap in maps.items():
        save_volume(Volume(smap.values, vol.spacing), out / f"{name}.volr")
        normalized[name] = normalize_map(smap).values
    if cfg["slices"]:
        axis, indices = _parse_slices(cfg["slices"])
    else:
        axis, indices = "axial", [voxels.shape[2] // 4, voxels.shape[2] // 2, 3 * voxels.shape[2] // 4]
    render_overlay(voxels, normalized, axis, indices, out / "montage.png")
    rec.add_output_tree(out)
    rec.write(out / "run_manifest.json")
    print(f"wrote {', '.join(sorted(maps))} maps and montage to {out}")
    return 0


_REPRODUCE_SCHEMA = {"report": (str, None)}


def cmd_reproduce(args) -> int:
    cfg = _resolve(args, _REPRODUCE_SCHEMA)
    if not cfg["report"]:
        raise ConfigInvalid("reproduce requires --report")
    with open(cfg["report"]) as fh:
        report = json.load(fh)
    for key in ("provenance", "train_config", "variant", "k", "seed"):
        if key not in report:
            raise MissingProvenance(f"report lacks {key!r}")
    prov = report["provenance"]
    if "manifest_path" not in prov or "manifest_sha256" not in prov:
        raise MissingProvenance("report lacks manifest provenance")
    manifest = load_manifest(prov["manifest_path"])
    if manifest_checksum(manifest) != prov["manifest_sha256"]:
        print("verdict: mismatch (manifest checksum differs)")
        return 1
    tc = TrainConfig.from_dict(report["train_config"])
    rerun = cross_validate(manifest, report["variant"], tc, k=report["k"], seed=report["seed"])
    diffs = compare_reports(report, rerun)
    if diffs:
        print("verdict: mismatch")
        for d in diffs:
            print(f"  {d}")
        return 1
    print("verdict: match")
    return 0


def compare_reports(original: dict, rerun: dict, tol: float = METRIC_TOL) -> list[str]:
    """Field-by-field metric comparison; returns a list of mismatch descriptions."""
    diffs = []
    for f_old, f_new in zip(original["folds"], rerun["folds"]):
        for key in ("accuracy", "sensitivity", "specificity", "auc"):
            a, b = f_old[key], f_new[key]
            if a is None or b is None:
                if a != b:
                    diffs.append(f"fold {f_old['fold']} {key}: {a} vs {b}")
            elif abs(a - b) > tol:
                diffs.append(f"fold {f_old['fold']} {key}: {a} vs {b}")
    for metric, m_old in original["summary"].items():
        m_new = rerun["summary"][metric]
        for field in ("mean", "std"):
            a, b = m_old[field], m_new[field]
            if a is None or b is None:
                if a != b:
                    diffs.append(f"summary {metric} {field}: {a} vs {b}")
            elif abs(a - b) > tol:
                diffs.append(f"summary {metric} {field}: {a} vs {b}")
    return diffs


# ---- parser ----

def _add_config_arg(p):
    p.add_argument("--config", help="JSON config file; flags override its values")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voldx",
        description="volumetric CT diagnosis pipeline: synthetic data, training, "
        "evaluation, and saliency explanations",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=(
            f"voldx {__version__} "
            f"(volr v{VOLR_VERSION}, ckpt v{CKPT_VERSION}, "
            f"manifest v{MANIFEST_VERSION}, report v{REPORT_VERSION})"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    _add_config_arg(p)
    p.add_argument("--n", type=int)
    p.add_argument("--prevalence", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--no-lesion-signal", action="store_const", const=True, dest="no_lesion_signal")
    p.add_argument("--no-clinical-signal", action="store_const", const=True, dest="no_clinical_signal")
    p.add_argument("--raw-shape", dest="raw_shape")
    p.add_argument("--noise-std", type=float, dest="noise_std")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="run the CT preprocessing chain on one volume")
    _add_config_arg(p)
    p.add_argument("--in", dest="in_path")
    p.add_argument("--out")
    p.add_argument("--target")
    p.add_argument("--window")
    p.add_argument("--bg-threshold", type=float, dest="bg_threshold")
    p.add_argument("--spline-order", type=int, dest="spline_order")
    p.add_argument("--order", choices=["window-first", "paper-literal"])
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train one model variant")
    _add_config_arg(p)
    p.add_argument("--variant", choices=list(VARIANTS))
    p.add_argument("--manifest")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr0", type=float)
    p.add_argument("--profile", choices=list(PROFILES))
    p.add_argument("--no-augment", action="store_const", const=True, dest="no_augment")
    p.add_argument("--checkpoint-cadence", type=int, dest="checkpoint_cadence")
    p.add_argument("--out")
    p.add_argument("--history")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="five-fold cross-validated metrics")
    _add_config_arg(p)
    p.add_argument("--manifest")
    p.add_argument("--variant", choices=list(VARIANTS))
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr0", type=float)
    p.add_argument("--profile", choices=list(PROFILES))
    p.add_argument("--no-augment", action="store_const", const=True, dest="no_augment")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="summarize a metrics report; optional ROC plot")
    _add_config_arg(p)
    p.add_argument("--in", dest="in_path")
    p.add_argument("--roc-plot", dest="roc_plot")
    p.add_argument("--compare", help="second report to test against (one-sided p)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("explain", help="occlusion / Grad-CAM maps for one subject")
    _add_config_arg(p)
    p.add_argument("--ckpt")
    p.add_argument("--manifest")
    p.add_argument("--subject")
    p.add_argument("--method", choices=["osm", "gradcam", "both"])
    p.add_argument("--patch")
    p.add_argument("--stride")
    p.add_argument("--fill")
    p.add_argument("--target-block", type=int, dest="target_block")
    p.add_argument("--slices")
    p.add_argument("--out")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("reproduce", help="re-run a report's evaluation and compare")
    _add_config_arg(p)
    p.add_argument("--report")
    p.set_defaults(func=cmd_reproduce)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VoldxError as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
