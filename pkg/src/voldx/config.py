"""Run configuration loading, validation, and provenance records.

Each CLI command declares a flat key schema. Values resolve in order
defaults < config file < explicit flags; unknown keys in a config file are
rejected outright. Every run writes a manifest recording the resolved
config, SHA-256 checksums of inputs and outputs, versions, and wall time,
so any artifact on disk traces back to a (config, seed) pair.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from pathlib import Path

from .errors import ConfigInvalid

RUN_MANIFEST_VERSION = 1

# manifest fields excluded from determinism comparisons
TIME_FIELDS = ("started_at_unix", "wall_time_s")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_config_file(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigInvalid(f"config {path} must contain a JSON object")
    return data


def resolve_config(schema: dict, file_config: dict | None, cli_values: dict) -> dict:
    """Merge defaults, config-file values, and explicit CLI values.

    ``schema`` maps key -> (type, default); required keys use default=None
    and are checked by the command itself. ``cli_values`` holds only flags
    the user actually passed.
    """
    resolved = {key: default for key, (_, default) in schema.items()}
    if file_config:
        for key, value in file_config.items():
            if key not in schema:
                raise ConfigInvalid(f"unknown config key {key!r}")
            typ = schema[key][0]
            if value is not None and typ is not None and not isinstance(value, typ):
                if typ is float and isinstance(value, int):
                    value = float(value)
                else:
                    raise ConfigInvalid(
                        f"config key {key!r} expects {typ.__name__}, got {type(value).__name__}"
                    )
            resolved[key] = value
    for key, value in cli_values.items():
        if key not in schema:
            raise ConfigInvalid(f"unknown config key {key!r}")
        resolved[key] = value
    return resolved


def create_output_dir(path) -> Path:
    """Create-only output directory: it may exist only if empty."""
    p = Path(path)
    if p.exists():
        if not p.is_dir() or any(p.iterdir()):
            raise ConfigInvalid(f"output directory {p} exists and is not empty")
    else:
        p.mkdir(parents=True)
    return p


def refuse_overwrite(path) -> Path:
    p = Path(path)
    if p.exists():
        raise ConfigInvalid(f"refusing to overwrite existing output {p}")
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


class RunRecorder:
    """Collects inputs/outputs for one command and writes the run manifest."""

    def __init__(self, command: str, resolved_config: dict):
        self.command = command
        self.config = resolved_config
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.started = time.time()

    def add_input(self, path) -> None:
        p = str(path)
        if os.path.isfile(p):
            self.inputs[p] = sha256_file(p)

    def add_output(self, path) -> None:
        p = str(path)
        if os.path.isfile(p):
            self.outputs[p] = sha256_file(p)

    def add_output_tree(self, root) -> None:
        root = Path(root)
        for p in sorted(root.rglob("*")):
            if p.is_file() and p.name != "run_manifest.json":
                self.outputs[str(p.relative_to(root))] = sha256_file(p)

    def write(self, path) -> None:
        from . import __version__

        record = {
            "format_version": RUN_MANIFEST_VERSION,
            "command": self.command,
            "package_version": __version__,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "started_at_unix": self.started,
            "wall_time_s": time.time() - self.started,
        }
        with open(path, "w") as fh:
            json.dump(record, fh, indent=2, sort_keys=True)
            fh.write("\n")
