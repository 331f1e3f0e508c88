"""Model checkpoint file: JSON header plus ordered little-endian f32 blobs.

Layout: 8-byte magic ``VDXCKPT\\0``, u32 header length, UTF-8 JSON header,
then the raw blob bytes back to back. The header records the model spec, the
creation seed, a format version and a per-blob index (name, shape, byte
offset into the blob section), in parameter-store order. Round-trips are
bit-exact for float32 parameters.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import UnreadableFile
from .models import Model, ModelSpec

CKPT_MAGIC = b"VDXCKPT\x00"
CKPT_VERSION = 1


def save_checkpoint(model: Model, path: str | os.PathLike) -> None:
    blobs = []
    index = []
    offset = 0
    for name, arr in model.params.items():
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format_version": CKPT_VERSION,
        "model_spec": model.spec.to_dict(),
        "creation_seed": model.seed,
        "blobs": index,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path: str | os.PathLike, dtype=np.float32) -> Model:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CKPT_MAGIC:
            raise UnreadableFile(f"{path}: not a checkpoint file")
        (head_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(head_len).decode())
        blob = fh.read()
    if header.get("format_version") != CKPT_VERSION:
        raise UnreadableFile(
            f"{path}: unsupported checkpoint version {header.get('format_version')}"
        )
    spec = ModelSpec.from_dict(header["model_spec"])
    model = Model(spec, seed=header["creation_seed"], dtype=dtype)
    for entry in header["blobs"]:
        name, shape, offset = entry["name"], tuple(entry["shape"]), entry["offset"]
        if name not in model.params:
            raise UnreadableFile(f"{path}: unknown parameter {name!r}")
        count = int(np.prod(shape)) if shape else 1
        raw = blob[offset : offset + 4 * count]
        if len(raw) < 4 * count:
            raise UnreadableFile(f"{path}: truncated blob for {name!r}")
        arr = np.frombuffer(raw, dtype="<f4").reshape(shape)
        if model.params[name].shape != arr.shape:
            raise UnreadableFile(
                f"{path}: blob {name!r} shape {arr.shape} != model {model.params[name].shape}"
            )
        model.params[name][...] = arr.astype(dtype)
    return model
