"""Self-describing binary checkpoints.

Layout: magic ``AUXB``, one version byte, a little-endian uint32 header
length, a JSON header (model spec, parameter/buffer manifest with shapes,
training metadata, sha256 of the blob section), then the raw little-endian
float32 blobs in manifest order. Loading rebuilds the model from the
header alone and verifies the hash, so a round trip reproduces forward
outputs bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .models import Model, ModelSpec

MAGIC = b"AUXB"
VERSION = 1


class CheckpointError(ValueError):
    """Base for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointHashError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


def _blob_section(model: Model):
    entries = []
    blobs = []
    for name, p in model.named_parameters():
        arr = np.ascontiguousarray(p.data.astype("<f4"))
        entries.append({"name": name, "shape": list(arr.shape), "kind": "param"})
        blobs.append(arr.tobytes())
    for name, b in model.named_buffers():
        arr = np.ascontiguousarray(b.astype("<f4"))
        entries.append({"name": name, "shape": list(arr.shape), "kind": "buffer"})
        blobs.append(arr.tobytes())
    return entries, b"".join(blobs)


def save_checkpoint(model: Model, path) -> None:
    entries, blob = _blob_section(model)
    header = {
        "spec": model.spec.to_dict(),
        "spec_hash": model.spec.spec_hash(),
        "manifest": entries,
        "meta": model.meta,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<B", VERSION))
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        f.write(blob)


def load_checkpoint(path) -> Model:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not an AUXB checkpoint (magic {raw[:4]!r})")
    version = raw[4]
    if version != VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version} not supported (expected {VERSION})")
    if len(raw) < 9:
        raise CheckpointTruncatedError(f"{path}: truncated header")
    header_len = struct.unpack("<I", raw[5:9])[0]
    header_end = 9 + header_len
    if len(raw) < header_end:
        raise CheckpointTruncatedError(f"{path}: truncated header")
    header = json.loads(raw[9:header_end].decode())
    blob = raw[header_end:]
    expected_size = sum(int(np.prod(e["shape"])) for e in header["manifest"]) * 4
    if len(blob) < expected_size:
        raise CheckpointTruncatedError(
            f"{path}: blob section has {len(blob)} bytes, manifest needs {expected_size}")
    digest = hashlib.sha256(blob[:expected_size]).hexdigest()
    if digest != header["blob_sha256"]:
        raise CheckpointHashError(f"{path}: parameter blob hash mismatch")

    spec = ModelSpec.from_dict(header["spec"])
    if spec.spec_hash() != header["spec_hash"]:
        raise CheckpointError(f"{path}: spec hash mismatch")
    model = Model(spec, seed=header["meta"].get("seed", 0))
    params = dict(model.named_parameters())
    buffers = {}
    offset = 0
    for entry in header["manifest"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += count * 4
        if entry["kind"] == "param":
            if entry["name"] not in params:
                raise CheckpointError(f"{path}: unknown parameter {entry['name']!r}")
            params[entry["name"]].data = arr.astype(np.float32).copy()
        else:
            buffers[entry["name"]] = arr.astype(np.float32).copy()
    model.load_buffers(buffers)
    model.meta = dict(header["meta"])
    return model
