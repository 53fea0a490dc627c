"""Single-file model checkpoints.

Layout (all integers little-endian)::

    b"COILCKPT" | u32 version | u32 header length | header JSON | tensor blobs | sha256

The header is canonical JSON (sorted keys, no whitespace) holding the model
spec, the storage dtype, a table of ``name, shape, offset, nbytes`` entries and
free-form metadata such as normalizer statistics. The trailing SHA-256 digest
covers every byte before it.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .models import ModelSpec, SpecMismatchError, build_model

MAGIC = b"COILCKPT"
VERSION = 1
_DIGEST = 32

__all__ = [
    "CheckpointError",
    "ChecksumError",
    "VersionError",
    "SpecMismatchError",
    "save_checkpoint",
    "load_checkpoint",
    "read_checkpoint",
    "canonical_json",
    "atomic_write_bytes",
]


class CheckpointError(ValueError):
    pass


class ChecksumError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def atomic_write_bytes(path, payload):
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def checkpoint_bytes(model, metadata=None):
    dtype = np.dtype(model.dtype).newbyteorder("<")
    table = []
    blobs = []
    offset = 0
    for name, value in sorted(model.state_dict().items()):
        raw = np.ascontiguousarray(value, dtype=dtype).tobytes()
        table.append({"name": name, "shape": list(np.shape(value)), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = canonical_json({
        "spec": model.spec.to_dict(),
        "dtype": np.dtype(model.dtype).name,
        "tensors": table,
        "metadata": metadata or {},
    }).encode("utf-8")
    body = MAGIC + struct.pack("<II", VERSION, len(header)) + header + b"".join(blobs)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(model, path, metadata=None):
    """Atomically write ``model`` (parameters and buffers) to ``path``."""
    atomic_write_bytes(path, checkpoint_bytes(model, metadata))


def read_checkpoint(path):
    """Parse and verify a checkpoint; returns ``(spec, dtype, state, metadata)``."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 8 + _DIGEST or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, digest = raw[:-_DIGEST], raw[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"{path}: checksum mismatch (corrupt or truncated file)")
    version, header_len = struct.unpack_from("<II", body, len(MAGIC))
    if version != VERSION:
        raise VersionError(f"{path}: checkpoint version {version}, this reader supports {VERSION}")
    start = len(MAGIC) + 8
    header = json.loads(body[start:start + header_len].decode("utf-8"))
    blob_base = start + header_len
    dtype = np.dtype(header["dtype"]).newbyteorder("<")
    state = {}
    for entry in header["tensors"]:
        lo = blob_base + entry["offset"]
        buf = body[lo:lo + entry["nbytes"]]
        arr = np.frombuffer(buf, dtype=dtype).astype(np.dtype(header["dtype"]))
        state[entry["name"]] = arr.reshape(entry["shape"])
    return ModelSpec.from_dict(header["spec"]), np.dtype(header["dtype"]), state, header["metadata"]


def load_checkpoint(path, expected_spec=None):
    """Rebuild the model stored at ``path``.

    If ``expected_spec`` is given, the stored spec must match it exactly,
    otherwise :class:`SpecMismatchError` is raised. The returned model is in
    eval mode and carries the stored metadata as ``model.metadata``.
    """
    spec, dtype, state, metadata = read_checkpoint(path)
    if expected_spec is not None:
        if isinstance(expected_spec, str):
            expected_spec = ModelSpec(expected_spec)
        if expected_spec.to_dict() != spec.to_dict():
            raise SpecMismatchError(
                f"checkpoint holds a {spec.kind} model, expected {expected_spec.kind} "
                f"({spec.to_dict()} != {expected_spec.to_dict()})")
    model = build_model(spec, seed=0, dtype=dtype)
    model.load_state_dict(state)
    model.eval()
    model.metadata = metadata
    return model
