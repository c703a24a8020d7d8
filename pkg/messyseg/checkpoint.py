"""
Checkpoint Storage
Versioned single-file format: JSON manifest followed by raw little-endian float64 tensors
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List

import numpy as np

from messyseg.errors import CheckpointError, UsageError

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
MAGIC = b"MESSYSEG-CKPT\n"
_LENGTH = struct.Struct("<Q")
_BLOB_DTYPE = np.dtype("<f8")


@dataclass
class Checkpoint:
    """Everything needed to rebuild a trained model"""

    config: Dict[str, Any]
    tagset: Dict[str, str]
    chars: List[str]
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION


def _manifest(checkpoint: Checkpoint) -> Dict[str, Any]:
    entries = []
    offset = 0
    for name, value in checkpoint.tensors.items():
        nbytes = int(value.size) * _BLOB_DTYPE.itemsize
        entries.append({"name": name, "shape": list(value.shape), "offset": offset, "nbytes": nbytes})
        offset += nbytes
    return {
        "version": checkpoint.version,
        "config": checkpoint.config,
        "tagset": checkpoint.tagset,
        "chars": checkpoint.chars,
        "tensors": entries,
    }


def save_checkpoint(checkpoint: Checkpoint, path: str):
    """
    Write a checkpoint file

    Tensors keep their insertion order; the manifest has sorted keys and no
    timestamps, so equal checkpoints produce byte-identical files.

    Args:
        checkpoint: Checkpoint to write
        path: Destination (parent directories are created)
    """
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise UsageError(f"Cannot create checkpoint directory {target.parent}: {str(e)}")

    manifest = json.dumps(_manifest(checkpoint), sort_keys=True, ensure_ascii=False).encode("utf-8")
    tmp = target.with_name(target.name + ".tmp")
    try:
        with tmp.open("wb") as handle:
            handle.write(MAGIC)
            handle.write(_LENGTH.pack(len(manifest)))
            handle.write(manifest)
            for value in checkpoint.tensors.values():
                handle.write(np.ascontiguousarray(value, dtype=_BLOB_DTYPE).tobytes())
        tmp.replace(target)
    except OSError as e:
        raise UsageError(f"Cannot write checkpoint {path}: {str(e)}")
    logger.info(f"Saved checkpoint with {len(checkpoint.tensors)} tensors to {path}")


def load_checkpoint(path: str) -> Checkpoint:
    """
    Read and validate a checkpoint file

    Args:
        path: Checkpoint file

    Returns:
        Checkpoint with tensors restored bit-exactly
    """
    source = Path(path)
    if not source.exists():
        raise UsageError(f"Checkpoint file not found: {path}")
    data = source.read_bytes()

    if not data.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic)", location="byte 0")
    position = len(MAGIC)
    if len(data) < position + _LENGTH.size:
        raise CheckpointError("truncated manifest length", location=f"byte {position}")
    (manifest_length,) = _LENGTH.unpack_from(data, position)
    position += _LENGTH.size
    if len(data) < position + manifest_length:
        raise CheckpointError(
            f"truncated manifest ({len(data) - position} of {manifest_length} bytes)", location=f"byte {position}"
        )
    try:
        manifest = json.loads(data[position:position + manifest_length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt manifest: {str(e)}", location=f"byte {position}")
    position += manifest_length

    version = manifest.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} is incompatible with {CHECKPOINT_VERSION}")

    try:
        entries = manifest["tensors"]
        checkpoint = Checkpoint(
            config=manifest["config"],
            tagset=manifest["tagset"],
            chars=list(manifest["chars"]),
            version=version,
        )
    except KeyError as e:
        raise CheckpointError(f"manifest is missing field {e}")

    blob = memoryview(data)[position:]
    for entry in entries:
        name = entry["name"]
        start, nbytes = entry["offset"], entry["nbytes"]
        shape = tuple(entry["shape"])
        if start + nbytes > len(blob):
            raise CheckpointError(
                f"truncated tensor data ({len(blob) - start} of {nbytes} bytes)",
                location=f"tensor {name} at byte {position + start}",
            )
        count = int(np.prod(shape)) if shape else 1
        if count * _BLOB_DTYPE.itemsize != nbytes:
            raise CheckpointError(f"shape {shape} does not match {nbytes} bytes", location=f"tensor {name}")
        values = np.frombuffer(blob[start:start + nbytes], dtype=_BLOB_DTYPE).reshape(shape)
        checkpoint.tensors[name] = values.astype(np.float64, copy=True)

    logger.info(f"Loaded checkpoint with {len(checkpoint.tensors)} tensors from {path}")
    return checkpoint
