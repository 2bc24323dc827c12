"""Named-tensor checkpoint archives.

A checkpoint is a single file laid out as:

    bytes 0..7    magic ``b"LDARCH01"``
    bytes 8..15   little-endian uint64, byte length of the manifest
    manifest      UTF-8 JSON object
    blob          contiguous little-endian float32 data

The manifest has the shape::

    {
      "format_version": 1,
      "kind": "generator" | "transformer",
      "config": {...},                      # component configuration, JSON
      "tensors": [
        {"name": str, "shape": [int, ...], "dtype": "float32", "offset": int},
        ...
      ]
    }

Offsets are byte offsets into the blob. See docs/checkpoint_format.md for the
normative description.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"LDARCH01"
FORMAT_VERSION = 1


def save_archive(path, kind: str, config: dict, tensors: dict[str, np.ndarray]) -> None:
    """Write named float32 tensors plus a config manifest to ``path``."""
    entries = []
    chunks = []
    offset = 0
    for name, tensor in tensors.items():
        arr = np.ascontiguousarray(tensor, dtype="<f4")
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": "float32", "offset": offset}
        )
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "tensors": entries,
    }
    manifest_bytes = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest_bytes)))
        fh.write(manifest_bytes)
        for chunk in chunks:
            fh.write(chunk)


def load_archive(path) -> tuple[str, dict, dict[str, np.ndarray]]:
    """Read an archive, returning (kind, config, tensors by name)."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 16 or data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint archive (bad magic)")
    (manifest_len,) = struct.unpack("<Q", data[8:16])
    try:
        manifest = json.loads(data[16 : 16 + manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest: {exc}") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unknown format_version {version!r}")
    blob = data[16 + manifest_len :]
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(blob):
            raise CheckpointError(f"{path}: tensor {entry['name']!r} overruns blob")
        tensors[entry["name"]] = (
            np.frombuffer(blob[start:end], dtype="<f4").reshape(shape).copy()
        )
    return manifest["kind"], manifest["config"], tensors


def expect_tensors(
    tensors: dict[str, np.ndarray], expected: dict[str, tuple[int, ...]], context: str
) -> None:
    """Validate that every expected name exists with the expected shape."""
    for name, shape in expected.items():
        if name not in tensors:
            raise CheckpointError(f"{context}: missing tensor {name!r}")
        found = tuple(tensors[name].shape)
        if found != tuple(shape):
            raise CheckpointError(
                f"{context}: tensor {name!r} has shape {found}, expected {tuple(shape)}"
            )
