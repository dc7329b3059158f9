"""Checkpoint serialization: JSON manifest + raw float64 tensor blob.

The manifest is human-readable and diff-friendly; tensors live in a
separate binary file of little-endian IEEE-754 float64 values, row-major,
concatenated in manifest index order.  Loading validates that the index
tiles the blob exactly and that every tensor matches the config's expected
shape.  Writes are atomic (temp file + rename).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DataConfig
from .errors import IntegrityError
from .model import ModelConfig, shape_audit

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
BLOB_NAME = "tensors.bin"


@dataclass
class Checkpoint:
    params: dict
    model_config: ModelConfig
    data_config: DataConfig
    stage_index: int
    global_step: int
    rng_state: dict
    extra: dict = field(default_factory=dict)


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def save_checkpoint(path, params: dict, model_config: ModelConfig,
                    data_config: DataConfig, stage_index: int, global_step: int,
                    rng_state: dict, extra: dict | None = None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    index = []
    chunks = []
    offset = 0
    for name in sorted(params):
        t = params[name]
        raw = np.ascontiguousarray(t, dtype="<f8").tobytes()
        index.append({"name": name, "shape": list(t.shape),
                      "byte_offset": offset, "element_count": int(t.size)})
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "model_config": model_config.to_dict(),
        "data_config": data_config.to_dict(),
        "stage_index": stage_index,
        "global_step": global_step,
        "rng_state": rng_state,
        "extra": extra or {},
        "tensors": index,
    }
    _atomic_write(path / BLOB_NAME, b"".join(chunks))
    _atomic_write(path / MANIFEST_NAME,
                  json.dumps(manifest, indent=1, sort_keys=True).encode())


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        with open(path / MANIFEST_NAME) as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise IntegrityError(f"{path}: no {MANIFEST_NAME}")
    if manifest.get("format_version") != FORMAT_VERSION:
        raise IntegrityError(f"{path}: unsupported format version")
    blob = (path / BLOB_NAME).read_bytes()

    params = {}
    expected_offset = 0
    for entry in manifest["tensors"]:
        name = entry["name"]
        shape = tuple(entry["shape"])
        count = entry["element_count"]
        if entry["byte_offset"] != expected_offset:
            raise IntegrityError(
                f"tensor {name!r}: offset {entry['byte_offset']} leaves a "
                f"gap or overlap (expected {expected_offset})")
        if count != int(np.prod(shape, dtype=np.int64)):
            raise IntegrityError(f"tensor {name!r}: element count does not match shape")
        nbytes = count * 8
        if expected_offset + nbytes > len(blob):
            raise IntegrityError(f"tensor {name!r}: blob truncated")
        params[name] = np.frombuffer(
            blob, dtype="<f8", count=count, offset=expected_offset
        ).astype(np.float64).reshape(shape)
        expected_offset += nbytes
    if expected_offset != len(blob):
        raise IntegrityError(
            f"blob has {len(blob) - expected_offset} trailing bytes after the "
            f"last tensor {manifest['tensors'][-1]['name']!r}")

    model_config = ModelConfig.from_dict(manifest["model_config"])
    data_config = DataConfig.from_dict(manifest["data_config"])
    shape_audit(params, model_config)
    return Checkpoint(params=params, model_config=model_config,
                      data_config=data_config,
                      stage_index=manifest["stage_index"],
                      global_step=manifest["global_step"],
                      rng_state=manifest["rng_state"],
                      extra=manifest.get("extra", {}))
