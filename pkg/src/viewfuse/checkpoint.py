"""Two-file checkpoints: a JSON manifest and a little-endian float32 blob.

``{base}.json`` records the format version, a config snapshot, the blob
filename, and one entry per tensor: name, shape, byte offset, byte size,
and whether it was trainable at save time. ``{base}.bin`` is the raw
``<f4`` data in registry order with no padding, so offsets are exact and
a round-trip restores every value bitwise.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .nn import ParameterRegistry

FORMAT_VERSION = 1
_DTYPE = np.dtype("<f4")


class CheckpointError(RuntimeError):
    pass


def _paths(base: str | Path) -> tuple[Path, Path]:
    base = Path(base)
    if base.suffix in (".json", ".bin"):
        base = base.with_suffix("")
    return base.with_suffix(".json"), base.with_suffix(".bin")


def save_checkpoint(base: str | Path, registry: ParameterRegistry, config: dict) -> Path:
    """Write manifest + blob; returns the manifest path."""
    manifest_path, blob_path = _paths(base)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    tensors = []
    chunks = []
    offset = 0
    for e in registry.entries():
        if e.tensor is None:
            raise CheckpointError(f"parameter {e.name!r} is not materialized")
        raw = np.ascontiguousarray(e.tensor.data, dtype=_DTYPE).tobytes()
        tensors.append({
            "name": e.name,
            "shape": list(e.shape),
            "offset": offset,
            "size": len(raw),
            "trainable": bool(e.trainable),
        })
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": config,
        "blob": blob_path.name,
        "tensors": tensors,
    }
    blob_path.write_bytes(b"".join(chunks))
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest_path


def read_checkpoint(base: str | Path) -> tuple[dict, dict[str, np.ndarray], dict[str, bool]]:
    """Return (config, arrays by name, trainable flags by name).

    Validates the format version, that entries tile the blob exactly
    (ascending offsets, no gaps, no overhang), and that each entry's
    byte size matches its shape.
    """
    manifest_path, blob_path = _paths(base)
    if not manifest_path.is_file():
        raise CheckpointError(f"checkpoint manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{manifest_path} is not valid JSON: {exc}") from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {manifest.get('format_version')!r}, "
            f"expected {FORMAT_VERSION}"
        )
    blob_path = manifest_path.parent / manifest["blob"]
    if not blob_path.is_file():
        raise CheckpointError(f"checkpoint blob not found: {blob_path}")
    blob = blob_path.read_bytes()
    arrays: dict[str, np.ndarray] = {}
    trainable: dict[str, bool] = {}
    cursor = 0
    for t in manifest["tensors"]:
        name = t["name"]
        shape = tuple(int(s) for s in t["shape"])
        expected = int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize if shape else _DTYPE.itemsize
        if int(t["offset"]) != cursor:
            raise CheckpointError(
                f"tensor {name!r}: offset {t['offset']} leaves a gap or overlap at byte {cursor}"
            )
        if int(t["size"]) != expected:
            raise CheckpointError(
                f"tensor {name!r}: size {t['size']} bytes does not match shape {shape}"
            )
        end = cursor + expected
        if end > len(blob):
            raise CheckpointError(f"tensor {name!r}: blob truncated at byte {len(blob)}")
        if name in arrays:
            raise CheckpointError(f"duplicate tensor {name!r} in manifest")
        arrays[name] = np.frombuffer(blob[cursor:end], dtype=_DTYPE).reshape(shape).copy()
        trainable[name] = bool(t["trainable"])
        cursor = end
    if cursor != len(blob):
        raise CheckpointError(f"blob has {len(blob) - cursor} trailing bytes not covered by the manifest")
    return manifest["config"], arrays, trainable


def load_checkpoint(base: str | Path, registry: ParameterRegistry) -> dict:
    """Restore values and trainable flags into a registry; returns the config."""
    config, arrays, trainable = read_checkpoint(base)
    try:
        registry.load_arrays(arrays)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"checkpoint does not fit this model: {exc}") from None
    for name, flag in trainable.items():
        registry.set_trainable(name, flag)
    return config
