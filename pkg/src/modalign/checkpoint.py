"""Checkpoint serialization: a JSON manifest beside a raw float64 blob.

The manifest records architecture, training provenance, the parameter order,
and the sha256 of the blob; loading always re-verifies the digest. Frozen
checkpoints come back as read-only arrays so later stages cannot silently
mutate a trained model they only borrowed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def params_blob(named_values: list[tuple[str, np.ndarray]]) -> tuple[bytes, list[dict]]:
    """Concatenate parameter tensors into one little-endian float64 blob."""
    chunks = []
    order = []
    for name, value in named_values:
        arr = np.ascontiguousarray(np.asarray(value, dtype=np.float64))
        chunks.append(arr.astype("<f8").tobytes())
        order.append({"name": name, "shape": list(arr.shape)})
    return b"".join(chunks), order


def digest_params(named_values: list[tuple[str, np.ndarray]]) -> str:
    blob, _ = params_blob(named_values)
    return hashlib.sha256(blob).hexdigest()


@dataclass
class Checkpoint:
    manifest: dict
    arrays: dict[str, np.ndarray]
    path: Path | None = None

    @property
    def digest(self) -> str:
        return self.manifest["blob_sha256"]


def save_checkpoint(path, kind: str, named_values: list[tuple[str, np.ndarray]],
                    *, architecture: dict, seed: int, stage: str,
                    standardization: dict | None = None,
                    training_config: dict | None = None,
                    history: dict | None = None,
                    frozen: bool = False,
                    refs: dict | None = None) -> str:
    """Write `<path>.json` + `<path>.bin`; returns the blob sha256."""
    base = Path(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    blob, order = params_blob(named_values)
    digest = hashlib.sha256(blob).hexdigest()
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "stage": stage,
        "seed": seed,
        "architecture": architecture,
        "standardization": standardization or {},
        "training_config": training_config or {},
        "history": history or {},
        "param_order": order,
        "blob_sha256": digest,
        "frozen": bool(frozen),
        "refs": refs or {},
    }
    base.with_suffix(".bin").write_bytes(blob)
    base.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return digest


def load_checkpoint(path, expect_kind: str | None = None) -> Checkpoint:
    """Read a manifest/blob pair, verifying the recorded sha256."""
    base = Path(path)
    json_path = base if base.suffix == ".json" else base.with_suffix(".json")
    if not json_path.exists():
        raise CheckpointError(f"missing checkpoint manifest {json_path}")
    manifest = json.loads(json_path.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{json_path}: unsupported format_version {manifest.get('format_version')}")
    if expect_kind is not None and manifest.get("kind") != expect_kind:
        raise CheckpointError(
            f"{json_path}: checkpoint kind {manifest.get('kind')!r}, expected {expect_kind!r}")
    blob_path = json_path.with_suffix(".bin")
    if not blob_path.exists():
        raise CheckpointError(f"missing checkpoint blob {blob_path}")
    blob = blob_path.read_bytes()
    digest = hashlib.sha256(blob).hexdigest()
    if digest != manifest["blob_sha256"]:
        raise CheckpointError(
            f"{blob_path}: sha256 mismatch (manifest {manifest['blob_sha256'][:12]}..., "
            f"blob {digest[:12]}...)")
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for entry in manifest["param_order"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(blob):
            raise CheckpointError(f"{blob_path}: blob truncated at parameter {entry['name']!r}")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape)
        arr = arr.astype(np.float64)  # own the memory; buffer views are read-only
        if manifest.get("frozen"):
            arr.setflags(write=False)
        arrays[entry["name"]] = arr
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(f"{blob_path}: {len(blob) - offset} trailing bytes in blob")
    return Checkpoint(manifest=manifest, arrays=arrays, path=json_path)


def verify_checkpoint(path) -> str:
    """Re-hash the blob on disk and compare against the manifest; returns the digest."""
    ckpt = load_checkpoint(path)
    return ckpt.digest
