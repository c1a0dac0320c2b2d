"""Structured run reports and the per-run manifest.

Every CLI invocation writes one RunReport JSON — on failure too, with an
error section — and refreshes `manifest.json`, an index of every file the
run directory contains with its sha256. Reports reference files by path
relative to the run directory, and serial mode zeroes wall time, so two
runs with the same seeds are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class RunReport:
    command: str
    config: dict
    version: str
    wall_time_s: float = 0.0
    metrics: dict = field(default_factory=dict)
    checkpoints: dict = field(default_factory=dict)  # name -> blob sha256
    outputs: list = field(default_factory=list)      # paths relative to out dir
    error: dict | None = None

    def fail(self, exc: BaseException) -> "RunReport":
        self.error = {"type": type(exc).__name__, "message": str(exc)}
        return self

    def to_dict(self) -> dict:
        out = {"command": self.command, "config": self.config,
               "version": self.version, "wall_time_s": self.wall_time_s,
               "metrics": self.metrics, "checkpoints": self.checkpoints,
               "outputs": sorted(self.outputs)}
        if self.error is not None:
            out["error"] = self.error
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True,
                          default=_jsonable) + "\n"


def _jsonable(value):
    # numpy scalars and arrays sneak into metrics dicts
    if hasattr(value, "tolist"):
        return value.tolist()
    if hasattr(value, "item"):
        return value.item()
    raise TypeError(f"not JSON-serializable: {type(value).__name__}")


def write_report(report: RunReport, out_dir, *, serial: bool = False) -> Path:
    if serial:
        report.wall_time_s = 0.0
    out_dir = Path(out_dir)
    path = out_dir / "reports" / f"{report.command}_report.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_json(), encoding="utf-8")
    return path


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def update_manifest(out_dir) -> Path:
    """Rewrite manifest.json as {relative path: sha256} over the whole run
    directory (manifest itself excluded), sorted for stable bytes."""
    out_dir = Path(out_dir)
    manifest_path = out_dir / "manifest.json"
    entries = {}
    for path in sorted(out_dir.rglob("*")):
        if path.is_file() and path != manifest_path:
            entries[path.relative_to(out_dir).as_posix()] = sha256_file(path)
    manifest_path.write_text(json.dumps(entries, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")
    return manifest_path
