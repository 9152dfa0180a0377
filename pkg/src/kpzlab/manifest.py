"""Run manifests: parameter echo, seeds, digests, recorded checks.

One manifest per output directory.  The manifest plus the master seed is
enough to bit-reproduce every data file it lists (the manifest itself
carries wall-clock time and is the one file that varies across reruns).
"""

from __future__ import annotations

import hashlib
import json
from importlib import resources
from pathlib import Path

MANIFEST_VERSION = "1"
MANIFEST_NAME = "manifest.json"


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest_schema() -> dict:
    text = resources.files("kpzlab").joinpath("manifest_schema.json").read_text()
    return json.loads(text)


def write_manifest(out_dir, command: str, params: dict, master_seed: int,
                   replica_seeds, wall_clock_s: float, event_counts,
                   inputs=(), outputs=(), checks=()) -> Path:
    """Write manifest.json into out_dir; outputs/inputs are paths to digest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "version": MANIFEST_VERSION,
        "command": command,
        "params": params,
        "master_seed": int(master_seed),
        "replica_seeds": [int(s) for s in replica_seeds],
        "wall_clock_s": float(wall_clock_s),
        "event_counts": [float(c) for c in event_counts],
        "inputs": [{"path": str(p), "sha256": file_digest(p)} for p in inputs],
        "outputs": [{"path": Path(p).name, "sha256": file_digest(p),
                     "bytes": Path(p).stat().st_size} for p in outputs],
        "checks": [dict(c) for c in checks],
    }
    validate_manifest(doc)
    path = out_dir / MANIFEST_NAME
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def validate_manifest(doc: dict) -> None:
    import jsonschema

    jsonschema.validate(doc, manifest_schema())


def load_manifest(out_dir) -> dict:
    path = Path(out_dir) / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(f"no {MANIFEST_NAME} in {out_dir}")
    with open(path) as fh:
        doc = json.load(fh)
    validate_manifest(doc)
    return doc
