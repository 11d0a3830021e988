"""Run manifests: config snapshot, seeds and checksummed artifact listing.

Manifests are deterministic for identical config+seed; the creation
timestamp honors SOURCE_DATE_EPOCH (the reproducible-builds convention)
so that repeated runs can be compared byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from pathlib import Path

from . import __version__

MANIFEST_SCHEMA = "cavitytwin-manifest/1"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def run_timestamp() -> str:
    """UTC timestamp string; SOURCE_DATE_EPOCH overrides wall-clock time."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch is not None else int(time.time())
    return time.strftime("%Y%m%dT%H%M%SZ", time.gmtime(t))


def write_manifest(run_dir, config: dict, seed: int, params_hash: str,
                   files: list, extra: dict | None = None) -> Path:
    """Write manifest.json listing every output file with its checksum.

    `files` are paths inside run_dir; they are stored relative to it.
    """
    run_dir = Path(run_dir)
    entries = []
    for f in sorted(Path(f) for f in files):
        entries.append({
            "path": str(f.relative_to(run_dir)),
            "sha256": sha256_file(f),
            "bytes": f.stat().st_size,
        })
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "tool_version": __version__,
        "created": run_timestamp(),
        "seed": seed,
        "params_hash": params_hash,
        "config": config,
        "files": entries,
    }
    if extra:
        manifest.update(extra)
    path = run_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
