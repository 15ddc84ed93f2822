"""Artifact manifests with content hashes, and their verification."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .errors import StatFEMError

MANIFEST = "manifest.json"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def emit_report(report, directory) -> Path:
    """Write ``manifest.json`` listing every artifact of ``report`` with its SHA-256.

    Paths are stored relative to ``directory`` when they live under it.
    """
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StatFEMError(f"cannot create output directory {directory}: {exc}") from exc
    entries = []
    for key, path in sorted(report.artifacts.items()):
        path = Path(path)
        if not path.exists():
            raise StatFEMError(f"artifact {key!r} is missing: {path}")
        try:
            rel = path.resolve().relative_to(directory.resolve()).as_posix()
        except ValueError:
            rel = str(path.resolve())
        entries.append({"key": key, "path": rel, "sha256": sha256_file(path), "bytes": path.stat().st_size})
    manifest = {"scenario": report.name, "artifacts": entries}
    out = directory / MANIFEST
    try:
        out.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise StatFEMError(f"cannot write manifest {out}: {exc}") from exc
    return out


def verify_manifest(directory) -> list[str]:
    """Problems found when re-hashing the artifacts listed in a run directory's manifest."""
    directory = Path(directory)
    path = directory / MANIFEST if directory.is_dir() else directory
    if not path.exists():
        raise StatFEMError(f"manifest not found: {path}")
    base = path.parent
    manifest = json.loads(path.read_text())
    problems = []
    for entry in manifest.get("artifacts", []):
        p = Path(entry["path"])
        p = p if p.is_absolute() else base / p
        if not p.exists():
            problems.append(f"{entry['key']}: missing file {p}")
        elif sha256_file(p) != entry["sha256"]:
            problems.append(f"{entry['key']}: hash mismatch for {p}")
    return problems
