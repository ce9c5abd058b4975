"""
Run manifests and the hashes that chain pipeline stages together.

The provenance key of a run is the SHA-256 of its manifest without the
wall-clock duration, the outputs, path-valued flags and the worker count:
two runs with the same key produce byte-identical artifacts.
"""
import hashlib
import json
import logging
from pathlib import Path

from .config import database_url
from .db import SessionLocal
from .errors import MissingArtifactError, ProvenanceError
from .labels import MANIFEST_FILE
from .repository import register_run_if_new
from .schemas import RunManifest

logger = logging.getLogger(__name__)

PATH_FLAGS = frozenset({"out", "scene", "dataset", "checkpoint", "codebook", "baseline", "eval_dir", "eval_dirs"})
_NON_RESULT_FLAGS = frozenset({"workers", "force"})


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_text(text: str) -> str:
    return sha256_bytes(text.encode("utf-8"))


def sha256_file(path: str | Path) -> str:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"artifact not found: {path}")
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def provenance_key(manifest: RunManifest) -> str:
    doc = manifest.model_dump(exclude={"duration_s", "outputs"})
    doc["flags"] = {
        k: v for k, v in doc["flags"].items() if k not in PATH_FLAGS and k not in _NON_RESULT_FLAGS
    }
    return sha256_text(json.dumps(doc, sort_keys=True, separators=(",", ":")))


def manifest_path(out: str | Path) -> Path:
    out = Path(out)
    if out.is_dir():
        return out / MANIFEST_FILE
    return out.with_name(out.name + ".manifest.json")


def write_manifest(manifest: RunManifest, out: str | Path) -> Path:
    path = manifest_path(out)
    path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    return path


def read_manifest(path: str | Path) -> RunManifest:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"manifest not found: {path}")
    return RunManifest.model_validate_json(path.read_text(encoding="utf-8"))


def add_output(manifest: RunManifest, role: str, path: str | Path) -> None:
    manifest.outputs[role] = str(path)
    manifest.outputs[f"{role}.sha256"] = sha256_file(path)


def record_run(manifest: RunManifest, url: str | None = None) -> tuple[str, bool]:
    """Store the run in the ledger; returns (provenance key, newly recorded)."""
    key = provenance_key(manifest)
    db = SessionLocal(url)
    try:
        is_new = register_run_if_new(db, key, manifest)
    finally:
        db.close()
    logger.info("ledger run=%s command=%s new=%s db=%s", key[:12], manifest.command, is_new, url or database_url())
    return key, is_new


def require_match(what: str, expected: str, actual: str) -> None:
    """Both hashes known and different -> the artifacts were not produced together."""
    if expected and actual and expected != actual:
        raise ProvenanceError(f"{what} hash mismatch: artifact expects {expected[:12]}, got {actual[:12]}")
