from sqlalchemy import desc
from sqlalchemy.exc import IntegrityError
from sqlalchemy.orm import Session

from .models import ArtifactRow, RunRow
from .schemas import RunManifest


# ============================================================
# RUN LEDGER
# ============================================================

def register_run_if_new(db: Session, key: str, manifest: RunManifest) -> bool:
    """
    Record a run under its provenance key.
    True if new, False if the same run was already recorded.
    """
    row = RunRow(
        provenance_key=key,
        command=manifest.command,
        seed=manifest.seed,
        scene_hash=manifest.scene_hash,
        dataset_hash=manifest.dataset_hash,
        checkpoint_hash=manifest.checkpoint_hash,
        tool_version=manifest.tool_version,
        duration_s=manifest.duration_s,
        manifest_json=manifest.model_dump_json(),
    )
    db.add(row)
    try:
        db.commit()
    except IntegrityError:
        db.rollback()
        return False

    for role, (path, sha) in _artifacts(manifest).items():
        db.add(ArtifactRow(run_id=row.id, role=role, path=path, sha256=sha))
    db.commit()
    return True


def _artifacts(manifest: RunManifest) -> dict[str, tuple[str, str]]:
    # outputs map "role" -> "path" and "role.sha256" -> digest
    return {
        role: (path, manifest.outputs.get(f"{role}.sha256", ""))
        for role, path in manifest.outputs.items()
        if not role.endswith(".sha256")
    }


def get_run(db: Session, key: str) -> RunRow | None:
    return db.query(RunRow).filter(RunRow.provenance_key == key).first()


def list_runs(db: Session, limit: int = 20) -> list[RunRow]:
    return db.query(RunRow).order_by(desc(RunRow.id)).limit(limit).all()


def artifacts_of(db: Session, run_id: int) -> list[ArtifactRow]:
    return db.query(ArtifactRow).filter(ArtifactRow.run_id == run_id).order_by(ArtifactRow.id).all()


def find_artifact(db: Session, sha256: str) -> ArtifactRow | None:
    return db.query(ArtifactRow).filter(ArtifactRow.sha256 == sha256).order_by(desc(ArtifactRow.id)).first()
