from sqlalchemy import DateTime, Float, ForeignKey, Integer, String, Text
from sqlalchemy.orm import Mapped, mapped_column
from sqlalchemy.sql import func

from .db import Base


class RunRow(Base):
    __tablename__ = "runs"

    id: Mapped[int] = mapped_column(Integer, primary_key=True, index=True)
    provenance_key: Mapped[str] = mapped_column(String, unique=True, index=True)
    command: Mapped[str] = mapped_column(String, index=True)
    seed: Mapped[int | None] = mapped_column(Integer, nullable=True)
    scene_hash: Mapped[str] = mapped_column(String, default="")
    dataset_hash: Mapped[str] = mapped_column(String, default="")
    checkpoint_hash: Mapped[str] = mapped_column(String, default="")
    tool_version: Mapped[str] = mapped_column(String, default="")
    duration_s: Mapped[float] = mapped_column(Float, default=0.0)
    manifest_json: Mapped[str] = mapped_column(Text)
    created_at: Mapped[str] = mapped_column(DateTime(timezone=True), server_default=func.now())


class ArtifactRow(Base):
    __tablename__ = "artifacts"

    id: Mapped[int] = mapped_column(Integer, primary_key=True, index=True)
    run_id: Mapped[int] = mapped_column(Integer, ForeignKey("runs.id"), index=True)
    role: Mapped[str] = mapped_column(String, default="")  # dataset / checkpoint / codebook / series ...
    path: Mapped[str] = mapped_column(Text)
    sha256: Mapped[str] = mapped_column(String, index=True)
    created_at: Mapped[str] = mapped_column(DateTime(timezone=True), server_default=func.now())
