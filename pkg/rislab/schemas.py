import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .labels import (
    CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
    CODEBOOK_VERSION,
    DATASET_VERSION,
    DEFAULT_F_CENTER,
    DEFAULT_HALF_BAND,
    DEFAULT_N_POINTS,
    TOOL_VERSION,
)


# ============================================================
# PHYSICS
# ============================================================

class DipoleProperties(BaseModel):
    model_config = ConfigDict(frozen=True)

    f_res: float = Field(gt=0)
    chi: float = Field(gt=0)
    gamma_l: float = Field(ge=0)

    @classmethod
    def of(cls, triple: tuple[float, float, float]) -> "DipoleProperties":
        f_res, chi, gamma_l = triple
        return cls(f_res=f_res, chi=chi, gamma_l=gamma_l)


class FrequencyGrid(BaseModel):
    model_config = ConfigDict(frozen=True)

    f_center: float = Field(default=DEFAULT_F_CENTER, gt=0)
    half_band: float = Field(default=DEFAULT_HALF_BAND, gt=0, lt=1)
    n_points: int = Field(default=DEFAULT_N_POINTS, ge=2)

    def frequencies(self) -> np.ndarray:
        lo = self.f_center * (1.0 - self.half_band)
        hi = self.f_center * (1.0 + self.half_band)
        return np.linspace(lo, hi, self.n_points)


# ============================================================
# MODELS / TRAINING
# ============================================================

class NormStats(BaseModel):
    """Per-feature standardization fitted on the training split."""

    mean: list[float]
    std: list[float]
    u_mean: list[float] = Field(default_factory=lambda: [0.0, 0.0])

    @property
    def width(self) -> int:
        return len(self.mean)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.mean, dtype=np.float64), np.asarray(self.std, dtype=np.float64)


class ModelDims(BaseModel):
    n_features: int = Field(ge=1)
    n_classes: int = Field(ge=1)
    hidden: int = Field(default=50, ge=1)
    hidden2: int = Field(default=50, ge=1)
    embed_dim: int = Field(default=20, ge=1)

    @property
    def concat_width(self) -> int:
        return self.hidden2 + self.embed_dim


class BaselineDims(BaseModel):
    n_inputs: int = Field(ge=1)
    hidden: int = Field(default=64, ge=1)


class TrainConfig(BaseModel):
    epochs: int = Field(default=200, ge=0)
    batch_size: int = Field(default=32, ge=1)
    lr: float = Field(default=1e-4, gt=0)
    alpha: float = Field(default=1e-4, ge=0)
    seed: int = 0
    hidden: int = Field(default=50, ge=1)
    hidden2: int = Field(default=50, ge=1)
    embed_dim: int = Field(default=20, ge=1)
    clip_norm: float | None = Field(default=5.0, gt=0)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def with_overrides(self, overrides: dict) -> "TrainConfig":
        return self.model_validate({**self.model_dump(), **overrides})


class EpochRecord(BaseModel):
    epoch: int
    train_loss: float
    val_loss: float
    val_coord: float
    val_class: float
    val_reg: float
    # nan for models without a class head
    val_accuracy: float = math.nan


# ============================================================
# FILE HEADERS
# ============================================================

class DatasetHeader(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    version: int = DATASET_VERSION
    n_points: int = Field(alias="F")
    s_ris: int = Field(alias="S_RIS")
    n_ris: int = Field(alias="N_RIS")
    k: int = Field(alias="K")
    n_obj: int
    seed: int
    scene_hash: str
    n_so_samples: int
    n_ue_sites: int
    snr_db: float | None = None
    configs: list[str]
    grid: FrequencyGrid
    scene_text: str
    manifest: str = ""

    @model_validator(mode="after")
    def _check_configs(self) -> "DatasetHeader":
        if len(self.configs) != self.k:
            raise ValueError(f"header lists {len(self.configs)} configurations but K={self.k}")
        if any(len(c) != self.n_ris for c in self.configs):
            raise ValueError("configuration length differs from N_RIS")
        return self


class CheckpointHeader(BaseModel):
    magic: str = CHECKPOINT_MAGIC
    version: int = CHECKPOINT_VERSION
    kind: str
    dims: dict[str, int]
    param_shapes: list[tuple[str, list[int]]]
    config: TrainConfig
    stats: NormStats
    seed: int
    dataset_hash: str
    val_loss: float
    best_epoch: int
    manifest: str = ""


class CodebookEntry(BaseModel):
    k_index: int = Field(ge=0)
    bits: str
    expected_mse: float


class FingerprintRow(BaseModel):
    bucket: list[int]
    probe: str
    values: list[float]


class CodebookFile(BaseModel):
    version: int = CODEBOOK_VERSION
    resolution: int = Field(ge=1)
    n_obj: int = Field(ge=1)
    n_ris: int = Field(ge=1)
    scene_hash: str
    checkpoint_hash: str
    manifest: str = ""
    entries: dict[str, CodebookEntry]
    fingerprints: list[FingerprintRow]


# ============================================================
# RUNS / REPORTS
# ============================================================

class RunManifest(BaseModel):
    command: str
    flags: dict[str, str | int | float | bool | None]
    seed: int | None = None
    scene_hash: str = ""
    dataset_hash: str = ""
    checkpoint_hash: str = ""
    tool_version: str = TOOL_VERSION
    duration_s: float = 0.0
    outputs: dict[str, str] = Field(default_factory=dict)


class ReportRow(BaseModel):
    n_ris: int
    k: int
    baseline_mse: float
    optimized_mse: float
    sigma: float
    pct_error_reduction: float

    @classmethod
    def from_errors(cls, n_ris: int, k: int, se_random: np.ndarray, se_optimized: np.ndarray) -> "ReportRow":
        baseline = float(np.mean(se_random))
        optimized = float(np.mean(se_optimized))
        pct = 100.0 * (baseline - optimized) / baseline if baseline > 0 else 0.0
        return cls(
            n_ris=n_ris,
            k=k,
            baseline_mse=baseline,
            optimized_mse=optimized,
            sigma=float(np.std(se_optimized)),
            pct_error_reduction=pct,
        )
