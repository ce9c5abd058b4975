"""
Checkpoint file: one JSON header line, then every parameter as
little-endian float64 in a fixed order.

    bilstm:   fw.Wx fw.Wh fw.b bw.Wx bw.Wh bw.b l2.Wx l2.Wh l2.b embed coord.W coord.b cls.W cls.b
    baseline: h1.W h1.b h2.W h2.b out.W out.b

Arrays are written row-major; gate blocks within a cell run i, f, g, o.
"""
import logging
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from .errors import ArtifactFormatError, MissingArtifactError
from .labels import CHECKPOINT_MAGIC, CHECKPOINT_VERSION, MODEL_BASELINE, MODEL_BILSTM
from .neural import BASELINE_ORDER, PARAM_ORDER, Baseline, Localizer, Params, dims_of
from .schemas import CheckpointHeader, NormStats, TrainConfig

logger = logging.getLogger(__name__)

_ORDER = {MODEL_BILSTM: PARAM_ORDER, MODEL_BASELINE: BASELINE_ORDER}
_LE_F64 = np.dtype("<f8")


def _dims(kind: str, params: Params) -> dict[str, int]:
    if kind == MODEL_BILSTM:
        return dims_of(params).model_dump()
    return {"n_inputs": params["h1.W"].shape[0], "hidden": params["h1.W"].shape[1]}


def save_checkpoint(
    path: str | Path,
    kind: str,
    params: Params,
    stats: NormStats,
    config: TrainConfig,
    dataset_hash: str,
    val_loss: float,
    best_epoch: int,
    manifest: str = "",
) -> CheckpointHeader:
    if kind not in _ORDER:
        raise ArtifactFormatError(f"unknown model kind {kind!r}")
    order = _ORDER[kind]
    header = CheckpointHeader(
        kind=kind,
        dims=_dims(kind, params),
        param_shapes=[(name, list(params[name].shape)) for name in order],
        config=config,
        stats=stats,
        seed=config.seed,
        dataset_hash=dataset_hash,
        val_loss=val_loss,
        best_epoch=best_epoch,
        manifest=manifest,
    )
    blob = b"".join(np.ascontiguousarray(params[name], dtype=_LE_F64).tobytes() for name in order)
    with open(path, "wb") as fh:
        fh.write(header.model_dump_json().encode("utf-8"))
        fh.write(b"\n")
        fh.write(blob)
    logger.info("checkpoint saved path=%s kind=%s params=%d", path, kind, len(blob) // 8)
    return header


def load_checkpoint(path: str | Path) -> tuple[CheckpointHeader, Params]:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    cut = raw.find(b"\n")
    if cut < 0:
        raise ArtifactFormatError(f"{path}: missing checkpoint header")
    try:
        header = CheckpointHeader.model_validate_json(raw[:cut])
    except ValidationError as e:
        raise ArtifactFormatError(f"{path}: invalid checkpoint header: {e}") from e
    if header.magic != CHECKPOINT_MAGIC or header.version != CHECKPOINT_VERSION:
        raise ArtifactFormatError(f"{path}: not a version {CHECKPOINT_VERSION} checkpoint")
    if header.kind not in _ORDER or [n for n, _ in header.param_shapes] != list(_ORDER[header.kind]):
        raise ArtifactFormatError(f"{path}: parameter order does not match kind {header.kind!r}")

    body = raw[cut + 1:]
    sizes = [int(np.prod(shape)) for _, shape in header.param_shapes]
    if len(body) != 8 * sum(sizes):
        raise ArtifactFormatError(f"{path}: expected {8 * sum(sizes)} parameter bytes, found {len(body)}")
    flat = np.frombuffer(body, dtype=_LE_F64)
    params: Params = {}
    offset = 0
    for (name, shape), size in zip(header.param_shapes, sizes):
        params[name] = flat[offset:offset + size].astype(np.float64).reshape(shape)
        offset += size
    if not all(np.all(np.isfinite(v)) for v in params.values()):
        raise ArtifactFormatError(f"{path}: checkpoint holds non-finite parameters")
    return header, params


def load_localizer(path: str | Path) -> tuple[Localizer, CheckpointHeader]:
    header, params = load_checkpoint(path)
    if header.kind != MODEL_BILSTM:
        raise ArtifactFormatError(f"{path}: expected a {MODEL_BILSTM} checkpoint, found {header.kind}")
    return Localizer(params=params, stats=header.stats), header


def load_baseline(path: str | Path) -> tuple[Baseline, CheckpointHeader]:
    header, params = load_checkpoint(path)
    if header.kind != MODEL_BASELINE:
        raise ArtifactFormatError(f"{path}: expected a {MODEL_BASELINE} checkpoint, found {header.kind}")
    return Baseline(params=params, stats=header.stats), header
