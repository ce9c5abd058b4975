"""
Offline calibration (SO state bucket -> best RIS configuration) and the
closed-loop runtime: sense -> estimate P -> look up configuration -> localize.

Sensing fingerprints are the BS -> sensing-element responses of the UE-free
scene, stored per bucket for every configuration the loop can be sensing
under: all-zeros (the initial state) plus every configuration some bucket
selects.
"""
import itertools
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from pydantic import ValidationError

from .dataset import add_complex_noise, runtime_noise_rng, sequence_features, simulate_site, standardize
from .errors import (
    ArtifactFormatError,
    CalibrationGapError,
    DomainError,
    InfeasibleRequestError,
    MissingArtifactError,
    NumericalFailure,
    PlacementError,
    ShapeMismatchError,
)
from .labels import CODEBOOK_VERSION, DEFAULT_RESOLUTION
from .metrics import mse
from .neural import Localizer, model_forward
from .scene import TRANSCEIVER, RISConfig, SceneTemplate, SOState, realize
from .schemas import CodebookEntry, CodebookFile, FingerprintRow
from .wavesim import sense_sweep, site_sweep

logger = logging.getLogger(__name__)

BucketKey = tuple[int, ...]


# ============================================================
# BUCKETS
# ============================================================

def quantize_so(p: SOState, resolution: int) -> BucketKey:
    if resolution < 1:
        raise InfeasibleRequestError(f"resolution must be >= 1 (got {resolution})")
    return tuple(min(int(math.floor((t % 1.0) * resolution)), resolution - 1) for t in p.t)


def bucket_keys(n_obj: int, resolution: int) -> list[BucketKey]:
    return list(itertools.product(range(resolution), repeat=n_obj))


def bucket_center(key: BucketKey, resolution: int) -> SOState:
    return SOState(t=tuple((b + 0.5) / resolution for b in key))


def key_text(key: BucketKey) -> str:
    return ",".join(str(b) for b in key)


def parse_key(text: str) -> BucketKey:
    return tuple(int(v) for v in text.split(",")) if text else ()


def fingerprint_of(h_sense: np.ndarray) -> np.ndarray:
    """Stacked [Re, Im] of an (S, F) sensing response."""
    h = np.asarray(h_sense)
    return np.concatenate([h.real.ravel(), h.imag.ravel()])


# ============================================================
# CODEBOOK
# ============================================================

@dataclass
class Fingerprint:
    bucket: BucketKey
    probe: str
    values: np.ndarray


@dataclass
class Codebook:
    resolution: int
    n_obj: int
    n_ris: int
    scene_hash: str
    checkpoint_hash: str
    entries: dict[BucketKey, CodebookEntry]
    fingerprints: list[Fingerprint]
    manifest: str = ""
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def lookup(self, key: BucketKey) -> CodebookEntry:
        entry = self.entries.get(tuple(key))
        if entry is None:
            raise CalibrationGapError([tuple(key)])
        return entry

    def probes(self) -> list[str]:
        seen: dict[str, None] = {}
        for fp in self.fingerprints:
            seen.setdefault(fp.probe, None)
        return list(seen)

    def _candidates(self, probe: str | None) -> tuple[list[BucketKey], np.ndarray]:
        cache_key = probe or ""
        if cache_key not in self._index:
            rows = [fp for fp in self.fingerprints if probe is None or fp.probe == probe]
            if not rows:
                rows = self.fingerprints
            # bucket order makes argmin resolve ties to the lowest key
            rows = sorted(rows, key=lambda fp: fp.bucket)
            self._index[cache_key] = ([fp.bucket for fp in rows], np.stack([fp.values for fp in rows]))
        return self._index[cache_key]


def estimate_so(sensed: np.ndarray, codebook: Codebook, probe: str | None = None) -> tuple[BucketKey, float]:
    """
    Nearest stored fingerprint (Euclidean over [Re, Im]); restricted to the
    active probe configuration when the codebook holds fingerprints for it.
    """
    if not codebook.fingerprints:
        raise MissingArtifactError("codebook holds no fingerprints")
    query = fingerprint_of(sensed)
    keys, matrix = codebook._candidates(probe)
    if query.shape[0] != matrix.shape[1]:
        raise ShapeMismatchError(
            f"sensed response has {query.shape[0] // 2} complex values, fingerprints have {matrix.shape[1] // 2}"
        )
    dist = np.sqrt(np.sum((matrix - query[None, :]) ** 2, axis=1))
    best = int(np.argmin(dist))
    return keys[best], float(dist[best])


# ============================================================
# CALIBRATION
# ============================================================

def expected_mse(localizer: Localizer, h_ue: np.ndarray, h_sense: np.ndarray, p: np.ndarray, k_index: int, sites: np.ndarray) -> float:
    """Mean squared localization error over the evaluation sites: h_ue (M, F), h_sense (M, S, F)."""
    raw = np.stack([sequence_features(h_ue[s], h_sense[s], p) for s in range(len(sites))])
    x = standardize(raw, localizer.stats)
    u_hat = localizer.locate(x, np.full(len(sites), k_index, dtype=np.intp))
    return mse(u_hat, sites)


def score_bucket(
    localizer: Localizer,
    tpl: SceneTemplate,
    configs: list[RISConfig],
    key: BucketKey,
    resolution: int,
    sites: np.ndarray,
    workers: int = 1,
) -> list[float]:
    """Expected MSE of every candidate configuration at the bucket's cell center."""
    p = bucket_center(key, resolution)
    bases = [realize(tpl, c, p, None) for c in configs]
    h_ue, h_sense = site_sweep(bases, sites, TRANSCEIVER, tpl.grid, workers=workers)
    p_arr = p.as_array()
    return [expected_mse(localizer, h_ue[v], h_sense[v], p_arr, v, sites) for v in range(len(configs))]


def choose(scores: list[float]) -> int:
    best = 0
    for k, s in enumerate(scores):
        if s < scores[best]:
            best = k
    return best


class CalibrationWorkload(NamedTuple):
    buckets: int
    site_sweeps: int
    forwards: int


def calibration_workload(n_obj: int, resolution: int, n_configs: int, n_sites: int) -> CalibrationWorkload:
    """
    Scoring cost: one site sweep (a factorization per frequency) per bucket and
    one model forward per (bucket, configuration, site). The bucket count grows
    as resolution ** n_obj.
    """
    buckets = resolution ** n_obj
    return CalibrationWorkload(buckets, buckets, buckets * n_configs * n_sites)


def _map_buckets(task, keys: list[BucketKey], workers: int) -> list:
    if workers <= 1:
        return [task(key) for key in keys]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(task, keys))


def calibrate(
    localizer: Localizer,
    tpl: SceneTemplate,
    configs: list[RISConfig],
    resolution: int = DEFAULT_RESOLUTION,
    sites: np.ndarray | None = None,
    workers: int = 1,
    scene_hash: str = "",
    checkpoint_hash: str = "",
    manifest: str = "",
) -> Codebook:
    if not configs:
        raise InfeasibleRequestError("calibration needs at least one candidate configuration")
    if resolution < 1:
        raise InfeasibleRequestError(f"resolution must be >= 1 (got {resolution})")
    for c in configs:
        if len(c) != tpl.n_ris:
            raise ShapeMismatchError(f"candidate configuration {c} does not have {tpl.n_ris} bits")
    sites = tpl.ue_sites if sites is None else np.asarray(sites, dtype=np.float64).reshape(-1, 2)
    keys = bucket_keys(tpl.n_obj, resolution)
    load = calibration_workload(tpl.n_obj, resolution, len(configs), len(sites))
    logger.info(
        "calibrate buckets=%d configs=%d sites=%d resolution=%d site_sweeps=%d forwards=%d",
        load.buckets, len(configs), len(sites), resolution, load.site_sweeps, load.forwards,
    )

    def score(key: BucketKey):
        try:
            scores = score_bucket(localizer, tpl, configs, key, resolution, sites)
        except (NumericalFailure, PlacementError) as e:
            logger.warning("calibrate gap bucket=%s reason=%s", key_text(key), e)
            return None
        k = choose(scores)
        logger.debug("calibrate bucket=%s k=%d mse=%.6g", key_text(key), k, scores[k])
        return CodebookEntry(k_index=k, bits=str(configs[k]), expected_mse=scores[k])

    # first bucket alone, to time it
    t0 = time.perf_counter()
    first = score(keys[0])
    per_bucket = time.perf_counter() - t0
    logger.info(
        "calibrate eta_s=%.0f per_bucket_s=%.3g workers=%d",
        per_bucket * (len(keys) - 1) / max(workers, 1), per_bucket, workers,
    )
    chosen = [first] + _map_buckets(score, keys[1:], workers)
    gaps = [key for key, entry in zip(keys, chosen) if entry is None]
    if gaps:
        raise CalibrationGapError(gaps)
    entries = dict(zip(keys, chosen))

    probes = [RISConfig.zeros(tpl.n_ris)]
    for entry in chosen:
        if entry.bits not in {str(p) for p in probes}:
            probes.append(RISConfig.from_string(entry.bits))

    def sense(key: BucketKey):
        p = bucket_center(key, resolution)
        try:
            h = sense_sweep([realize(tpl, probe, p, None) for probe in probes], tpl.grid)
        except (NumericalFailure, PlacementError) as e:
            logger.warning("calibrate gap bucket=%s reason=%s", key_text(key), e)
            return None
        return [Fingerprint(bucket=key, probe=str(probe), values=fingerprint_of(h[v])) for v, probe in enumerate(probes)]

    sensed = _map_buckets(sense, keys, workers)
    gaps = [key for key, rows in zip(keys, sensed) if rows is None]
    if gaps:
        raise CalibrationGapError(gaps)

    logger.info("calibrate done entries=%d probes=%d", len(entries), len(probes))
    return Codebook(
        resolution=resolution,
        n_obj=tpl.n_obj,
        n_ris=tpl.n_ris,
        scene_hash=scene_hash,
        checkpoint_hash=checkpoint_hash,
        entries=entries,
        fingerprints=[fp for rows in sensed for fp in rows],
        manifest=manifest,
    )


# ============================================================
# RUNTIME
# ============================================================

@dataclass(frozen=True)
class RuntimeStep:
    probe: str
    bucket: BucketKey
    distance: float
    k_index: int
    config: RISConfig
    u_hat: np.ndarray
    probs: np.ndarray


def runtime_step(
    tpl: SceneTemplate,
    codebook: Codebook,
    localizer: Localizer,
    hidden_p: SOState,
    ue_site: int,
    probe: RISConfig | None = None,
    snr_db: float | None = None,
    rng: np.random.Generator | None = None,
) -> RuntimeStep:
    """
    One closed-loop step. hidden_p and ue_site drive the simulator only; the
    model sees the estimated bucket center in place of P.

    With a finite snr_db every measurement (sensing, then h_ue, then h_sense)
    gets the same noise model as dataset generation, drawn from rng.
    """
    noisy = snr_db is not None and snr_db != math.inf
    if noisy and rng is None:
        raise DomainError("a noisy runtime step needs a random generator")
    probe = probe or RISConfig.zeros(tpl.n_ris)
    sensed = sense_sweep([realize(tpl, probe, hidden_p, None)], tpl.grid)[0]
    if noisy:
        sensed = add_complex_noise(sensed, snr_db, rng)
    key, distance = estimate_so(sensed, codebook, probe=str(probe))
    entry = codebook.lookup(key)
    chosen = RISConfig.from_string(entry.bits)

    h_ue, h_sense = simulate_site(tpl, chosen, hidden_p, ue_site)
    if noisy:
        h_ue = add_complex_noise(h_ue, snr_db, rng)
        h_sense = add_complex_noise(h_sense, snr_db, rng)
    p_est = bucket_center(key, codebook.resolution).as_array()
    x = standardize(sequence_features(h_ue, h_sense, p_est), localizer.stats)
    u_hat, probs = model_forward(x, entry.k_index, localizer.params)
    return RuntimeStep(
        probe=str(probe),
        bucket=key,
        distance=distance,
        k_index=entry.k_index,
        config=chosen,
        u_hat=u_hat,
        probs=probs,
    )


def run_episode(
    tpl: SceneTemplate,
    codebook: Codebook,
    localizer: Localizer,
    schedule: list[tuple[SOState, int]],
    snr_db: float | None = None,
    seed: int = 0,
) -> list[RuntimeStep]:
    """
    Sequential loop; each step senses under the configuration the previous
    step applied. Step i draws its measurement noise from its own stream of
    seed, so a replay is reproducible step by step.
    """
    probe = RISConfig.zeros(tpl.n_ris)
    steps = []
    for i, (p, site) in enumerate(schedule):
        rng = runtime_noise_rng(seed, i) if snr_db is not None else None
        step = runtime_step(tpl, codebook, localizer, p, site, probe, snr_db=snr_db, rng=rng)
        steps.append(step)
        probe = step.config
    return steps


# ============================================================
# FILE FORMAT
# ============================================================

def to_file(codebook: Codebook) -> CodebookFile:
    return CodebookFile(
        version=CODEBOOK_VERSION,
        resolution=codebook.resolution,
        n_obj=codebook.n_obj,
        n_ris=codebook.n_ris,
        scene_hash=codebook.scene_hash,
        checkpoint_hash=codebook.checkpoint_hash,
        manifest=codebook.manifest,
        entries={key_text(k): e for k, e in codebook.entries.items()},
        fingerprints=[
            FingerprintRow(bucket=list(fp.bucket), probe=fp.probe, values=fp.values.tolist())
            for fp in codebook.fingerprints
        ],
    )


def save_codebook(codebook: Codebook, path: str | Path) -> None:
    Path(path).write_text(to_file(codebook).model_dump_json(), encoding="utf-8")
    logger.info("codebook saved path=%s entries=%d", path, len(codebook.entries))


def load_codebook(path: str | Path) -> Codebook:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"codebook not found: {path}")
    try:
        doc = CodebookFile.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise ArtifactFormatError(f"{path}: invalid codebook: {e}") from e
    if doc.version != CODEBOOK_VERSION:
        raise ArtifactFormatError(f"{path}: unsupported codebook version {doc.version}")

    entries = {}
    for text, entry in doc.entries.items():
        key = parse_key(text)
        if len(key) != doc.n_obj or any(not 0 <= b < doc.resolution for b in key):
            raise ArtifactFormatError(f"{path}: bucket key {text!r} outside the lattice")
        if len(entry.bits) != doc.n_ris or any(ch not in "01" for ch in entry.bits):
            raise ArtifactFormatError(f"{path}: bucket {text!r} stores an invalid configuration")
        entries[key] = entry
    if len(entries) != doc.resolution ** doc.n_obj:
        raise ArtifactFormatError(f"{path}: {len(entries)} entries for {doc.resolution ** doc.n_obj} buckets")

    widths = {len(row.values) for row in doc.fingerprints}
    if len(widths) > 1:
        raise ArtifactFormatError(f"{path}: fingerprints of unequal length")
    fingerprints = [
        Fingerprint(bucket=tuple(row.bucket), probe=row.probe, values=np.asarray(row.values, dtype=np.float64))
        for row in doc.fingerprints
    ]
    return Codebook(
        resolution=doc.resolution,
        n_obj=doc.n_obj,
        n_ris=doc.n_ris,
        scene_hash=doc.scene_hash,
        checkpoint_hash=doc.checkpoint_hash,
        entries=entries,
        fingerprints=fingerprints,
        manifest=doc.manifest,
    )
