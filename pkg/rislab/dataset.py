"""
Supervised dataset {h_ue, h_sense, p, k, u}: generation, file format,
splits and featurization.
"""
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from .errors import (
    DatasetFormatError,
    DomainError,
    InfeasibleRequestError,
    MissingArtifactError,
    NumericalFailure,
    ShapeMismatchError,
)
from .labels import DATASET_VERSION, STD_FLOOR
from .scene import TRANSCEIVER, RISConfig, SceneTemplate, SOState, parse_scene, realize, sample_so_state, scene_hash, write_scene
from .schemas import DatasetHeader, NormStats
from .wavesim import site_sweep

logger = logging.getLogger(__name__)

# SeedSequence stream tags
_SO_STREAM = 1
_NOISE_STREAM = 2
_RUNTIME_NOISE_STREAM = 3


@dataclass(frozen=True)
class DatasetRecord:
    h_ue: np.ndarray      # (F,) complex
    h_sense: np.ndarray   # (S, F) complex
    p: np.ndarray         # (n_obj,)
    k_index: int
    k_onehot: np.ndarray  # (K,)
    u: np.ndarray         # (2,)


@dataclass
class Dataset:
    header: DatasetHeader
    records: list[DatasetRecord]

    def __len__(self) -> int:
        return len(self.records)

    def subset(self, idx) -> "Dataset":
        return Dataset(header=self.header, records=[self.records[int(i)] for i in idx])

    def template(self) -> SceneTemplate:
        return parse_scene(self.header.scene_text)

    def configs(self) -> list[RISConfig]:
        return [RISConfig.from_string(c) for c in self.header.configs]


# ============================================================
# ONE-HOT
# ============================================================

def one_hot(k_index: int, n_classes: int) -> np.ndarray:
    if not 0 <= k_index < n_classes:
        raise DomainError(f"class index {k_index} outside [0, {n_classes})")
    v = np.zeros(n_classes, dtype=np.int8)
    v[k_index] = 1
    return v


def arg_of(onehot) -> int:
    v = np.asarray(onehot)
    hits = np.flatnonzero(v)
    if len(hits) != 1 or v[hits[0]] != 1:
        raise DomainError("not a one-hot vector")
    return int(hits[0])


# ============================================================
# GENERATION
# ============================================================

def draw_configs(rng: np.random.Generator, n_ris: int, n_configs: int) -> list[RISConfig]:
    """K distinct random configurations (rejection sampling on duplicates)."""
    if n_configs < 1:
        raise InfeasibleRequestError("need at least one configuration")
    if n_configs > 2 ** n_ris:
        raise InfeasibleRequestError(f"K={n_configs} exceeds the 2^{n_ris}={2 ** n_ris} distinct configurations")
    seen: set[tuple[int, ...]] = set()
    out = []
    while len(out) < n_configs:
        bits = tuple(int(b) for b in rng.integers(0, 2, size=n_ris))
        if bits in seen:
            continue
        seen.add(bits)
        out.append(RISConfig(bits=bits))
    return out


def _stream(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *tags]))


def simulate_site(
    tpl: SceneTemplate,
    config: RISConfig,
    p: SOState,
    site: int,
    workers: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """(h_ue (F,), h_sense (S, F)) for one configuration, SO state and UE site."""
    base = realize(tpl, config, p, None)
    sites = tpl.ue_sites
    if not 0 <= site < len(sites):
        raise ShapeMismatchError(f"UE site {site} out of range [0, {len(sites)})")
    h_ue, h_sense = site_sweep([base], sites[site:site + 1], TRANSCEIVER, tpl.grid, workers=workers)
    return h_ue[0, 0], h_sense[0, 0]


def generate(
    tpl: SceneTemplate,
    n_configs: int,
    n_so_samples: int,
    seed: int,
    snr_db: float | None = None,
    workers: int = 1,
    manifest: str = "",
) -> Dataset:
    if n_so_samples < 1:
        raise InfeasibleRequestError("n_so_samples must be >= 1")
    rng = np.random.default_rng(seed)
    configs = draw_configs(rng, tpl.n_ris, n_configs)
    sites = tpl.ue_sites
    n_sites = len(sites)
    logger.info(
        "generate configs=%d so_samples=%d sites=%d seed=%d n_ris=%d",
        n_configs, n_so_samples, n_sites, seed, tpl.n_ris,
    )

    groups = [(c, j) for c in range(n_configs) for j in range(n_so_samples)]
    results: list[list[DatasetRecord] | None] = [None] * len(groups)

    def run_group(gi: int) -> None:
        c, j = groups[gi]
        if tpl.n_obj:
            p = sample_so_state(_stream(seed, _SO_STREAM, c, j), tpl)
        else:
            p = SOState(t=())
        try:
            h_ue, h_sense = site_sweep([realize(tpl, configs[c], p, None)], sites, TRANSCEIVER, tpl.grid)
        except NumericalFailure as e:
            raise NumericalFailure(f"config {c} so_sample {j}: {e}") from e
        onehot = one_hot(c, n_configs)
        recs = []
        for s in range(n_sites):
            rec = DatasetRecord(
                h_ue=h_ue[0, s],
                h_sense=h_sense[0, s],
                p=p.as_array(),
                k_index=c,
                k_onehot=onehot,
                u=sites[s].copy(),
            )
            if snr_db is not None:
                index = gi * n_sites + s
                rec = add_noise(rec, snr_db, _stream(seed, _NOISE_STREAM, index))
            recs.append(rec)
        results[gi] = recs

    if workers <= 1:
        for gi in range(len(groups)):
            run_group(gi)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_group, range(len(groups))))

    records = [r for group in results for r in group]
    header = DatasetHeader(
        n_points=tpl.grid.n_points,
        s_ris=tpl.s_ris,
        n_ris=tpl.n_ris,
        k=n_configs,
        n_obj=tpl.n_obj,
        seed=seed,
        scene_hash=scene_hash(tpl),
        n_so_samples=n_so_samples,
        n_ue_sites=n_sites,
        snr_db=snr_db,
        configs=[str(c) for c in configs],
        grid=tpl.grid,
        scene_text=write_scene(tpl),
        manifest=manifest,
    )
    logger.info("generate done records=%d", len(records))
    return Dataset(header=header, records=records)


def add_complex_noise(h: np.ndarray, snr_db: float | None, rng: np.random.Generator) -> np.ndarray:
    """Circular complex Gaussian noise scaled to the mean power of h; None or +inf disables it."""
    if snr_db is None or snr_db == math.inf:
        return h
    if not math.isfinite(snr_db):
        raise DomainError(f"snr_db must be finite or +inf (got {snr_db})")
    if h.size == 0:
        return h
    sigma2 = float(np.mean(np.abs(h) ** 2)) * 10.0 ** (-snr_db / 10.0)
    n = rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape)
    return h + math.sqrt(0.5 * sigma2) * n


def add_noise(record: DatasetRecord, snr_db: float | None, rng: np.random.Generator) -> DatasetRecord:
    """Per-record noise; h_ue draws first, then h_sense."""
    if snr_db is None or snr_db == math.inf:
        return record
    h_ue = add_complex_noise(record.h_ue, snr_db, rng)
    return replace(record, h_ue=h_ue, h_sense=add_complex_noise(record.h_sense, snr_db, rng))


def runtime_noise_rng(seed: int, step: int) -> np.random.Generator:
    """Noise stream for the step-th measurement of a closed-loop replay."""
    return _stream(seed, _RUNTIME_NOISE_STREAM, step)


# ============================================================
# SPLITS
# ============================================================

def split_sizes(n: int) -> tuple[int, int, int]:
    # test: floor 20%; val: 20% of the rest rounded up; train: remainder
    n_test = n // 5
    rest = n - n_test
    n_val = -(-rest // 5)
    return rest - n_val, n_val, n_test


def split(dataset: Dataset, seed: int) -> tuple[Dataset, Dataset, Dataset]:
    n = len(dataset)
    if n < 5:
        raise InfeasibleRequestError(f"dataset too small to split ({n} records, need >= 5)")
    n_train, n_val, n_test = split_sizes(n)
    order = np.random.default_rng(seed).permutation(n)
    train = order[:n_train]
    val = order[n_train:n_train + n_val]
    test = order[n_train + n_val:]
    return dataset.subset(train), dataset.subset(val), dataset.subset(test)


# ============================================================
# FEATURES
# ============================================================

def feature_width(s_ris: int, n_obj: int) -> int:
    return 2 + 2 * s_ris + n_obj


def sequence_features(h_ue: np.ndarray, h_sense: np.ndarray, p: np.ndarray) -> np.ndarray:
    """(F, D) rows [Re h_ue, Im h_ue, Re h_sense.., Im h_sense.., p..]."""
    n_f = h_ue.shape[0]
    p = np.asarray(p, dtype=np.float64)
    return np.concatenate(
        [
            h_ue.real[:, None],
            h_ue.imag[:, None],
            h_sense.real.T.reshape(n_f, -1),
            h_sense.imag.T.reshape(n_f, -1),
            np.broadcast_to(p, (n_f, p.shape[0])),
        ],
        axis=1,
    )


def raw_features(record: DatasetRecord) -> np.ndarray:
    return sequence_features(record.h_ue, record.h_sense, record.p)


def fit_norm(train: list[DatasetRecord]) -> NormStats:
    if not train:
        raise InfeasibleRequestError("cannot fit normalization on an empty split")
    raw = np.stack([raw_features(r) for r in train])
    flat = raw.reshape(-1, raw.shape[-1])
    mean = flat.mean(axis=0)
    std = np.maximum(flat.std(axis=0), STD_FLOOR)
    u_mean = np.mean([r.u for r in train], axis=0)
    return NormStats(mean=mean.tolist(), std=std.tolist(), u_mean=u_mean.tolist())


def standardize(raw: np.ndarray, stats: NormStats) -> np.ndarray:
    if raw.shape[-1] != stats.width:
        raise ShapeMismatchError(f"feature width {raw.shape[-1]} does not match normalization width {stats.width}")
    mean, std = stats.arrays()
    out = (raw - mean) / std
    out[..., std <= STD_FLOOR] = 0.0
    return out


def featurize(record: DatasetRecord, stats: NormStats) -> np.ndarray:
    return standardize(raw_features(record), stats)


def featurize_many(records: list[DatasetRecord], stats: NormStats) -> np.ndarray:
    """(N, F, D)"""
    return standardize(np.stack([raw_features(r) for r in records]), stats)


def targets(records: list[DatasetRecord]) -> tuple[np.ndarray, np.ndarray]:
    return (
        np.array([r.k_index for r in records], dtype=np.intp),
        np.array([r.u for r in records], dtype=np.float64),
    )


# ============================================================
# FILE FORMAT
# ============================================================

def _pairs(h: np.ndarray) -> list:
    return np.stack([h.real, h.imag], axis=-1).tolist()


def _record_line(r: DatasetRecord) -> str:
    obj = {
        "h_ue": _pairs(r.h_ue),
        "h_sense": _pairs(r.h_sense),
        "p": r.p.tolist(),
        "k_index": int(r.k_index),
        "k_onehot": [int(v) for v in r.k_onehot],
        "u": r.u.tolist(),
    }
    return json.dumps(obj, separators=(",", ":"))


def save(dataset: Dataset, path: str | Path) -> None:
    header = dataset.header.model_dump_json(by_alias=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for r in dataset.records:
            fh.write(_record_line(r) + "\n")


def _complex(values, shape: tuple[int, ...], line_no: int, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != shape + (2,):
        raise DatasetFormatError(f"{name} has shape {arr.shape[:-1]}, expected {shape}", line_no)
    return arr[..., 0] + 1j * arr[..., 1]


def _parse_record(line: str, line_no: int, h: DatasetHeader) -> DatasetRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"malformed record ({e.msg})", line_no)
    missing = {"h_ue", "h_sense", "p", "k_index", "k_onehot", "u"} - set(obj)
    if missing:
        raise DatasetFormatError(f"record lacks field(s) {sorted(missing)}", line_no)
    try:
        h_ue = _complex(obj["h_ue"], (h.n_points,), line_no, "h_ue")
        h_sense = _complex(obj["h_sense"], (h.s_ris, h.n_points), line_no, "h_sense")
        p = np.asarray(obj["p"], dtype=np.float64)
        onehot = np.asarray(obj["k_onehot"], dtype=np.int8)
        u = np.asarray(obj["u"], dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise DatasetFormatError(f"bad record values ({e})", line_no)
    k_index = obj["k_index"]
    if p.shape != (h.n_obj,) or u.shape != (2,) or onehot.shape != (h.k,):
        raise DatasetFormatError("record dimensions disagree with the header", line_no)
    if not isinstance(k_index, int) or not 0 <= k_index < h.k or onehot.sum() != 1 or onehot[k_index] != 1:
        raise DatasetFormatError("k_onehot does not encode k_index", line_no)
    if not (np.all(np.isfinite(h_ue)) and np.all(np.isfinite(h_sense))):
        raise DatasetFormatError("non-finite channel values", line_no)
    return DatasetRecord(h_ue=h_ue, h_sense=h_sense, p=p, k_index=k_index, k_onehot=onehot, u=u)


def load(path: str | Path) -> Dataset:
    if not Path(path).exists():
        raise MissingArtifactError(f"dataset not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DatasetFormatError("empty dataset file", 1)
    try:
        raw_header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"malformed header ({e.msg})", 1)
    if raw_header.get("version") != DATASET_VERSION:
        raise DatasetFormatError(
            f"dataset version {raw_header.get('version')!r} not supported (expected {DATASET_VERSION})", 1
        )
    try:
        header = DatasetHeader.model_validate(raw_header)
    except ValidationError as e:
        raise DatasetFormatError(f"invalid header: {e.errors()[0]['msg']}", 1)
    if header.grid.n_points != header.n_points:
        raise DatasetFormatError(f"header F={header.n_points} disagrees with its grid ({header.grid.n_points})", 1)

    records = [_parse_record(line, i, header) for i, line in enumerate(lines[1:], start=2)]
    expected = header.k * header.n_so_samples * header.n_ue_sites
    if len(records) != expected:
        raise DatasetFormatError(f"file holds {len(records)} records, header implies {expected}", len(lines))
    return Dataset(header=header, records=records)
