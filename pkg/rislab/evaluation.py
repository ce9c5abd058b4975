"""
Random-configuration baseline, test-set replay and summary reporting.
"""
import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codebook import Codebook, RuntimeStep, run_episode
from .dataset import Dataset, featurize_many, fit_norm, targets
from .errors import DatasetFormatError, InfeasibleRequestError, MissingArtifactError
from .labels import SERIES_FILE, SERIES_HEADER, SUMMARY_FILE, SUMMARY_HEADER, TABLE_FILE
from .metrics import mse, squared_errors
from .neural import Baseline, Localizer, Params, baseline_loss, baseline_loss_and_grads, init_baseline
from .scene import SOState
from .schemas import BaselineDims, ReportRow, TrainConfig
from .training import TrainResult, fit

logger = logging.getLogger(__name__)

__all__ = ["mse", "squared_errors", "train_baseline", "evaluate", "report_csv", "read_series", "read_summary"]

_BASELINE_INIT_STREAM = 21
N_TEST_INSTANCES = 100


# ============================================================
# BASELINE
# ============================================================

def train_baseline(train_split: Dataset, val_split: Dataset, cfg: TrainConfig, hidden: int = 64) -> TrainResult:
    """2 x `hidden` rectified feed-forward net on flattened features, coordinates only."""
    if len(train_split) == 0 or len(val_split) == 0:
        raise InfeasibleRequestError("train and validation splits must be nonempty")
    stats = fit_norm(train_split.records)
    x_tr = featurize_many(train_split.records, stats)
    x_va = featurize_many(val_split.records, stats)
    _, u_tr = targets(train_split.records)
    _, u_va = targets(val_split.records)

    dims = BaselineDims(n_inputs=x_tr.shape[1] * x_tr.shape[2], hidden=hidden)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _BASELINE_INIT_STREAM]))
    params = init_baseline(dims, rng, coord_bias=stats.u_mean)

    def batch_loss(p: Params, idx: np.ndarray):
        return baseline_loss_and_grads(p, x_tr[idx], u_tr[idx], cfg.alpha)

    def val_loss(p: Params):
        return baseline_loss(p, x_va, u_va, cfg.alpha)

    logger.info("train_baseline n_train=%d inputs=%d hidden=%d", len(x_tr), dims.n_inputs, hidden)
    result = fit(params, len(x_tr), batch_loss, val_loss, cfg)
    result.stats = stats
    return result


# ============================================================
# REPLAY
# ============================================================

@dataclass
class EvalResult:
    indices: np.ndarray         # positions within the test split
    se_random: np.ndarray
    se_optimized: np.ndarray
    row: ReportRow
    steps: list[RuntimeStep]


def pick_instances(n_test: int, n_instances: int, seed: int) -> np.ndarray:
    if n_test < 1:
        raise InfeasibleRequestError("test split is empty")
    n = min(n_instances, n_test)
    return np.sort(np.random.default_rng(seed).choice(n_test, size=n, replace=False))


def evaluate(
    test_split: Dataset,
    localizer: Localizer | None,
    codebook: Codebook | None,
    baseline: Baseline | None,
    n_instances: int = N_TEST_INSTANCES,
    seed: int = 0,
) -> EvalResult:
    """
    Baseline path: the record's own (random) configuration through the
    baseline net. Optimized path: the closed loop replayed over the same
    instances in index order with the record's P and UE site hidden. A noisy
    dataset makes the loop measure at the dataset's SNR too, seeded by seed.
    """
    for name, artifact in (("localizer checkpoint", localizer), ("codebook", codebook), ("baseline checkpoint", baseline)):
        if artifact is None:
            raise MissingArtifactError(f"evaluation needs a {name}")

    tpl = test_split.template()
    idx = pick_instances(len(test_split), n_instances, seed)
    records = [test_split.records[int(i)] for i in idx]
    _, u_true = targets(records)

    x_base = featurize_many(records, baseline.stats)
    se_random = squared_errors(baseline.locate(x_base), u_true)

    schedule = [(SOState(t=tuple(float(v) for v in r.p)), tpl.site_index(r.u)) for r in records]
    steps = run_episode(tpl, codebook, localizer, schedule, snr_db=test_split.header.snr_db, seed=seed)
    se_optimized = squared_errors(np.stack([s.u_hat for s in steps]), u_true)

    row = ReportRow.from_errors(test_split.header.n_ris, test_split.header.k, se_random, se_optimized)
    logger.info(
        "evaluate instances=%d snr_db=%s baseline_mse=%.6g optimized_mse=%.6g reduction=%.2f",
        len(idx), test_split.header.snr_db, row.baseline_mse, row.optimized_mse, row.pct_error_reduction,
    )
    return EvalResult(indices=idx, se_random=se_random, se_optimized=se_optimized, row=row, steps=steps)


# ============================================================
# CSV
# ============================================================

def report_csv(indices, se_random, se_optimized, row: ReportRow, out_dir: str | Path, table: str | None = None) -> None:
    if not len(indices) == len(se_random) == len(se_optimized):
        raise DatasetFormatError("series are not aligned")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / SERIES_FILE, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_HEADER)
        for i, r, o in zip(indices, se_random, se_optimized):
            w.writerow([int(i), repr(float(r)), repr(float(o))])
    write_summary([row], out / SUMMARY_FILE)
    if table is not None:
        (out / TABLE_FILE).write_text(table, encoding="utf-8")


def write_summary(rows: list[ReportRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for row in rows:
            w.writerow([row.n_ris, row.k] + [repr(float(getattr(row, c))) for c in SUMMARY_HEADER[2:]])


def read_series(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"series not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != SERIES_HEADER:
        raise DatasetFormatError(f"{path}: header must be {','.join(SERIES_HEADER)}", line=1)
    try:
        body = [(int(a), float(b), float(c)) for a, b, c in rows[1:]]
    except ValueError as e:
        raise DatasetFormatError(f"{path}: {e}") from e
    return (
        np.array([b[0] for b in body], dtype=np.intp),
        np.array([b[1] for b in body]),
        np.array([b[2] for b in body]),
    )


def read_summary(path: str | Path) -> list[ReportRow]:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"summary not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SUMMARY_HEADER:
            raise DatasetFormatError(f"{path}: header must be {','.join(SUMMARY_HEADER)}", line=1)
        return [ReportRow.model_validate(r) for r in reader]
