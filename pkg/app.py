import csv
import functools
import logging
import time
from pathlib import Path
from typing import List, Optional

import numpy as np
import typer

from rislab import checkpoint as ckpt
from rislab import codebook as cbk
from rislab import dataset as dset
from rislab import evaluation
from rislab.config import configure_logging, resolve_workers
from rislab.db import SessionLocal
from rislab.errors import DatasetFormatError, InfeasibleRequestError, LabError, ValidationFailure
from rislab.formatters import format_loss, format_run, format_table
from rislab.labels import (
    EXIT_VALIDATION,
    GRID_HEADER,
    HISTORY_HEADER,
    MODEL_BASELINE,
    MODEL_BILSTM,
    SERIES_FILE,
    SUMMARY_FILE,
    TABLE_FILE,
)
from rislab.provenance import add_output, provenance_key, record_run, require_match, sha256_file, write_manifest
from rislab.repository import list_runs
from rislab.scene import default_template, parse_scene, scene_hash, write_scene
from rislab.schemas import ReportRow, RunManifest, TrainConfig
from rislab.texts import TXT
from rislab.training import grid_search, split_loss, train

logger = logging.getLogger(__name__)

app = typer.Typer(add_completion=False, help=TXT.APP_HELP)


@app.callback()
def main() -> None:
    configure_logging()


def guarded(fn):
    """LabError -> message on stderr + its exit code."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except LabError as e:
            typer.echo(f"error: {e}", err=True)
            raise typer.Exit(code=e.exit_code)
        except RuntimeError as e:
            # configuration problems (bad RIS_LAB_WORKERS, bad flags)
            typer.echo(f"error: {e}", err=True)
            raise typer.Exit(code=EXIT_VALIDATION)

    return wrapper


# ============================================================
# HELPERS
# ============================================================

def _manifest(command: str, flags: dict, seed: int | None = None, **hashes: str) -> RunManifest:
    clean = {k: (str(v) if isinstance(v, Path) else v) for k, v in flags.items()}
    return RunManifest(command=command, flags=clean, seed=seed, **hashes)


def _finish(manifest: RunManifest, started: float, out: Path) -> str:
    manifest.duration_s = time.perf_counter() - started
    write_manifest(manifest, out)
    key, _ = record_run(manifest)
    return key


def _read_scene(path: Path):
    if not path.exists():
        raise ValidationFailure(f"scene not found: {path}")
    return parse_scene(path.read_text(encoding="utf-8"))


def _floats(text: str, flag: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationFailure(f"{flag} must be comma-separated numbers (got {text!r})")
    if not values:
        raise ValidationFailure(f"{flag} is empty")
    return values


def _ints(text: str, flag: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationFailure(f"{flag} must be comma-separated integers (got {text!r})")
    if not values:
        raise ValidationFailure(f"{flag} is empty")
    return values


def _splits(ds: dset.Dataset):
    # dataset seed fixes the split so every stage sees the same partition
    return dset.split(ds, ds.header.seed)


def _train_config(epochs: int, batch: int, lr: float, alpha: float, seed: int, no_clip: bool) -> TrainConfig:
    try:
        return TrainConfig(
            epochs=epochs,
            batch_size=batch,
            lr=lr,
            alpha=alpha,
            seed=seed,
            clip_norm=None if no_clip else 5.0,
        )
    except ValueError as e:
        raise ValidationFailure(str(e))


def _write_history(result, out: Path) -> Path:
    path = out.with_name(out.name + ".history.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for r in result.history:
            w.writerow([r.epoch] + [repr(getattr(r, c)) for c in HISTORY_HEADER[1:]])
    return path


# ============================================================
# COMMANDS
# ============================================================

@app.command("scene-init", help=TXT.SCENE_INIT)
@guarded
def scene_init(
    out: Path = typer.Option(..., "--out", help=TXT.OUT),
    force: bool = typer.Option(False, "--force", help=TXT.FORCE),
    n_ris: int = typer.Option(20, "--n-ris", help=TXT.N_RIS),
) -> None:
    started = time.perf_counter()
    if out.exists() and not force:
        raise ValidationFailure(TXT.exists(out))
    tpl = default_template(n_ris)
    out.write_text(write_scene(tpl), encoding="utf-8")
    parse_scene(out.read_text(encoding="utf-8"))

    manifest = _manifest("scene-init", {"out": out, "n_ris": n_ris, "force": force}, scene_hash=scene_hash(tpl))
    add_output(manifest, "scene", out)
    _finish(manifest, started, out)
    typer.echo(f"scene written to {out} ({tpl.n_ris} RIS elements, {tpl.s_ris} sensing)")


@app.command("generate", help=TXT.GENERATE)
@guarded
def generate(
    scene: Path = typer.Option(..., "--scene", help=TXT.SCENE),
    configs: int = typer.Option(..., "--configs", help=TXT.CONFIGS),
    so_samples: int = typer.Option(10, "--so-samples", help=TXT.SO_SAMPLES),
    seed: int = typer.Option(0, "--seed", help=TXT.SEED),
    out: Path = typer.Option(..., "--out", help=TXT.OUT),
    snr_db: Optional[float] = typer.Option(None, "--snr-db", help=TXT.SNR_DB),
    workers: Optional[int] = typer.Option(None, "--workers", help=TXT.WORKERS),
) -> None:
    started = time.perf_counter()
    n_workers = resolve_workers(workers)
    tpl = _read_scene(scene)
    manifest = _manifest(
        "generate",
        {"scene": scene, "configs": configs, "so_samples": so_samples, "snr_db": snr_db, "out": out, "workers": n_workers},
        seed=seed,
        scene_hash=scene_hash(tpl),
    )
    ds = dset.generate(
        tpl, configs, so_samples, seed, snr_db=snr_db, workers=n_workers, manifest=provenance_key(manifest)
    )
    dset.save(ds, out)
    add_output(manifest, "dataset", out)
    _finish(manifest, started, out)
    typer.echo(TXT.generated(len(ds), out))


@app.command("train", help=TXT.TRAIN)
@guarded
def train_cmd(
    dataset: Path = typer.Option(..., "--dataset", help=TXT.DATASET),
    epochs: int = typer.Option(200, "--epochs", help=TXT.EPOCHS),
    batch: int = typer.Option(32, "--batch", help=TXT.BATCH),
    lr: float = typer.Option(1e-4, "--lr", help=TXT.LR),
    alpha: float = typer.Option(1e-4, "--alpha", help=TXT.ALPHA),
    seed: int = typer.Option(0, "--seed", help=TXT.SEED),
    out: Path = typer.Option(..., "--out", help=TXT.OUT),
    no_clip: bool = typer.Option(False, "--no-clip", help=TXT.NO_CLIP),
    workers: Optional[int] = typer.Option(None, "--workers", help=TXT.WORKERS),
) -> None:
    started = time.perf_counter()
    n_workers = resolve_workers(workers)
    cfg = _train_config(epochs, batch, lr, alpha, seed, no_clip)
    ds = dset.load(dataset)
    d_hash = sha256_file(dataset)
    manifest = _manifest(
        "train",
        {"dataset": dataset, "out": out, **cfg.model_dump(), "workers": n_workers},
        seed=seed,
        scene_hash=ds.header.scene_hash,
        dataset_hash=d_hash,
    )
    train_split, val_split, test_split = _splits(ds)
    result = train(train_split, val_split, cfg, workers=n_workers)
    test = split_loss(result, test_split)
    ckpt.save_checkpoint(
        out, MODEL_BILSTM, result.params, result.stats, cfg, d_hash,
        result.best_val.total, result.best_epoch, provenance_key(manifest),
    )
    add_output(manifest, "checkpoint", out)
    add_output(manifest, "history", _write_history(result, out))
    _finish(manifest, started, out)
    typer.echo(TXT.trained(
        MODEL_BILSTM, result.best_epoch, result.best_val.total, out, result.best_val.accuracy, test.accuracy
    ))
    typer.echo(f"val loss {format_loss(result.best_val)}")
    typer.echo(f"test loss {format_loss(test)}")


@app.command("train-baseline", help=TXT.TRAIN_BASELINE)
@guarded
def train_baseline_cmd(
    dataset: Path = typer.Option(..., "--dataset", help=TXT.DATASET),
    epochs: int = typer.Option(200, "--epochs", help=TXT.EPOCHS),
    batch: int = typer.Option(32, "--batch", help=TXT.BATCH),
    lr: float = typer.Option(1e-4, "--lr", help=TXT.LR),
    alpha: float = typer.Option(1e-4, "--alpha", help=TXT.ALPHA),
    seed: int = typer.Option(0, "--seed", help=TXT.SEED),
    out: Path = typer.Option(..., "--out", help=TXT.OUT),
    no_clip: bool = typer.Option(False, "--no-clip", help=TXT.NO_CLIP),
) -> None:
    started = time.perf_counter()
    cfg = _train_config(epochs, batch, lr, alpha, seed, no_clip)
    ds = dset.load(dataset)
    d_hash = sha256_file(dataset)
    manifest = _manifest(
        "train-baseline",
        {"dataset": dataset, "out": out, **cfg.model_dump()},
        seed=seed,
        scene_hash=ds.header.scene_hash,
        dataset_hash=d_hash,
    )
    train_split, val_split, _ = _splits(ds)
    result = evaluation.train_baseline(train_split, val_split, cfg)
    ckpt.save_checkpoint(
        out, MODEL_BASELINE, result.params, result.stats, cfg, d_hash,
        result.best_val.total, result.best_epoch, provenance_key(manifest),
    )
    add_output(manifest, "checkpoint", out)
    add_output(manifest, "history", _write_history(result, out))
    _finish(manifest, started, out)
    typer.echo(TXT.trained(MODEL_BASELINE, result.best_epoch, result.best_val.total, out))


@app.command("grid", help=TXT.GRID)
@guarded
def grid_cmd(
    dataset: Path = typer.Option(..., "--dataset", help=TXT.DATASET),
    alphas: str = typer.Option("0,1e-4,1e-3", "--alphas", help=TXT.ALPHAS),
    lrs: str = typer.Option("1e-4,1e-3", "--lrs", help=TXT.LRS),
    epochs: int = typer.Option(20, "--epochs", help=TXT.EPOCHS),
    batch: int = typer.Option(32, "--batch", help=TXT.BATCH),
    seed: int = typer.Option(0, "--seed", help=TXT.SEED),
    out: Path = typer.Option(..., "--out", help=TXT.OUT),
    workers: Optional[int] = typer.Option(None, "--workers", help=TXT.WORKERS),
) -> None:
    started = time.perf_counter()
    n_workers = resolve_workers(workers)
    points = [{"alpha": a, "lr": r} for a in _floats(alphas, "--alphas") for r in _floats(lrs, "--lrs")]
    base = _train_config(epochs, batch, 1e-4, 1e-4, seed, False)
    ds = dset.load(dataset)
    manifest = _manifest(
        "grid",
        {"dataset": dataset, "alphas": alphas, "lrs": lrs, "epochs": epochs, "batch": batch, "out": out, "workers": n_workers},
        seed=seed,
        scene_hash=ds.header.scene_hash,
        dataset_hash=sha256_file(dataset),
    )
    train_split, val_split, _ = _splits(ds)
    try:
        result = grid_search(points, train_split, val_split, base, workers=n_workers)
    except ValueError as e:
        raise ValidationFailure(str(e))
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GRID_HEADER)
        for row in result.rows:
            w.writerow([row.rank, row.grid_index, repr(row.alpha), repr(row.lr),
                        repr(row.best_val_loss), repr(row.final_train_loss), row.best_epoch])
    add_output(manifest, "grid", out)
    _finish(manifest, started, out)
    typer.echo(f"best: alpha={result.best.alpha!r} lr={result.best.lr!r} ({len(result.rows)} grid points) -> {out}")


@app.command("calibrate", help=TXT.CALIBRATE)
@guarded
def calibrate_cmd(
    checkpoint: Path = typer.Option(..., "--checkpoint", help=TXT.CHECKPOINT),
    dataset: Path = typer.Option(..., "--dataset", help=TXT.DATASET),
    out: Path = typer.Option(..., "--out", help=TXT.OUT),
    scene: Optional[Path] = typer.Option(None, "--scene", help=TXT.SCENE),
    resolution: int = typer.Option(8, "--resolution", help=TXT.RESOLUTION),
    seed: int = typer.Option(0, "--seed", help=TXT.SEED),
    workers: Optional[int] = typer.Option(None, "--workers", help=TXT.WORKERS),
) -> None:
    started = time.perf_counter()
    n_workers = resolve_workers(workers)
    localizer, header = ckpt.load_localizer(checkpoint)
    ds = dset.load(dataset)
    d_hash = sha256_file(dataset)
    require_match("dataset", header.dataset_hash, d_hash)

    tpl = _read_scene(scene) if scene is not None else ds.template()
    s_hash = scene_hash(tpl)
    require_match("scene", ds.header.scene_hash, s_hash)
    c_hash = sha256_file(checkpoint)

    manifest = _manifest(
        "calibrate",
        {"checkpoint": checkpoint, "dataset": dataset, "scene": scene, "resolution": resolution, "out": out, "workers": n_workers},
        seed=seed,
        scene_hash=s_hash,
        dataset_hash=d_hash,
        checkpoint_hash=c_hash,
    )
    book = cbk.calibrate(
        localizer, tpl, ds.configs(), resolution,
        workers=n_workers, scene_hash=s_hash, checkpoint_hash=c_hash, manifest=provenance_key(manifest),
    )
    cbk.save_codebook(book, out)
    add_output(manifest, "codebook", out)
    _finish(manifest, started, out)
    typer.echo(TXT.calibrated(len(book.entries), len(book.probes()), out))


@app.command("evaluate", help=TXT.EVALUATE)
@guarded
def evaluate_cmd(
    checkpoint: Path = typer.Option(..., "--checkpoint", help=TXT.CHECKPOINT),
    codebook: Path = typer.Option(..., "--codebook", help=TXT.CODEBOOK),
    dataset: Path = typer.Option(..., "--dataset", help=TXT.DATASET),
    baseline: Path = typer.Option(..., "--baseline", help=TXT.BASELINE),
    out: Path = typer.Option(..., "--out", help=TXT.OUT),
    instances: int = typer.Option(100, "--instances", help=TXT.INSTANCES),
    seed: int = typer.Option(0, "--seed", help=TXT.SEED),
) -> None:
    started = time.perf_counter()
    localizer, loc_header = ckpt.load_localizer(checkpoint)
    base_model, base_header = ckpt.load_baseline(baseline)
    book = cbk.load_codebook(codebook)
    ds = dset.load(dataset)

    d_hash = sha256_file(dataset)
    c_hash = sha256_file(checkpoint)
    require_match("dataset", loc_header.dataset_hash, d_hash)
    require_match("dataset", base_header.dataset_hash, d_hash)
    require_match("checkpoint", book.checkpoint_hash, c_hash)
    require_match("scene", book.scene_hash, ds.header.scene_hash)

    _, _, test_split = _splits(ds)
    result = evaluation.evaluate(test_split, localizer, book, base_model, n_instances=instances, seed=seed)
    table = format_table([result.row])
    evaluation.report_csv(result.indices, result.se_random, result.se_optimized, result.row, out, table=table)

    manifest = _manifest(
        "evaluate",
        {"checkpoint": checkpoint, "codebook": codebook, "dataset": dataset, "baseline": baseline,
         "out": out, "instances": instances},
        seed=seed,
        scene_hash=ds.header.scene_hash,
        dataset_hash=d_hash,
        checkpoint_hash=c_hash,
    )
    for role, name in (("series", SERIES_FILE), ("summary", SUMMARY_FILE), ("table", TABLE_FILE)):
        add_output(manifest, role, out / name)
    _finish(manifest, started, out)
    typer.echo(table, nl=False)


@app.command("report", help=TXT.REPORT)
@guarded
def report_cmd(
    eval_dir: List[Path] = typer.Option(..., "--eval-dir", help=TXT.EVAL_DIR),
    out: Path = typer.Option(..., "--out", help=TXT.OUT),
) -> None:
    started = time.perf_counter()
    rows: list[ReportRow] = []
    for d in eval_dir:
        summary = evaluation.read_summary(d / SUMMARY_FILE)
        if len(summary) != 1:
            raise DatasetFormatError(f"{d / SUMMARY_FILE}: expected one summary row, found {len(summary)}")
        _, se_r, se_o = evaluation.read_series(d / SERIES_FILE)
        row = ReportRow.from_errors(summary[0].n_ris, summary[0].k, se_r, se_o)
        if not np.isclose(row.optimized_mse, summary[0].optimized_mse, rtol=1e-12, atol=0.0):
            raise DatasetFormatError(f"{d}: summary does not match its series")
        rows.append(row)
    if not rows:
        raise InfeasibleRequestError("no evaluation directories given")

    out.mkdir(parents=True, exist_ok=True)
    table = format_table(rows)
    evaluation.write_summary(rows, out / SUMMARY_FILE)
    (out / TABLE_FILE).write_text(table, encoding="utf-8")

    manifest = _manifest("report", {"eval_dirs": ",".join(str(d) for d in eval_dir), "out": out})
    add_output(manifest, "summary", out / SUMMARY_FILE)
    add_output(manifest, "table", out / TABLE_FILE)
    _finish(manifest, started, out)
    typer.echo(table, nl=False)


@app.command("sweep", help=TXT.SWEEP)
@guarded
def sweep_cmd(
    out: Path = typer.Option(..., "--out", help=TXT.SWEEP_OUT),
    n_ris: str = typer.Option("20,60,100", "--n-ris", help=TXT.N_RIS_LIST),
    configs: str = typer.Option("10,100,500", "--configs", help=TXT.CONFIGS_LIST),
    so_samples: int = typer.Option(10, "--so-samples", help=TXT.SO_SAMPLES),
    seed: int = typer.Option(0, "--seed", help=TXT.SEED),
    snr_db: Optional[float] = typer.Option(None, "--snr-db", help=TXT.SNR_DB),
    epochs: int = typer.Option(200, "--epochs", help=TXT.EPOCHS),
    batch: int = typer.Option(32, "--batch", help=TXT.BATCH),
    lr: float = typer.Option(1e-4, "--lr", help=TXT.LR),
    alpha: float = typer.Option(1e-4, "--alpha", help=TXT.ALPHA),
    resolution: int = typer.Option(8, "--resolution", help=TXT.RESOLUTION),
    instances: int = typer.Option(100, "--instances", help=TXT.INSTANCES),
    workers: Optional[int] = typer.Option(None, "--workers", help=TXT.WORKERS),
) -> None:
    """Every stage runs as its own command, so each point keeps its manifests and ledger entries."""
    started = time.perf_counter()
    n_workers = resolve_workers(workers)
    ris_counts = _ints(n_ris, "--n-ris")
    k_values = _ints(configs, "--configs")
    out.mkdir(parents=True, exist_ok=True)

    eval_dirs: list[Path] = []
    for n in ris_counts:
        scene = out / f"nris{n}.scene"
        scene_init(out=scene, force=True, n_ris=n)
        for k in k_values:
            logger.info("sweep point n_ris=%d k=%d", n, k)
            point = out / f"nris{n}_k{k}"
            point.mkdir(parents=True, exist_ok=True)
            data, model, base, book = (point / name for name in ("data.jsonl", "model.ckpt", "base.ckpt", "codebook.json"))
            generate(scene=scene, configs=k, so_samples=so_samples, seed=seed, out=data, snr_db=snr_db, workers=n_workers)
            train_cmd(dataset=data, epochs=epochs, batch=batch, lr=lr, alpha=alpha, seed=seed, out=model,
                      no_clip=False, workers=n_workers)
            train_baseline_cmd(dataset=data, epochs=epochs, batch=batch, lr=lr, alpha=alpha, seed=seed, out=base,
                               no_clip=False)
            calibrate_cmd(checkpoint=model, dataset=data, out=book, scene=None, resolution=resolution, seed=seed,
                          workers=n_workers)
            evaluate_cmd(checkpoint=model, codebook=book, dataset=data, baseline=base, out=point / "eval",
                         instances=instances, seed=seed)
            eval_dirs.append(point / "eval")

    report_cmd(eval_dir=eval_dirs, out=out / "report")
    manifest = _manifest(
        "sweep",
        {"out": out, "n_ris": n_ris, "configs": configs, "so_samples": so_samples, "snr_db": snr_db,
         "epochs": epochs, "batch": batch, "lr": lr, "alpha": alpha, "resolution": resolution,
         "instances": instances, "workers": n_workers},
        seed=seed,
    )
    add_output(manifest, "summary", out / "report" / SUMMARY_FILE)
    add_output(manifest, "table", out / "report" / TABLE_FILE)
    _finish(manifest, started, out)
    typer.echo(TXT.swept(len(eval_dirs), out / "report"))


@app.command("runs", help=TXT.RUNS)
@guarded
def runs_cmd(limit: int = typer.Option(20, "--limit", help=TXT.LIMIT)) -> None:
    db = SessionLocal()
    try:
        for r in list_runs(db, limit):
            typer.echo(format_run(r.provenance_key, r.command, r.created_at, r.duration_s))
    finally:
        db.close()


if __name__ == "__main__":
    app()
