# rislab/texts.py
import math


class TXT:
    APP_HELP = (
        "RIS localization workbench: simulate a reverberant enclosure, train the "
        "BiLSTM localizer, calibrate the RIS codebook and evaluate it against a "
        "random-configuration baseline.\n\n"
        "Exit codes: 0 success, 2 validation error, 3 numerical failure, 4 provenance mismatch.\n"
        "Environment: RIS_LAB_WORKERS (worker count), RIS_LAB_DB (run ledger URL), "
        "RIS_LAB_LOG_LEVEL."
    )

    # Formats
    SCENE_FORMAT = (
        "Scene file: UTF-8 text, '#' starts a comment, sections open with [name].\n"
        "[frequency] f_center half_band n_points | [bs] x y | [ue_grid] x0 y0 x1 y1 nx ny | "
        "[wall] x0 y0 x1 y1 lines | [ris] x y lines (order = bit index) | "
        "[sense] i j ... | [object] f_res chi gamma_l, then 'phase t' and 'offset dx dy' lines | "
        "[trajectory] x y vertex lines (closed polyline)."
    )
    DATASET_FORMAT = (
        "Dataset file: JSON lines. Line 1 is the header (version, F, S_RIS, N_RIS, K, n_obj, seed, "
        "scene_hash, configs, grid, scene_text, manifest). Each further line is one record with "
        "h_ue, h_sense, p, k_index, k_onehot, u; complex values are [re, im] pairs."
    )
    CHECKPOINT_FORMAT = (
        "Checkpoint file: one JSON header line (magic, kind, dims, param_shapes, config, stats, seed, "
        "dataset_hash, val_loss, best_epoch, manifest) followed by every parameter as little-endian "
        "float64 in header order; gates inside a cell run i, f, g, o."
    )
    CODEBOOK_FORMAT = (
        "Codebook file: JSON object with resolution, n_obj, n_ris, scene_hash, checkpoint_hash, "
        "entries ('b1,b2,..' -> k_index, bits, expected_mse) and fingerprints "
        "(bucket, probe configuration, stacked [Re, Im] of h_sense)."
    )
    EVAL_FORMAT = (
        "Evaluation directory: series.csv (test_index,se_random,se_optimized), summary.csv "
        "(n_ris,k,baseline_mse,optimized_mse,sigma,pct_error_reduction), table.txt and manifest.json."
    )

    # Command help
    SCENE_INIT = "Write the default enclosure template.\n\n" + SCENE_FORMAT
    GENERATE = "Simulate the supervised dataset for K random configurations.\n\n" + DATASET_FORMAT
    TRAIN = "Train the BiLSTM localizer; keeps the checkpoint with the lowest validation loss.\n\n" + CHECKPOINT_FORMAT
    TRAIN_BASELINE = "Train the feed-forward random-configuration baseline on the same splits.\n\n" + CHECKPOINT_FORMAT
    GRID = "Grid search over regularization and learning rate; writes a ranked CSV table."
    CALIBRATE = "Build the SO-state -> configuration codebook with sensing fingerprints.\n\n" + CODEBOOK_FORMAT
    EVALUATE = "Replay test instances through the baseline and the closed loop.\n\n" + EVAL_FORMAT
    REPORT = "Aggregate evaluation directories into one summary table.\n\n" + EVAL_FORMAT
    RUNS = "List recorded runs from the ledger, most recent first."
    SWEEP = (
        "Run scene-init, generate, train, train-baseline, calibrate and evaluate for every "
        "(N_RIS, K) pair, then report all points in one table.\n\n"
        "Layout: <out>/nris<N>.scene, <out>/nris<N>_k<K>/{data.jsonl,model.ckpt,base.ckpt,codebook.json,eval/}, "
        "<out>/report/{summary.csv,table.txt}."
    )

    # Flags
    OUT = "Output path."
    FORCE = "Overwrite an existing file."
    N_RIS = "Number of RIS elements of the default template."
    SCENE = "Scene template file."
    CONFIGS = "Number of distinct RIS configurations K."
    SO_SAMPLES = "SO states drawn per configuration."
    SEED = "Master seed."
    SNR_DB = "Optional additive noise SNR in dB (omit for noiseless)."
    WORKERS = "Worker threads (default RIS_LAB_WORKERS or all cores); never changes results."
    DATASET = "Dataset file."
    EPOCHS = "Training epochs."
    BATCH = "Mini-batch size."
    LR = "Adam learning rate."
    ALPHA = "L2 regularization coefficient."
    NO_CLIP = "Disable global-norm gradient clipping."
    ALPHAS = "Comma-separated alpha values."
    LRS = "Comma-separated learning rates."
    CHECKPOINT = "Localizer checkpoint."
    RESOLUTION = "Buckets per scattering-object path parameter."
    CODEBOOK = "Codebook file."
    BASELINE = "Baseline checkpoint."
    INSTANCES = "Number of test instances to replay."
    EVAL_DIR = "Evaluation output directory (repeatable)."
    LIMIT = "Rows to show."
    SWEEP_OUT = "Sweep output directory."
    N_RIS_LIST = "Comma-separated RIS element counts."
    CONFIGS_LIST = "Comma-separated configuration counts K."

    @staticmethod
    def exists(path) -> str:
        return f"{path} exists (use --force to overwrite)"

    @staticmethod
    def generated(n_records: int, path) -> str:
        return f"wrote {n_records} records to {path}"

    @staticmethod
    def trained(kind: str, best_epoch: int, val_loss: float, path, val_accuracy=math.nan, test_accuracy=math.nan) -> str:
        def pct(a: float) -> str:
            return f"{100.0 * a:.1f}%" if math.isfinite(a) else "n/a"

        return (
            f"{kind}: best epoch {best_epoch}, val loss {val_loss:.6g}, "
            f"class accuracy val {pct(val_accuracy)} test {pct(test_accuracy)} -> {path}"
        )

    @staticmethod
    def swept(n_points: int, path) -> str:
        return f"sweep of {n_points} point(s) -> {path}"

    @staticmethod
    def calibrated(n_entries: int, n_probes: int, path) -> str:
        return f"codebook with {n_entries} buckets and {n_probes} probe configuration(s) -> {path}"
