# rislab/labels.py

TOOL_VERSION = "0.1.0"

# Dipole roles (scene tags)
ROLE_BS = "BS"
ROLE_UE = "UE"
ROLE_RIS = "RIS"
ROLE_SENSE = "SENSE"  # subset of the RIS array
ROLE_WALL = "WALL"
ROLE_OBJECT = "OBJECT"
ROLES = (ROLE_BS, ROLE_UE, ROLE_RIS, ROLE_SENSE, ROLE_WALL, ROLE_OBJECT)

# Dipole parameters (f_res, chi, gamma_l), arbitrary units
TRANSCEIVER_PROPS = (1.0, 0.5, 0.0)
ENVIRONMENT_PROPS = (10.0, 50.0, 1.0e4)
RIS_CHI = 0.2
RIS_GAMMA_L = 0.03

# bit -> f_res
RIS_STATE_MAP = {0: 1.0, 1: 5.0}

FENCE_SPACING = 0.25  # lambda / 4
COLLISION_TOL = 1e-6
COND_LIMIT = 1e12

# Frequency grid default: F = 64 over [0.9, 1.1]
DEFAULT_F_CENTER = 1.0
DEFAULT_HALF_BAND = 0.1
DEFAULT_N_POINTS = 64

DEFAULT_RESOLUTION = 8
STD_FLOOR = 1e-8
PROB_FLOOR = 1e-12

# Exit codes
EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_PROVENANCE = 4

# File formats
DATASET_VERSION = 1
CHECKPOINT_VERSION = 1
CODEBOOK_VERSION = 1
CHECKPOINT_MAGIC = "RISLAB-CKPT"

MODEL_BILSTM = "bilstm"
MODEL_BASELINE = "baseline"

# CSV headers
SERIES_HEADER = ("test_index", "se_random", "se_optimized")
SUMMARY_HEADER = ("n_ris", "k", "baseline_mse", "optimized_mse", "sigma", "pct_error_reduction")
HISTORY_HEADER = ("epoch", "train_loss", "val_loss", "val_coord", "val_class", "val_reg", "val_accuracy")
GRID_HEADER = ("rank", "grid_index", "alpha", "lr", "best_val_loss", "final_train_loss", "best_epoch")

SERIES_FILE = "series.csv"
SUMMARY_FILE = "summary.csv"
TABLE_FILE = "table.txt"
MANIFEST_FILE = "manifest.json"
