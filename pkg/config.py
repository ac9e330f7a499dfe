"""
Runtime settings for sweepcv.

Every value can be overridden through the environment, e.g.
SWEEPCV_WORKERS=4 python cli.py simulate --config exp.json --out mse.csv
"""
import os

# -------------------
# Files
# -------------------
RESULTS_DIR = os.environ.get("SWEEPCV_RESULTS_DIR", "results")

# -------------------
# Numerics
# -------------------
# dense oracle cap (K·|S|² doubles)
MAX_STATES = int(os.environ.get("SWEEPCV_MAX_STATES", 4096))
MAX_JOINT_CELLS = int(os.environ.get("SWEEPCV_MAX_JOINT_CELLS", 4096))
MAX_ISING_ENUMERATION = 65536
PINV_TOL = float(os.environ.get("SWEEPCV_PINV_TOL", 1e-10))
STATIONARITY_TOL = 1e-8
ROW_SUM_TOL = 1e-12
# idempotence, reversibility and data-augmentation checks
IDENTITY_TOL = 1e-12
POISSON_RESIDUAL_TOL = 1e-10
PSD_TOL = 1e-9

# -------------------
# Experiments
# -------------------
DEFAULT_WORKERS = int(os.environ.get("SWEEPCV_WORKERS", os.cpu_count() or 1))
MAX_KERNEL_APPLICATIONS = float(os.environ.get("SWEEPCV_MAX_KERNEL_APPLICATIONS", 1e9))
LONG_RUN_CYCLES = int(os.environ.get("SWEEPCV_LONG_RUN_CYCLES", 100000))
DEFAULT_BATCH_SWEEPS = 5
CSV_FLOAT_FORMAT = "%.17g"

LOG_LEVEL = os.environ.get("SWEEPCV_LOG_LEVEL", "INFO")
PORT = int(os.environ.get("PORT", 5000))
