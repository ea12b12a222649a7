# config.py
import os

BASE_DIR   = os.path.dirname(os.path.abspath(__file__))
OUTPUT_DIR = os.getenv("CATTN_OUTPUT_DIR", os.path.join(BASE_DIR, "runs"))

VERSION = "0.3.0"


class Config:
    # --- data ---
    DATA_DIR         = os.getenv("CATTN_DATA_DIR", os.path.join(BASE_DIR, "data", "cifar-10-batches-bin"))
    NORM_STATS_FILE  = "norm_stats.json"
    AUG_PAD          = 4
    AUG_FLIP_PROB    = 0.5

    # --- training recipe ---
    EPOCHS           = 100
    BASE_LR          = 0.1
    MOMENTUM         = 0.9
    WEIGHT_DECAY     = 5e-4
    BATCH_SIZE       = 128
    SEED             = 42
    NUM_CLASSES      = 10

    # --- attention hyperparameters ---
    SE_REDUCTION     = 16
    ECA_GAMMA        = 2
    ECA_B            = 1
    LCA_GROUPS       = 4

    # --- numerics ---
    BN_EPS           = 1e-5
    BN_MOMENTUM      = 0.1
    DTYPE            = os.getenv("CATTN_DTYPE", "float64")

    # --- benchmark protocol ---
    BENCH_BATCH      = 1
    BENCH_WARMUP     = 10
    BENCH_ITERS      = 100
    THROUGHPUT_BUDGET_S = 2.0
    HOST_NOTE        = os.getenv("CATTN_HOST_NOTE", "")

    LOG_LEVEL        = os.getenv("LOG_LEVEL", "INFO")
