# Global Project Configuration
import os

from dotenv import load_dotenv

load_dotenv()

# Threading (1 keeps every command bit-reproducible)
NUM_THREADS = int(os.getenv("PBAN_NUM_THREADS", "1"))
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, str(NUM_THREADS))

# Logging
LOG_LEVEL = os.getenv("PBAN_LOG_LEVEL", "INFO").upper()
LOG_FILE = os.getenv("PBAN_LOG_FILE") or None

# Reproducibility
SEED = 0

# Patching
PATCH_SIZE = 32  # non-overlapping patches, remainder discarded

# SGD Parameters
LEARNING_RATE = 0.01
MOMENTUM = 0.9
WEIGHT_DECAY = 1e-6
EPOCHS = 100
BATCH_SIZE = 32

# Cross Validation
FOLDS = 5
TEST_FRACTION = 0.0  # 0.2 reproduces the 80/20 train/test protocol

# Inference
EVAL_BATCH_SIZE = 64

# Output naming (relative to the checkpoint path)
REPORT_SUFFIX = ".report.json"
LOSS_PLOT_SUFFIX = ".loss.png"
