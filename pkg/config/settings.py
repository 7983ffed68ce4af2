import os
from dotenv import load_dotenv

load_dotenv()

DEVICE = os.getenv("SFDA_DEVICE", "cpu")
OUTPUT_DIR = os.getenv("SFDA_OUTPUT_DIR", "runs")

# DataLoader workers for slice batches (0 = load in the training thread)
NUM_WORKERS = int(os.getenv("SFDA_NUM_WORKERS", "0"))

# Write a step row to the training log every N steps
LOG_EVERY = int(os.getenv("SFDA_LOG_EVERY", "1"))

# Long synthetic acceptance runs are opt-in
RUN_SLOW_TESTS = os.getenv("SFDA_RUN_SLOW_TESTS", "0").lower() in ("1", "true", "yes")

# Class layout of the abdominal task: background + four organs
CLASS_NAMES = ["background", "liver", "right kidney", "left kidney", "spleen"]
NUM_CLASSES = len(CLASS_NAMES)
