import os
from pathlib import Path

from dotenv import load_dotenv

PACKAGE_DIR = Path(__file__).parent
PROJECT_PATH = PACKAGE_DIR.parent

# Load environment variables from a .env file in the project root
load_dotenv(PROJECT_PATH / ".env")

PRECISION = os.getenv("MODIP_PRECISION", "f64")
if PRECISION not in ("f32", "f64"):  # pragma: no cover
    raise ValueError(f"MODIP_PRECISION must be f32 or f64, got {PRECISION!r}")
THREADS = max(1, int(os.getenv("MODIP_THREADS", "1")))

LOG_LEVEL = os.getenv("MODIP_LOG_LEVEL", "INFO").upper()
LOG_EVERY = max(1, int(os.getenv("MODIP_LOG_EVERY", "10")))

KERNEL_CACHE_SIZE = int(os.getenv("MODIP_KERNEL_CACHE", "8"))
