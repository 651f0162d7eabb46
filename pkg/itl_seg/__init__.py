import os

__all__ = ["ITL_DIR", "RUNS_DIR", "__version__"]

__version__ = "0.1.0"

ITL_DIR = os.path.join(os.path.expanduser("~"), ".itl_seg")

# Default output root for runs; the environment variable wins over the home directory
RUNS_DIR = os.environ.get("ITL_SEG_OUTPUT_ROOT", os.path.join(ITL_DIR, "runs"))
