import logging
import os
import sys

from dotenv import load_dotenv

load_dotenv()

# Global seed; every sub-task seed is derived from it
SEED = int(os.getenv("CFFE_SEED", "20240101"))

# Forest defaults
TREES = int(os.getenv("CFFE_TREES", "500"))
MIN_LEAF = int(os.getenv("CFFE_MIN_LEAF", "30"))
MAX_DEPTH = int(os.getenv("CFFE_MAX_DEPTH", "5"))

# Inference
BOOTSTRAP_REPS = int(os.getenv("CFFE_BOOTSTRAP_REPS", "200"))
K_MIN = int(os.getenv("CFFE_K_MIN", "-10"))
K_MAX = int(os.getenv("CFFE_K_MAX", "20"))

# Execution
N_JOBS = int(os.getenv("CFFE_N_JOBS", "1"))
OUT_DIR = os.getenv("CFFE_OUT_DIR", "./out")

# DSGE truncation horizon in quarters
DSGE_HORIZON = int(os.getenv("CFFE_DSGE_HORIZON", "300"))

LOG_LEVEL = os.getenv("CFFE_LOG_LEVEL", "INFO").upper()

_PREFIXES = {
    "cffe.panel.panel_core": "PANEL",
    "cffe.panel.panel_csv": "CSV",
    "cffe.panel.synth_dgp": "DGP",
    "cffe.estimators.cffe_forest": "FOREST",
    "cffe.estimators.classic_estimators": "CLASSIC",
    "cffe.analysis.inference_suite": "BOOT",
    "cffe.analysis.effects_aggregation": "ATT",
    "cffe.analysis.robustness": "ROBUST",
    "cffe.dsge.dsge_lab": "DSGE",
    "cffe.reporting": "REPORT",
    "cffe.cffe_cli": "CFFE",
}


class _PrefixFormatter(logging.Formatter):
    def format(self, record):
        prefix = _PREFIXES.get(record.name, record.name.rsplit(".", 1)[-1].upper())
        return f"[{prefix}] {record.getMessage()}"


_configured = False


def configure_logging(level=None):
    """Install the bracketed-prefix handler on the package logger (idempotent)."""
    global _configured
    root = logging.getLogger("cffe")
    root.setLevel(level or LOG_LEVEL)
    if _configured:
        return root
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_PrefixFormatter())
    root.addHandler(handler)
    root.propagate = False
    _configured = True
    return root
