# capillary_bernoulli/config.py
"""
Central configuration for the capillary Bernoulli toolkit.

This file contains output paths, numerical defaults and the constants of the
almost-minimality inequality used throughout the package.
"""

import os
from pathlib import Path
from typing import Tuple

# ==============================================================================
# Directory Structure
# ==============================================================================

# Base directory (repository root)
BASE_DIR = Path(__file__).resolve().parent.parent

# Runs and sweeps live under one output root
OUTPUT_ROOT = Path(os.getenv("CAPBERN_OUTPUT_ROOT", str(BASE_DIR / "runs")))
CONFIGS_DIR = BASE_DIR / "configs"

# Artifact version written to every manifest
ARTIFACT_VERSION = "1"

# ==============================================================================
# Execution Settings
# ==============================================================================
THREADS = int(os.getenv("CAPBERN_THREADS", "1"))
DEFAULT_SEED = int(os.getenv("CAPBERN_SEED", "0"))

# ==============================================================================
# Numerical Defaults
# ==============================================================================

# Positivity threshold: tau = TAU_FACTOR * max(1, ||u||_inf)
TAU_FACTOR = float(os.getenv("CAPBERN_TAU_FACTOR", "1e-10"))

# Anneal schedule for the regularized indicator
EPS0 = 0.1
EPS_FACTOR = 0.5
INNER_TOL = 1e-10
PATIENCE = 20
MAX_INNER = int(os.getenv("CAPBERN_MAX_INNER", "2000"))
RESTARTS = 3

# Linear solves
CG_RTOL = 1e-12

# Region coverage sub-sampling (per cell axis, per wall face axis)
CELL_SUBSAMPLES = 8
FACE_SUBSAMPLES = 32

# Contact angle fit band, in units of h
_band = os.getenv("CAPBERN_THETA_BAND", "2,10").split(",")
THETA_BAND: Tuple[float, float] = (float(_band[0]), float(_band[1]))

# Weiss sphere samples per unit of pi*r/h
WEISS_SAMPLES_FACTOR = 4

# ==============================================================================
# Almost-minimality constants (C_A, C_Q, C_beta)
# ==============================================================================
CONST_CA = float(os.getenv("CAPBERN_CONST_CA", "1.0"))
CONST_CQ = float(os.getenv("CAPBERN_CONST_CQ", "1.0"))
CONST_CBETA = float(os.getenv("CAPBERN_CONST_CBETA", "1.0"))

# ==============================================================================
# Logging Configuration
# ==============================================================================
LOG_LEVEL = os.getenv("CAPBERN_LOG_LEVEL", "INFO")
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# ==============================================================================
# File Naming Conventions
# ==============================================================================


def positivity_threshold(sup_norm: float) -> float:
    """Threshold tau used for the indicator 1{u > 0}."""
    return TAU_FACTOR * max(1.0, float(sup_norm))


def get_run_dir(name: str) -> Path:
    """Get path to a run directory."""
    return OUTPUT_ROOT / name


def get_sweep_dir(name: str) -> Path:
    """Get path to a sweep directory."""
    return OUTPUT_ROOT / "sweeps" / name


def get_config_copy_path(run_dir: Path) -> Path:
    """Get path to the copied run configuration."""
    return run_dir / "config.copy"


def get_u_path(run_dir: Path) -> Path:
    """Get path to the field dump of a run."""
    return run_dir / "u.csv"


def get_energy_trace_path(run_dir: Path) -> Path:
    """Get path to the anneal energy trace."""
    return run_dir / "energy_trace.csv"


def get_result_path(run_dir: Path) -> Path:
    """Get path to the solve result summary."""
    return run_dir / "result.json"


def get_fb_path(run_dir: Path) -> Path:
    """Get path to the free-boundary polyline."""
    return run_dir / "fb.csv"


def get_angles_path(run_dir: Path) -> Path:
    """Get path to the contact angle table."""
    return run_dir / "angles.csv"


def get_audit_path(run_dir: Path) -> Path:
    """Get path to the audit report."""
    return run_dir / "audit.json"


def get_weiss_csv_path(run_dir: Path) -> Path:
    """Get path to the Weiss energy table."""
    return run_dir / "weiss.csv"


def get_weiss_json_path(run_dir: Path) -> Path:
    """Get path to the Weiss summary."""
    return run_dir / "weiss.json"


def get_manifest_path(run_dir: Path) -> Path:
    """Get path to the run manifest."""
    return run_dir / "manifest.json"


# ==============================================================================
# Export commonly used settings
# ==============================================================================
__all__ = [
    "BASE_DIR",
    "OUTPUT_ROOT",
    "CONFIGS_DIR",
    "ARTIFACT_VERSION",
    "THREADS",
    "DEFAULT_SEED",
    "TAU_FACTOR",
    "EPS0",
    "EPS_FACTOR",
    "INNER_TOL",
    "PATIENCE",
    "MAX_INNER",
    "RESTARTS",
    "CG_RTOL",
    "CELL_SUBSAMPLES",
    "FACE_SUBSAMPLES",
    "THETA_BAND",
    "WEISS_SAMPLES_FACTOR",
    "CONST_CA",
    "CONST_CQ",
    "CONST_CBETA",
    "LOG_LEVEL",
    "LOG_FORMAT",
    "positivity_threshold",
    "get_run_dir",
    "get_sweep_dir",
    "get_config_copy_path",
    "get_u_path",
    "get_energy_trace_path",
    "get_result_path",
    "get_fb_path",
    "get_angles_path",
    "get_audit_path",
    "get_weiss_csv_path",
    "get_weiss_json_path",
    "get_manifest_path",
]
