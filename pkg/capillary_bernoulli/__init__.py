# capillary_bernoulli/__init__.py
"""
Capillary Bernoulli

Solver and verifier for the one-phase Bernoulli free boundary problem in a
half-space whose wall carries a capillary term:
  1. Field core (grids, coefficient families, frames, resampling)
  2. Energies and the boundary-adjusted Weiss energy
  3. Closed-form catalogue (half-plane, wedge, degenerate solutions)
  4. Annealed projected-descent minimizer
  5. Free-boundary extraction, contact angles and audits
  6. Shape derivatives, variations and Robin stability tools

Main entry point: run_solve(config_path) -> run directory
"""

import logging

# Setup logging
logger = logging.getLogger(__name__)

# Package version
__version__ = "0.1.0"

from .coefficients import CoeffField, make_coefficients  # noqa: E402
from .energy import JParams, energy_F, energy_J, weiss  # noqa: E402
from .exact import HalfPlaneParams, contact_angle, half_plane_field  # noqa: E402
from .exceptions import (  # noqa: E402
    CapBernError,
    ConfigurationError,
    DomainError,
    MissingArtifactError,
)
from .fbdiag import extract_fb, viscosity_audit  # noqa: E402
from .fields import ScalarField  # noqa: E402
from .grid import Grid, build_grid  # noqa: E402
from .pipeline import analyze_run, run_exact, run_solve, run_varstab  # noqa: E402
from .schema import load_run_config, load_sweep  # noqa: E402
from .solver import SolveConfig, minimize_F  # noqa: E402
from .sweep import run_sweep  # noqa: E402

# Public API
__all__ = [
    "__version__",
    "Grid",
    "build_grid",
    "ScalarField",
    "CoeffField",
    "make_coefficients",
    "JParams",
    "energy_F",
    "energy_J",
    "weiss",
    "HalfPlaneParams",
    "contact_angle",
    "half_plane_field",
    "SolveConfig",
    "minimize_F",
    "extract_fb",
    "viscosity_audit",
    "load_run_config",
    "load_sweep",
    "run_solve",
    "analyze_run",
    "run_exact",
    "run_varstab",
    "run_sweep",
    "CapBernError",
    "ConfigurationError",
    "DomainError",
    "MissingArtifactError",
]
