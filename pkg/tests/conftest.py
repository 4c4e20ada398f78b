# tests/conftest.py
"""Shared fixtures: small grids, half-plane fields and output directories."""

import sys
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

import pytest

from capillary_bernoulli.exact import HalfPlaneParams, half_plane_field
from capillary_bernoulli.grid import build_grid

CONFIG_DIR = Path(__file__).parent.parent / "configs"


@pytest.fixture
def config_dir() -> Path:
    return CONFIG_DIR


@pytest.fixture
def grid2d():
    """[-1,1] x [0,1] at h = 1/16."""
    return build_grid(2, [(-1.0, 1.0), (0.0, 1.0)], 1 / 16)


@pytest.fixture
def fine_grid2d():
    return build_grid(2, [(-1.0, 1.0), (0.0, 1.0)], 1 / 64)


@pytest.fixture
def half_plane():
    """Factory for the clipped half-plane solution on [-1,1] x [0,1]."""

    def make(q: float = 1.0, m: float = 0.0, h: float = 1 / 32):
        grid = build_grid(2, [(-1.0, 1.0), (0.0, 1.0)], h)
        return half_plane_field(grid, HalfPlaneParams(q, m))

    return make


@pytest.fixture(autouse=True)
def output_root(tmp_path, monkeypatch):
    """Keep every default run directory inside the test's tmp_path."""
    root = tmp_path / "runs"
    monkeypatch.setattr("capillary_bernoulli.config.OUTPUT_ROOT", root)
    return root
