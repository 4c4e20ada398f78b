# tests/test_plotting.py
"""
Tests for SVG figures of runs and sweeps.
"""

import logging
import sys
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

import pytest

from capillary_bernoulli.exceptions import MissingArtifactError
from capillary_bernoulli.fbdiag import extract_fb
from capillary_bernoulli.plotting import plot
from capillary_bernoulli.storage import save_csv, save_field, save_json

# Setup logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


@pytest.fixture
def run_dir(tmp_path, half_plane):
    """Run directory with a field, its free boundary and no Weiss report."""
    u = half_plane(1.0, 0.0, 1 / 16)
    fb = extract_fb(u)
    save_field(tmp_path / "u.csv", u)
    save_csv(tmp_path / "fb.csv", ["polyline", "vertex", "x", "y"], fb.polyline_rows())
    save_csv(
        tmp_path / "angles.csv",
        ["contact", "x", "y", "theta", "theta_deg", "predicted_deg", "wet_direction"],
        [row + [90.0, wet] for row, wet in zip(fb.angle_rows(), fb.wet_direction)],
    )
    save_json(tmp_path / "weiss.json", {"available": False, "reason": "none"})
    return tmp_path


class TestRunFigures:
    """Test run figures."""

    def test_field_figure(self, run_dir):
        """Test that the heatmap is written and Weiss is skipped."""
        paths = plot(run_dir)
        assert paths == [run_dir / "field.svg"]
        assert paths[0].read_text(encoding="utf-8").lstrip().startswith("<?xml")

    def test_deterministic(self, run_dir):
        """Test byte-identical output for identical artifacts."""
        first = plot(run_dir)[0].read_bytes()
        second = plot(run_dir)[0].read_bytes()
        assert first == second

    def test_missing_analysis(self, run_dir):
        """Test that a field without analysis artifacts is refused."""
        (run_dir / "fb.csv").unlink()
        with pytest.raises(MissingArtifactError):
            plot(run_dir)

    def test_empty_target(self, tmp_path):
        """Test that a directory without artifacts is refused."""
        with pytest.raises(MissingArtifactError):
            plot(tmp_path)


class TestSweepFigures:
    """Test sweep figures."""

    def test_angle_sweep(self, tmp_path):
        """Test the angle figure of a sweep over m."""
        save_csv(
            tmp_path / "sweep.csv",
            [
                "dirichlet.params.m,coefficients.params.beta",
                "status",
                "measured_deg",
                "predicted_deg",
            ],
            [
                [-0.5, "ok", 61.0, 60.0],
                [0.0, "ok", 90.5, 90.0],
                [0.5, "error", "", 120.0],
            ],
        )
        assert plot(tmp_path) == [tmp_path / "angles.svg"]

    def test_refinement(self, tmp_path):
        """Test the refinement figure of a sweep over h."""
        save_csv(
            tmp_path / "sweep.csv",
            ["grid.h", "status", "angle_error_deg", "half_plane_error"],
            [[0.0625, "ok", 2.0, 0.1], [0.03125, "ok", 1.0, 0.05]],
        )
        assert plot(tmp_path) == [tmp_path / "refinement.svg"]
