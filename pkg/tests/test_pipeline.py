# tests/test_pipeline.py
"""
Tests for run manifests, the closed-form and variation reports, and the full
solve pipeline.
"""

import json
import logging
import sys
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

import pytest

from capillary_bernoulli.config import ARTIFACT_VERSION
from capillary_bernoulli.exceptions import ConfigurationError
from capillary_bernoulli.pipeline import (
    RUN_FILES,
    RunManifest,
    default_radii,
    run_exact,
    run_solve,
    run_varstab,
    write_manifest,
)
from capillary_bernoulli.storage import load_csv, load_json

# Setup logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


class TestManifest:
    """Test manifest checksums."""

    @pytest.fixture
    def run_dir(self, tmp_path):
        (tmp_path / "u.csv").write_text("u\n", encoding="utf-8")
        (tmp_path / "result.json").write_text("{}\n", encoding="utf-8")
        return tmp_path

    def test_written_files_only(self, run_dir):
        """Test that only existing run files are listed."""
        manifest = write_manifest(run_dir, "abc", 3, 1, "2024-01-01T00:00:00+00:00")
        assert set(manifest.files) == {"u.csv", "result.json"}
        assert manifest.version == ARTIFACT_VERSION
        assert manifest.verify(run_dir) == []
        assert RunManifest.load(run_dir).as_dict() == manifest.as_dict()

    def test_detects_changes(self, run_dir):
        """Test the missing-file and checksum messages."""
        manifest = write_manifest(run_dir, "abc", 3, 1, "2024-01-01T00:00:00+00:00")
        (run_dir / "u.csv").write_text("changed\n", encoding="utf-8")
        (run_dir / "result.json").unlink()
        problems = manifest.verify(run_dir)
        expected = ["checksum mismatch for u.csv", "missing result.json"]
        assert sorted(problems) == expected


class TestRadii:
    """Test the dyadic default radii."""

    def test_default_radii(self):
        """Test the radius floor of 8h."""
        assert default_radii(1 / 32, 0.25) == [0.25]
        assert default_radii(1 / 64, 0.5) == [0.5, 0.25, 0.125]
        assert default_radii(1 / 16, 0.25) == []


class TestExactReport:
    """Test the closed-form report."""

    def test_outputs(self, tmp_path):
        """Test angles.csv, wedge.csv and exact.json."""
        report = run_exact(tmp_path, ms=(-0.5, 0.0, 0.5), h=1 / 32)
        assert set(report) == {"angles", "wedge", "degenerate"}
        header, rows = load_csv(tmp_path / "angles.csv")
        assert header == ["q", "m", "theta", "theta_deg"]
        assert [float(r[3]) for r in rows] == pytest.approx([60.0, 90.0, 120.0])
        _, wedge_rows = load_csv(tmp_path / "wedge.csv")
        assert len(wedge_rows) == 11
        assert len(report["wedge"]) == 1
        assert report["wedge"][0]["second_variation"] < 0.0
        assert report["degenerate"]["gap"] < 0.0
        assert load_json(tmp_path / "exact.json")["angles"][1]["m"] == 0.0


class TestVariationReport:
    """Test the variation report on a half-plane state."""

    def test_outputs(self, tmp_path):
        """Test taylor_check.csv, variation_report.json and robin.csv."""
        report = run_varstab(tmp_path, h=1 / 16, families=["tangential"])
        entry = report["families"]["tangential"]
        assert {"expansion", "taylor", "first_variation", "second_variation"} <= set(
            entry
        )
        assert "wedge" not in report
        header, rows = load_csv(tmp_path / "taylor_check.csv")
        assert header == ["family", "t", "remainder1", "remainder2"]
        assert rows and all(r[0] == "tangential" for r in rows)
        header, rows = load_csv(tmp_path / "robin.csv")
        assert len(rows) == 4
        assert rows[1][-1] == "1"
        assert rows[2][-1] == "0"
        data = json.loads((tmp_path / "variation_report.json").read_text())
        assert data["h"] == 1 / 16


@pytest.mark.slow
@pytest.mark.integration
class TestRunSolve:
    """Test the full solve pipeline on the minimal configuration."""

    def test_minimal_run(self, config_dir, tmp_path):
        """Test that a run writes every artifact and a consistent manifest."""
        run_dir = run_solve(config_dir / "minimal.yml", tmp_path / "minimal")
        for name in ["config.copy", "u.csv", "energy_trace.csv", "result.json"]:
            assert (run_dir / name).exists(), name
        for name in ["fb.csv", "angles.csv", "audit.json", "weiss.json"]:
            assert (run_dir / name).exists(), name
        manifest = RunManifest.load(run_dir)
        assert set(manifest.files) <= set(RUN_FILES)
        assert manifest.verify(run_dir) == []
        result = load_json(run_dir / "result.json")
        assert result["name"] == "minimal"
        assert result["config_hash"] == manifest.config_hash
        assert "converged" in result
        logger.info(f"✓ Run complete: energy {result['energy']:.6f}")


class TestRunValidation:
    """Test that solve validates before writing."""

    def test_invalid_config(self, tmp_path):
        """Test that validation fails before anything is written."""
        path = tmp_path / "bad.yml"
        path.write_text("grid:\n  h: 0.3\n", encoding="utf-8")
        with pytest.raises(ConfigurationError):
            run_solve(path, tmp_path / "bad")
        assert not (tmp_path / "bad").exists()
