# tests/test_sweep.py
"""
Tests for sweep cells and the aggregate sweep table.
"""

import logging
import sys
from concurrent.futures import Future
from concurrent.futures.process import BrokenProcessPool
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

import pytest

from capillary_bernoulli.schema import load_yaml, parse_sweep
from capillary_bernoulli.storage import load_csv
from capillary_bernoulli.sweep import SWEEP_COLUMNS, run_cell, run_sweep

# Setup logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


class _DeadPool:
    """Executor whose worker processes all die before returning."""

    def __init__(self, max_workers: int) -> None:
        self.max_workers = max_workers

    def __enter__(self) -> "_DeadPool":
        return self

    def __exit__(self, *exc) -> bool:
        return False

    def submit(self, fn, *args) -> Future:
        future: Future = Future()
        future.set_exception(BrokenProcessPool("worker process terminated"))
        return future


class TestCells:
    """Test the per-cell worker."""

    def test_failed_cell_becomes_error_row(self, tmp_path):
        """Test that a crashing cell is reported, not raised."""
        row = run_cell(7, "broken", {"grid": {"h": 0.3}}, str(tmp_path / "c"), 1)
        assert row["cell"] == 7
        assert row["status"] == "error"
        assert row["error"].startswith("ConfigurationError")


class TestWorkerLoss:
    """Test sweeps whose worker processes die."""

    def test_dead_workers_become_error_rows(self, config_dir, tmp_path, monkeypatch):
        """Test that sweep.csv is still written when the pool breaks."""
        monkeypatch.setattr("capillary_bernoulli.sweep.ProcessPoolExecutor", _DeadPool)
        base = load_yaml(config_dir / "minimal.yml")
        spec = parse_sweep({"name": "dead", "base": base, "vary": {"seed": [0, 1]}})
        out = run_sweep(spec, tmp_path / "dead", max_workers=2)
        header, rows = load_csv(out / "sweep.csv")
        assert [r[header.index("cell")] for r in rows] == ["0", "1"]
        assert {r[header.index("status")] for r in rows} == {"error"}
        for r in rows:
            assert r[header.index("error")].startswith("BrokenProcessPool")
        logger.info(f"✓ {len(rows)} lost cells recorded")


@pytest.mark.slow
@pytest.mark.integration
class TestRunSweep:
    """Test a small sequential sweep over the minimal configuration."""

    def test_sweep_table(self, config_dir, tmp_path):
        """Test one sweep.csv row per cell, ordered by cell index."""
        base = load_yaml(config_dir / "minimal.yml")
        spec = parse_sweep({"name": "seeds", "base": base, "vary": {"seed": [0, 1]}})
        out = run_sweep(spec, tmp_path / "seeds", max_workers=1)
        header, rows = load_csv(out / "sweep.csv")
        assert header == ["seed"] + list(SWEEP_COLUMNS)
        assert [r[header.index("cell")] for r in rows] == ["0", "1"]
        assert [r[0] for r in rows] == ["0", "1"]
        for name in ("seeds_0000", "seeds_0001"):
            assert (out / name / "manifest.json").exists()
        logger.info(f"✓ Sweep statuses {[r[header.index('status')] for r in rows]}")
