# capillary_bernoulli/sweep.py
"""
Parameter sweeps over a base run configuration.

Every cell of the Cartesian product is an ordinary run (solve, analyze,
manifest) in its own subdirectory. Cells run in a process pool; a crashed cell
becomes a row with status "error" and the sweep continues. sweep.csv is
written once all cells have finished, sorted by cell index.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from .config import THREADS, get_sweep_dir
from .exceptions import ConfigurationError
from .pipeline import run_solve
from .schema import SweepCell, SweepSpec, load_sweep, parse_run_config
from .storage import load_csv, load_json, save_csv

# Setup logging
logger = logging.getLogger(__name__)

SWEEP_COLUMNS = (
    "cell",
    "name",
    "status",
    "h",
    "converged",
    "energy",
    "measured_deg",
    "predicted_deg",
    "angle_error_deg",
    "weiss_drift",
    "audit_verdict",
    "viscosity",
    "nondegeneracy",
    "half_plane_error",
    "error",
)


def _first_angle(run_dir: Path) -> Dict[str, float]:
    header, rows = load_csv(run_dir / "angles.csv")
    if not rows or "theta_deg" not in header:
        return {"measured_deg": math.nan, "predicted_deg": math.nan}
    row = dict(zip(header, rows[0]))
    return {
        "measured_deg": float(row["theta_deg"]),
        "predicted_deg": float(row["predicted_deg"]),
    }


def _combined(checks: List[Dict[str, Any]], names: List[str]) -> str:
    verdicts = {c["verdict"] for c in checks if c["name"].split("[")[0] in names}
    for verdict in ("FAIL", "INCONCLUSIVE", "PASS"):
        if verdict in verdicts:
            return verdict
    return ""


def summarize_run(run_dir: Path) -> Dict[str, Any]:
    """One sweep row from the artifacts of a finished run."""
    run_dir = Path(run_dir)
    result = load_json(run_dir / "result.json")
    audit = load_json(run_dir / "audit.json")
    weiss = load_json(run_dir / "weiss.json")
    checks = audit.get("checks", [])
    row: Dict[str, Any] = {
        "converged": result["converged"],
        "energy": result["energy"],
        "weiss_drift": weiss.get("max_relative_drift", math.nan),
        "audit_verdict": audit["verdict"],
        "viscosity": _combined(checks, ["interior", "wall_neumann", "bernoulli"]),
        "nondegeneracy": _combined(checks, ["nondegeneracy", "density"]),
        "half_plane_error": math.nan,
    }
    for check in checks:
        if check["name"] == "half_plane_recovery":
            row["half_plane_error"] = check["value"]
    row.update(_first_angle(run_dir))
    row["angle_error_deg"] = abs(row["measured_deg"] - row["predicted_deg"])
    return row


def run_cell(
    index: int, name: str, data: Dict[str, Any], run_dir: str, threads: int
) -> Dict[str, Any]:
    """Worker entry point: run one cell and summarize it."""
    row: Dict[str, Any] = {"cell": index, "name": name, "error": ""}
    try:
        cfg = parse_run_config(data)
        row["h"] = cfg.grid.h
        out = run_solve(cfg, Path(run_dir), threads=threads)
        row.update(summarize_run(out))
        row["status"] = "ok"
    except Exception as e:  # noqa: BLE001
        logger.error(f"Cell {index} ({name}) failed: {e}")
        row["status"] = "error"
        row["error"] = f"{type(e).__name__}: {e}"
    return row


def run_sweep(
    spec: Union[Path, SweepSpec],
    out_dir: Optional[Path] = None,
    max_workers: Optional[int] = None,
    threads: int = THREADS,
) -> Path:
    """
    Run every cell of a sweep and write the aggregate sweep.csv.

    Raises:
        ConfigurationError: invalid sweep file or empty vary block
    """
    if not isinstance(spec, SweepSpec):
        spec = load_sweep(Path(spec))
    out_dir = Path(out_dir) if out_dir is not None else get_sweep_dir(spec.name)
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = max_workers or spec.max_workers
    if workers < 1:
        raise ConfigurationError("max_workers must be >= 1", key="max_workers")

    cells: List[SweepCell] = list(spec.cells())
    logger.info("=" * 60)
    logger.info(f"Sweep '{spec.name}': {spec.size} cells, {workers} workers")
    logger.info("=" * 60)

    rows: List[Dict[str, Any]] = []
    if workers == 1:
        for cell in cells:
            rows.append(run_cell(*_cell_args(cell, out_dir, threads)))
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = {
                executor.submit(run_cell, *_cell_args(cell, out_dir, threads)): cell
                for cell in cells
            }
            for future in as_completed(futures):
                cell = futures[future]
                try:
                    rows.append(future.result())
                except Exception as e:  # noqa: BLE001
                    # worker process died, e.g. BrokenProcessPool
                    logger.error(f"Cell {cell.index} ({cell.name}) lost: {e}")
                    rows.append(_lost_row(cell, e))
                    continue
                logger.info(f"✓ Cell {cell.index + 1}/{len(cells)} done: {cell.name}")

    rows.sort(key=lambda r: r["cell"])
    param_names = list(spec.vary)
    by_index = {cell.index: cell.params for cell in cells}
    header = param_names + list(SWEEP_COLUMNS)
    table = [
        [by_index[row["cell"]][p] for p in param_names]
        + [row.get(col, "") for col in SWEEP_COLUMNS]
        for row in rows
    ]
    save_csv(out_dir / "sweep.csv", header, table)
    failed = sum(1 for row in rows if row["status"] != "ok")
    logger.info(f"SWEEP COMPLETE ✓ {len(rows) - failed} ok, {failed} failed")
    return out_dir


def _cell_args(cell: SweepCell, out_dir: Path, threads: int) -> Tuple[Any, ...]:
    return (cell.index, cell.name, cell.config.raw, str(out_dir / cell.name), threads)


def _lost_row(cell: SweepCell, error: BaseException) -> Dict[str, Any]:
    return {
        "cell": cell.index,
        "name": cell.name,
        "status": "error",
        "error": f"{type(error).__name__}: {error}",
    }


__all__ = ["SWEEP_COLUMNS", "summarize_run", "run_cell", "run_sweep"]
