# capillary_bernoulli/plotting.py
"""
SVG figures for runs and sweeps.

Output is deterministic: the Agg backend, a fixed svg.hashsalt and no date
metadata, so identical artifacts give byte-identical SVG files.
"""

import logging
import math
from pathlib import Path
from typing import Dict, List, Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .config import (  # noqa: E402
    get_angles_path,
    get_fb_path,
    get_u_path,
    get_weiss_csv_path,
    get_weiss_json_path,
)
from .exceptions import MissingArtifactError  # noqa: E402
from .storage import load_csv, load_field, load_json  # noqa: E402

# Setup logging
logger = logging.getLogger(__name__)

SVG_SALT = "capillary-bernoulli"
RAY_LENGTH = 0.3


def _save(fig: plt.Figure, path: Path) -> Path:
    with plt.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "path"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.info(f"Saved figure: {path}")
    return path


def _columns(path: Path) -> Dict[str, List[str]]:
    header, rows = load_csv(path)
    return {name: [row[k] for row in rows] for k, name in enumerate(header)}


def _floats(values: List[str]) -> np.ndarray:
    return np.array([float(v) if v != "" else math.nan for v in values])


# ==============================================================================
# Runs
# ==============================================================================


def plot_field(run_dir: Path) -> Optional[Path]:
    """Heatmap of u with the free boundary and predicted-angle rays (d = 2)."""
    run_dir = Path(run_dir)
    u = load_field(get_u_path(run_dir), nonneg=True)
    if u.grid.dim != 2:
        logger.info(f"Skipping heatmap for the d = {u.grid.dim} run {run_dir}")
        return None
    fb_path, angles_path = get_fb_path(run_dir), get_angles_path(run_dir)
    if not fb_path.exists() or not angles_path.exists():
        raise MissingArtifactError(f"Analysis artifacts missing in {run_dir}")
    x, y = u.grid.axes()

    fig, ax = plt.subplots(figsize=(8, 4.5))
    mesh = ax.pcolormesh(x, y, np.asarray(u.values).T, shading="auto", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="u")

    fb = _columns(fb_path)
    polylines = _floats(fb.get("polyline", []))
    if polylines.size == 0:
        ax.text(
            0.5,
            0.5,
            "empty free boundary",
            transform=ax.transAxes,
            ha="center",
            color="white",
        )
    else:
        xs, ys = _floats(fb["x"]), _floats(fb["y"])
        for k in np.unique(polylines):
            sel = polylines == k
            ax.plot(xs[sel], ys[sel], color="white", lw=1.5)

    angles = _columns(angles_path)
    for px, py, deg, wet in zip(
        _floats(angles.get("x", [])),
        _floats(angles.get("y", [])),
        _floats(angles.get("predicted_deg", [])),
        _floats(angles.get("wet_direction", [])),
    ):
        if not math.isfinite(deg):
            continue
        theta = math.radians(deg)
        ex = px + wet * RAY_LENGTH * math.cos(theta)
        ey = py + RAY_LENGTH * math.sin(theta)
        ax.plot([px, ex], [py, ey], "r--", lw=1.2)
        ax.plot([px], [py], "ro", ms=4)

    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(run_dir.name)
    return _save(fig, run_dir / "field.svg")


def plot_weiss(run_dir: Path) -> Optional[Path]:
    """W(r) with the monotonicity verdict; None when no Weiss report exists."""
    run_dir = Path(run_dir)
    summary = load_json(get_weiss_json_path(run_dir))
    if not summary.get("radii"):
        logger.info(f"No Weiss report in {run_dir}: {summary.get('reason', '')}")
        return None
    table = _columns(get_weiss_csv_path(run_dir))
    r, W = _floats(table["r"]), _floats(table["W"])
    order = np.argsort(r)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogx(r[order], W[order], "o-")
    verdict = "monotone" if summary.get("monotone") else "not monotone"
    drift = summary.get("max_relative_drift", math.nan)
    ax.set_title(f"Weiss energy ({verdict}, drift {drift:.2e})")
    ax.set_xlabel("r")
    ax.set_ylabel("W(r)")
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, run_dir / "weiss.svg")


def plot_run(run_dir: Path) -> List[Path]:
    run_dir = Path(run_dir)
    if not get_u_path(run_dir).exists():
        raise MissingArtifactError(f"No u.csv in {run_dir}")
    paths = [plot_field(run_dir), plot_weiss(run_dir)]
    return [p for p in paths if p is not None]


# ==============================================================================
# Sweeps
# ==============================================================================

ANGLE_PARAMS = ("dirichlet.params.m", "coefficients.params.beta")


def plot_angle_sweep(sweep_dir: Path, table: Dict[str, List[str]]) -> Optional[Path]:
    """Measured angle against the varied m (or beta) with arccos(-m/q) overlaid."""
    param = next(
        (col for col in table if any(p in col.split(",") for p in ANGLE_PARAMS)),
        None,
    )
    if param is None:
        return None
    ok = np.array([s == "ok" for s in table["status"]])
    m = _floats(table[param])
    measured = _floats(table["measured_deg"])
    predicted = _floats(table["predicted_deg"])
    order = np.argsort(m)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(m[order], predicted[order], "k-", label="arccos(-m/q)")
    ax.plot(m[ok], measured[ok], "o", label="measured")
    ax.set_xlabel(param.split(",")[0].rsplit(".", 1)[-1])
    ax.set_ylabel("contact angle (deg)")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, sweep_dir / "angles.svg")


def plot_refinement(sweep_dir: Path, table: Dict[str, List[str]]) -> Optional[Path]:
    """Angle and half-plane errors against h on log-log axes."""
    if "grid.h" not in table:
        return None
    h = _floats(table["grid.h"])
    fig, ax = plt.subplots(figsize=(6, 4))
    for column, marker in (("angle_error_deg", "o-"), ("half_plane_error", "s-")):
        values = _floats(table[column])
        good = np.isfinite(values) & (values > 0)
        if np.any(good):
            order = np.argsort(h[good])
            ax.loglog(h[good][order], values[good][order], marker, label=column)
    ax.set_xlabel("h")
    ax.set_ylabel("error")
    if ax.get_legend_handles_labels()[0]:
        ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, sweep_dir / "refinement.svg")


def plot_sweep(sweep_dir: Path) -> List[Path]:
    sweep_dir = Path(sweep_dir)
    table = _columns(sweep_dir / "sweep.csv")
    paths = [plot_angle_sweep(sweep_dir, table), plot_refinement(sweep_dir, table)]
    return [p for p in paths if p is not None]


def plot(target: Path) -> List[Path]:
    """
    Figures for a run or sweep directory.

    Raises:
        MissingArtifactError: neither u.csv nor sweep.csv is present
    """
    target = Path(target)
    if (target / "sweep.csv").exists():
        return plot_sweep(target)
    if get_u_path(target).exists():
        return plot_run(target)
    raise MissingArtifactError(f"Nothing to plot in {target}")


__all__ = [
    "plot",
    "plot_run",
    "plot_field",
    "plot_weiss",
    "plot_sweep",
    "plot_angle_sweep",
    "plot_refinement",
]
