# capillary_bernoulli/storage.py
"""
Helper functions for reading and writing run artifacts.

JSON reports, CSV tables and grid field dumps all go through here so that
float formatting, atomic replacement and checksums are consistent.
"""

import csv
import hashlib
import io
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import TYPE_CHECKING, Any, Iterable, List, Sequence, Tuple

import numpy as np

from .exceptions import ConfigurationError, MissingArtifactError

if TYPE_CHECKING:
    from .fields import ScalarField

# Setup logging
logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def format_value(value: Any) -> str:
    """Deterministic text form; floats round-trip exactly."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT % float(value)
    return str(value)


def atomic_write_text(path: Path, text: str) -> None:
    """Write text to a temp file in the same directory, then rename over path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp_name, path)
    except Exception:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def _to_jsonable(data: Any) -> Any:
    if isinstance(data, dict):
        return {str(k): _to_jsonable(v) for k, v in data.items()}
    if isinstance(data, (list, tuple)):
        return [_to_jsonable(v) for v in data]
    if isinstance(data, np.ndarray):
        return _to_jsonable(data.tolist())
    if isinstance(data, (np.bool_,)):
        return bool(data)
    if isinstance(data, np.integer):
        return int(data)
    if isinstance(data, np.floating):
        return _to_jsonable(float(data))
    if isinstance(data, float) and not np.isfinite(data):
        return None
    return data


def save_json(path: Path, data: Any, pretty: bool = True) -> None:
    """
    Save data to a JSON file atomically.

    Args:
        path: Output file path
        data: Data to save; numpy scalars and arrays are converted
        pretty: If True, format with indentation
    """
    try:
        text = json.dumps(
            _to_jsonable(data),
            indent=2 if pretty else None,
            ensure_ascii=False,
            sort_keys=True,
        )
        atomic_write_text(Path(path), text + "\n")
        logger.debug(f"Saved JSON to: {path}")
    except Exception as e:
        logger.error(f"Failed to save JSON to {path}: {e}")
        raise


def load_json(path: Path) -> Any:
    """
    Load data from a JSON file.

    Raises:
        MissingArtifactError: If file doesn't exist
        json.JSONDecodeError: If file is not valid JSON
    """
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"JSON file not found: {path}")

    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)

        logger.debug(f"Loaded JSON from: {path}")
        return data
    except json.JSONDecodeError as e:
        logger.error(f"Failed to parse JSON from {path}: {e}")
        raise


def save_csv(
    path: Path,
    header: Sequence[str],
    rows: Iterable[Sequence[Any]],
    comments: Sequence[str] = (),
) -> None:
    """Write a CSV table with optional leading `#` comment lines."""
    buffer = io.StringIO()
    for line in comments:
        buffer.write(line if line.startswith("#") else f"# {line}")
        buffer.write("\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    try:
        atomic_write_text(Path(path), buffer.getvalue())
        logger.debug(f"Saved CSV to: {path}")
    except Exception as e:
        logger.error(f"Failed to save CSV to {path}: {e}")
        raise


def load_csv(path: Path) -> Tuple[List[str], List[List[str]]]:
    """Read a CSV table, skipping `#` comment lines. Returns (header, rows)."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"CSV file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        lines = [line for line in f if not line.startswith("#")]
    reader = csv.reader(lines)
    table = list(reader)
    if not table:
        return [], []
    return table[0], table[1:]


def sha256_file(path: Path) -> str:
    """Hex SHA-256 of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def canonical_hash(data: Any) -> str:
    """SHA-256 of the canonical JSON form (sorted keys, compact)."""
    text = json.dumps(
        _to_jsonable(data), sort_keys=True, separators=(",", ":"), ensure_ascii=True
    )
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# ==============================================================================
# Field dumps
# ==============================================================================


def save_field(path: Path, u: "ScalarField") -> None:
    """
    Dump a field as `# dim,extent,h` header plus one row per node.

    Rows are `i,j[,k],x,y[,z],tag,value` in row-major node order.
    """
    grid = u.grid
    d = grid.dim
    index_names = ["i", "j", "k"][:d]
    coord_names = ["x", "y", "z"][:d]
    coords = grid.coords().reshape(-1, d)
    tags = grid.tags().ravel()
    values = np.asarray(u.values).ravel()
    indices = np.array(list(np.ndindex(*grid.shape)))

    rows = (
        [*indices[n], *coords[n], int(tags[n]), values[n]]
        for n in range(values.size)
    )
    save_csv(
        path,
        index_names + coord_names + ["tag", "value"],
        rows,
        comments=grid.header().splitlines(),
    )
    logger.info(f"Saved field ({grid.num_nodes} nodes) to: {path}")


def load_field(path: Path, nonneg: bool = False) -> "ScalarField":
    """Load a field dump written by save_field."""
    from .fields import ScalarField
    from .grid import build_grid

    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"Field dump not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        f.readline()
        meta = f.readline().lstrip("#").strip()
    try:
        dim_text, extent_text, h_text = meta.split(",")
        extent = [
            tuple(float(v) for v in part.split(":")) for part in extent_text.split(";")
        ]
        grid = build_grid(int(dim_text), extent, float(h_text))
    except ValueError as e:
        raise ConfigurationError(f"Malformed field header in {path}: {meta}") from e

    header, rows = load_csv(path)
    values = np.array([float(row[-1]) for row in rows])
    if values.size != grid.num_nodes:
        raise ConfigurationError(
            f"Field dump {path} has {values.size} rows, grid needs {grid.num_nodes}"
        )
    return ScalarField(grid, values.reshape(grid.shape), nonneg=nonneg)


__all__ = [
    "FLOAT_FORMAT",
    "format_value",
    "atomic_write_text",
    "save_json",
    "load_json",
    "save_csv",
    "load_csv",
    "sha256_file",
    "canonical_hash",
    "save_field",
    "load_field",
]
