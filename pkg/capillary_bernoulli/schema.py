# capillary_bernoulli/schema.py
"""
Experiment configuration files.

Run and sweep configurations are YAML. Every mapping is loaded with the line
number of each key so that validation errors name both the dotted key path
and the line. Unknown keys are rejected everywhere, including the parameter
blocks of coefficient families and Dirichlet samplers.
"""

import copy
import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import yaml

from .coefficients import CoeffField, make_coefficients
from .config import (
    DEFAULT_SEED,
    EPS0,
    EPS_FACTOR,
    INNER_TOL,
    MAX_INNER,
    PATIENCE,
    RESTARTS,
)
from .exceptions import ConfigurationError, DomainError
from .grid import Grid, build_grid
from .solver import Sampler, SolveConfig, make_dirichlet
from .storage import canonical_hash

# Setup logging
logger = logging.getLogger(__name__)

# ==============================================================================
# Line-tracking loader
# ==============================================================================


class LineDict(dict):
    """dict that remembers the 1-based source line of each key."""

    def __init__(self, *args: Any, **kwargs: Any) -> None:
        super().__init__(*args, **kwargs)
        self.lines: Dict[str, int] = {}

    def line_of(self, key: str) -> Optional[int]:
        return self.lines.get(key)


class LineLoader(yaml.SafeLoader):
    """SafeLoader producing LineDict mappings."""


def _construct_mapping(loader: LineLoader, node: yaml.MappingNode) -> LineDict:
    loader.flatten_mapping(node)
    data = LineDict()
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        if key in data:
            raise ConfigurationError(
                f"Duplicate key '{key}'",
                key=str(key),
                line=key_node.start_mark.line + 1,
            )
        data[key] = loader.construct_object(value_node, deep=True)
        data.lines[str(key)] = key_node.start_mark.line + 1
    return data


LineLoader.add_constructor(
    yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping
)


def load_yaml(path: Path) -> Any:
    """Parse a YAML file; syntax errors become ConfigurationError with a line."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        return yaml.load(text, Loader=LineLoader)
    except yaml.MarkedYAMLError as e:
        line = e.problem_mark.line + 1 if e.problem_mark is not None else None
        raise ConfigurationError(
            f"Invalid YAML in {path}: {e.problem}", line=line
        ) from e


# ==============================================================================
# Validation helpers
# ==============================================================================


def _line(mapping: Any, key: str) -> Optional[int]:
    return mapping.line_of(key) if isinstance(mapping, LineDict) else None


def _join(prefix: str, key: str) -> str:
    return f"{prefix}.{key}" if prefix else key


def _require_mapping(value: Any, key: str, line: Optional[int] = None) -> Mapping:
    if value is None:
        return LineDict()
    if not isinstance(value, Mapping):
        raise ConfigurationError(
            f"Expected a mapping, got {type(value).__name__}",
            key=key or None,
            line=line,
        )
    return value


def _check_keys(mapping: Mapping, allowed: Sequence[str], prefix: str) -> None:
    for key in mapping:
        if key not in allowed:
            raise ConfigurationError(
                f"Unknown key (allowed: {', '.join(allowed)})",
                key=_join(prefix, str(key)),
                line=_line(mapping, str(key)),
            )


def _number(mapping: Mapping, key: str, prefix: str, default: Any) -> Any:
    value = mapping.get(key, default)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(
            f"Expected a number, got {value!r}",
            key=_join(prefix, key),
            line=_line(mapping, key),
        )
    return value


def _integer(mapping: Mapping, key: str, prefix: str, default: int) -> int:
    value = _number(mapping, key, prefix, default)
    if isinstance(value, float) and not value.is_integer():
        raise ConfigurationError(
            f"Expected an integer, got {value!r}",
            key=_join(prefix, key),
            line=_line(mapping, key),
        )
    return int(value)


def _radii(mapping: Mapping, key: str, prefix: str) -> Optional[List[float]]:
    value = mapping.get(key)
    if value is None:
        return None
    if not isinstance(value, list) or not value:
        raise ConfigurationError(
            "Expected a nonempty list of radii",
            key=_join(prefix, key),
            line=_line(mapping, key),
        )
    out = []
    for item in value:
        if isinstance(item, bool) or not isinstance(item, (int, float)) or item <= 0:
            raise ConfigurationError(
                f"Radii must be positive numbers, got {item!r}",
                key=_join(prefix, key),
                line=_line(mapping, key),
            )
        out.append(float(item))
    return out


def _locate(data: Any, dotted: str) -> Optional[int]:
    """Line of the deepest existing key along a dotted path."""
    line = None
    node = data
    for part in dotted.split("."):
        if not isinstance(node, Mapping) or part not in node:
            break
        line = _line(node, part) or line
        node = node[part]
    return line


def _plain(value: Any) -> Any:
    """LineDict/tuple trees to plain dicts and lists."""
    if isinstance(value, Mapping):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


# ==============================================================================
# Run configuration
# ==============================================================================

TOP_KEYS = (
    "name",
    "grid",
    "coefficients",
    "dirichlet",
    "schedule",
    "seed",
    "analysis",
)
GRID_KEYS = ("dim", "extent", "h")
COEFFICIENT_KEYS = ("family", "params")
DIRICHLET_KEYS = ("sampler", "params")
SCHEDULE_KEYS = (
    "eps0",
    "factor",
    "eps_min",
    "inner_tol",
    "patience",
    "max_inner",
    "restarts",
)
ANALYSIS_KEYS = (
    "weiss_radii",
    "audit_band",
    "flatness_radii",
    "nondegeneracy_radii",
)

FAMILY_PARAMS: Dict[str, Tuple[str, ...]] = {
    "constant": ("A", "Q", "beta"),
    "affine": ("A", "grad_A", "Q", "grad_Q", "beta", "grad_beta", "radius"),
    "sinusoidal": ("A", "Q", "beta", "amp_A", "amp_Q", "amp_beta", "wavevector"),
    "holder": ("A", "amp", "alpha", "angle", "center", "Q", "beta"),
}
SAMPLER_PARAMS: Dict[str, Tuple[str, ...]] = {
    "half_plane": ("q", "m", "nu", "shift"),
    "constant": ("value",),
    "zero": (),
    "linear": ("slope", "offset"),
}


@dataclass(frozen=True)
class GridSpec:
    dim: int = 2
    extent: Any = (1.0, 1.0)
    h: float = 1 / 64

    def build(self) -> Grid:
        return build_grid(self.dim, self.extent, self.h)


@dataclass(frozen=True)
class ScheduleSpec:
    eps0: float = EPS0
    factor: float = EPS_FACTOR
    eps_min: Optional[float] = None
    inner_tol: float = INNER_TOL
    patience: int = PATIENCE
    max_inner: int = MAX_INNER
    restarts: int = RESTARTS


@dataclass(frozen=True)
class AnalysisSpec:
    weiss_radii: Optional[List[float]] = None
    audit_band: Optional[float] = None
    flatness_radii: Optional[List[float]] = None
    nondegeneracy_radii: Optional[List[float]] = None


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration; `raw` is the plain mapping it came from."""

    name: str
    grid: GridSpec
    family: str
    family_params: Dict[str, Any]
    sampler: str
    sampler_params: Dict[str, Any]
    schedule: ScheduleSpec
    seed: int
    analysis: AnalysisSpec
    raw: Dict[str, Any] = field(default_factory=dict, repr=False)

    @property
    def config_hash(self) -> str:
        """SHA-256 of the canonical form; stable under key reordering."""
        return canonical_hash(self.raw)

    def build_grid(self) -> Grid:
        return self.grid.build()

    def coefficients(self) -> CoeffField:
        return make_coefficients(self.grid.dim, self.family, self.family_params)

    def dirichlet(self) -> Sampler:
        return make_dirichlet(self.grid.dim, self.sampler, self.sampler_params)

    def solve_config(self) -> SolveConfig:
        s = self.schedule
        return SolveConfig(
            grid=self.build_grid(),
            coeffs=self.coefficients(),
            dirichlet=self.dirichlet(),
            eps0=s.eps0,
            eps_factor=s.factor,
            eps_min=s.eps_min,
            inner_tol=s.inner_tol,
            patience=s.patience,
            max_inner=s.max_inner,
            restarts=s.restarts,
            seed=self.seed,
        )


def _parse_grid(data: Mapping) -> GridSpec:
    grid = _require_mapping(data.get("grid"), "grid", _line(data, "grid"))
    _check_keys(grid, GRID_KEYS, "grid")
    if "h" not in grid:
        raise ConfigurationError("Missing grid spacing", key="grid.h")
    extent = grid.get("extent", [1.0, 1.0])
    if not isinstance(extent, list):
        raise ConfigurationError(
            "extent must be [L, L_d] or one [lo, hi] pair per axis",
            key="grid.extent",
            line=_line(grid, "extent"),
        )
    return GridSpec(
        dim=_integer(grid, "dim", "grid", 2),
        extent=_plain(extent),
        h=float(_number(grid, "h", "grid", None)),
    )


def _parse_block(
    data: Mapping,
    block: str,
    keys: Tuple[str, str],
    default: str,
    known: Mapping[str, Tuple[str, ...]],
) -> Tuple[str, Dict[str, Any]]:
    """(name, params) of a family-style block with per-name parameter keys."""
    name_key, params_key = keys
    section = _require_mapping(data.get(block), block, _line(data, block))
    _check_keys(section, keys, block)
    name = section.get(name_key, default)
    if name not in known:
        raise ConfigurationError(
            f"Unknown {name_key} '{name}' (known: {sorted(known)})",
            key=f"{block}.{name_key}",
            line=_line(section, name_key),
        )
    params = _require_mapping(
        section.get(params_key), f"{block}.{params_key}", _line(section, params_key)
    )
    _check_keys(params, known[name], f"{block}.{params_key}")
    return str(name), _plain(params)


def _parse_schedule(data: Mapping) -> ScheduleSpec:
    sched = _require_mapping(data.get("schedule"), "schedule", _line(data, "schedule"))
    _check_keys(sched, SCHEDULE_KEYS, "schedule")
    eps_min = _number(sched, "eps_min", "schedule", None)
    return ScheduleSpec(
        eps0=float(_number(sched, "eps0", "schedule", EPS0)),
        factor=float(_number(sched, "factor", "schedule", EPS_FACTOR)),
        eps_min=None if eps_min is None else float(eps_min),
        inner_tol=float(_number(sched, "inner_tol", "schedule", INNER_TOL)),
        patience=_integer(sched, "patience", "schedule", PATIENCE),
        max_inner=_integer(sched, "max_inner", "schedule", MAX_INNER),
        restarts=_integer(sched, "restarts", "schedule", RESTARTS),
    )


def _parse_analysis(data: Mapping) -> AnalysisSpec:
    section = _require_mapping(
        data.get("analysis"), "analysis", _line(data, "analysis")
    )
    _check_keys(section, ANALYSIS_KEYS, "analysis")
    band = _number(section, "audit_band", "analysis", None)
    return AnalysisSpec(
        weiss_radii=_radii(section, "weiss_radii", "analysis"),
        audit_band=None if band is None else float(band),
        flatness_radii=_radii(section, "flatness_radii", "analysis"),
        nondegeneracy_radii=_radii(section, "nondegeneracy_radii", "analysis"),
    )


def parse_run_config(data: Any, default_name: str = "run") -> RunConfig:
    """
    Validate a run mapping.

    Raises:
        ConfigurationError: unknown key, wrong type or invalid value; carries the
            dotted key and the source line when known
    """
    data = _require_mapping(data, "")
    _check_keys(data, TOP_KEYS, "")
    family, family_params = _parse_block(
        data, "coefficients", COEFFICIENT_KEYS, "constant", FAMILY_PARAMS
    )
    sampler, sampler_params = _parse_block(
        data, "dirichlet", DIRICHLET_KEYS, "half_plane", SAMPLER_PARAMS
    )
    name = data.get("name", default_name)
    if not isinstance(name, str) or not name or "/" in name:
        raise ConfigurationError(
            f"Run name must be a plain nonempty string, got {name!r}",
            key="name",
            line=_line(data, "name"),
        )
    raw = _plain(data)
    raw["name"] = name
    cfg = RunConfig(
        name=name,
        grid=_parse_grid(data),
        family=family,
        family_params=family_params,
        sampler=sampler,
        sampler_params=sampler_params,
        schedule=_parse_schedule(data),
        seed=_integer(data, "seed", "", DEFAULT_SEED),
        analysis=_parse_analysis(data),
        raw=raw,
    )
    # surface grid, family and schedule errors at load time
    try:
        try:
            solve_cfg = cfg.solve_config()
        except DomainError as e:
            raise ConfigurationError(str(e)) from e
        try:
            solve_cfg.coeffs.validate(solve_cfg.grid)
        except DomainError as e:
            raise ConfigurationError(str(e), key="coefficients.params") from e
    except ConfigurationError as e:
        if e.line is not None or e.key is None:
            raise
        raise ConfigurationError(e.message, key=e.key, line=_locate(data, e.key)) from e
    return cfg


def load_run_config(path: Path) -> RunConfig:
    path = Path(path)
    cfg = parse_run_config(load_yaml(path), default_name=path.stem)
    logger.info(
        f"Loaded run config '{cfg.name}' from {path} (hash {cfg.config_hash[:12]})"
    )
    return cfg


# ==============================================================================
# Sweep configuration
# ==============================================================================

SWEEP_KEYS = ("name", "base", "vary", "max_workers")


def set_dotted(data: Dict[str, Any], path: str, value: Any) -> None:
    """Set data[a][b][c] = value for path 'a.b.c', creating mappings on the way."""
    parts = path.split(".")
    node = data
    for part in parts[:-1]:
        child = node.get(part)
        if child is None:
            child = {}
            node[part] = child
        if not isinstance(child, dict):
            raise ConfigurationError(f"'{part}' is not a mapping", key=f"vary.{path}")
        node = child
    node[parts[-1]] = value


@dataclass(frozen=True)
class SweepCell:
    index: int
    name: str
    params: Dict[str, Any]
    config: RunConfig


@dataclass(frozen=True)
class SweepSpec:
    """Base configuration and the Cartesian product of varied dotted paths."""

    name: str
    base: Dict[str, Any]
    vary: Dict[str, List[Any]]
    max_workers: int = 1

    @property
    def size(self) -> int:
        size = 1
        for values in self.vary.values():
            size *= len(values)
        return size

    def cells(self) -> Iterator[SweepCell]:
        paths = list(self.vary)
        for index, combo in enumerate(itertools.product(*self.vary.values())):
            data = copy.deepcopy(self.base)
            for path, value in zip(paths, combo):
                # "a.b,c.d" sets several paths to the same value
                for target in path.split(","):
                    set_dotted(data, target.strip(), value)
            name = f"{self.name}_{index:04d}"
            data["name"] = name
            params = dict(zip(paths, combo))
            yield SweepCell(index, name, params, parse_run_config(data))


def parse_sweep(
    data: Any, base_dir: Path = Path("."), default_name: str = "sweep"
) -> SweepSpec:
    """
    Validate a sweep mapping: base (path or inline), vary {path: [values]}.

    Raises:
        ConfigurationError: unknown key, empty sweep, or a cell that fails
            run validation
    """
    data = _require_mapping(data, "")
    _check_keys(data, SWEEP_KEYS, "")
    base = data.get("base")
    if isinstance(base, str):
        base_path = (base_dir / base).resolve()
        base = load_yaml(base_path)
    base = _require_mapping(base, "base", _line(data, "base"))
    vary = _require_mapping(data.get("vary"), "vary", _line(data, "vary"))
    if not vary:
        raise ConfigurationError(
            "Sweep varies nothing", key="vary", line=_line(data, "vary")
        )
    for path, values in vary.items():
        if not isinstance(values, list) or not values:
            raise ConfigurationError(
                "Expected a nonempty list of values",
                key=f"vary.{path}",
                line=_line(vary, str(path)),
            )
    spec = SweepSpec(
        name=str(data.get("name", default_name)),
        base=_plain(base),
        vary={str(k): _plain(v) for k, v in vary.items()},
        max_workers=_integer(data, "max_workers", "", 1),
    )
    if spec.max_workers < 1:
        raise ConfigurationError("max_workers must be >= 1", key="max_workers")
    # validate every cell before anything runs
    for _ in spec.cells():
        pass
    logger.info(f"Sweep '{spec.name}': {spec.size} cells over {list(spec.vary)}")
    return spec


def load_sweep(path: Path) -> SweepSpec:
    path = Path(path)
    return parse_sweep(load_yaml(path), base_dir=path.parent, default_name=path.stem)


__all__ = [
    "LineDict",
    "LineLoader",
    "load_yaml",
    "GridSpec",
    "ScheduleSpec",
    "AnalysisSpec",
    "RunConfig",
    "parse_run_config",
    "load_run_config",
    "set_dotted",
    "SweepCell",
    "SweepSpec",
    "parse_sweep",
    "load_sweep",
]
