# capillary_bernoulli/grid.py
"""
Structured grids on half-domains and quadrature regions.

A grid covers the box [lo_1, hi_1] x ... x [0, hi_d] with uniform spacing h.
Nodes on {x_d = 0} are WALL nodes, the rest of the box boundary is OUTER
(Dirichlet part), everything else is INTERIOR. Balls, half-balls and frame
ellipsoids are realized as fractional cell weights (Region).
"""

import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, List, Sequence, Tuple, Union

import numpy as np

from .config import CELL_SUBSAMPLES, FACE_SUBSAMPLES
from .exceptions import ConfigurationError

# Setup logging
logger = logging.getLogger(__name__)

ExtentSpec = Union[Sequence[float], Sequence[Sequence[float]]]


class NodeTag(IntEnum):
    """Boundary tag of a grid node."""

    INTERIOR = 0
    WALL = 1
    OUTER = 2


@dataclass(frozen=True)
class Grid:
    """Uniform Cartesian grid on a half-domain box."""

    dim: int
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]
    h: float
    shape: Tuple[int, ...]

    @property
    def cell_shape(self) -> Tuple[int, ...]:
        return tuple(n - 1 for n in self.shape)

    @property
    def wall_face_shape(self) -> Tuple[int, ...]:
        return self.cell_shape[:-1]

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(np.subtract(self.upper, self.lower)))

    def axes(self) -> List[np.ndarray]:
        """Node coordinates per axis, reproducible from (lower, h, index)."""
        return [
            self.lower[k] + self.h * np.arange(self.shape[k], dtype=float)
            for k in range(self.dim)
        ]

    def coords(self) -> np.ndarray:
        """Node coordinates, shape (*shape, dim)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def cell_centers(self) -> np.ndarray:
        """Cell center coordinates, shape (*cell_shape, dim)."""
        centers = [
            self.lower[k] + self.h * (np.arange(self.cell_shape[k]) + 0.5)
            for k in range(self.dim)
        ]
        return np.stack(np.meshgrid(*centers, indexing="ij"), axis=-1)

    def wall_face_centers(self) -> np.ndarray:
        """Centers of the wall faces, shape (*wall_face_shape, dim)."""
        centers = self.cell_centers()[..., 0, :].copy()
        centers[..., -1] = 0.0
        return centers

    def tags(self) -> np.ndarray:
        """Node tags as an int8 array; every node has exactly one tag."""
        tags = np.full(self.shape, NodeTag.INTERIOR, dtype=np.int8)
        outer = np.zeros(self.shape, dtype=bool)
        for k in range(self.dim - 1):
            index = [slice(None)] * self.dim
            index[k] = 0
            outer[tuple(index)] = True
            index[k] = -1
            outer[tuple(index)] = True
        top = [slice(None)] * self.dim
        top[-1] = -1
        outer[tuple(top)] = True
        tags[outer] = NodeTag.OUTER
        wall = [slice(None)] * self.dim
        wall[-1] = 0
        tags[tuple(wall)] = NodeTag.WALL
        return tags

    def node_index(self, point: Sequence[float]) -> Tuple[int, ...]:
        """Index of the node at `point`; raises if the point is not a node."""
        index = []
        for k in range(self.dim):
            n = (point[k] - self.lower[k]) / self.h
            i = int(round(n))
            if abs(n - i) > 1e-9 or not 0 <= i < self.shape[k]:
                raise ConfigurationError(f"Point {tuple(point)} is not a grid node")
            index.append(i)
        return tuple(index)

    def contains(self, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        """Boolean mask of points inside the closed box (with tolerance)."""
        scale = tol * max(1.0, self.diameter)
        inside = np.ones(points.shape[:-1], dtype=bool)
        for k in range(self.dim):
            inside &= points[..., k] >= self.lower[k] - scale
            inside &= points[..., k] <= self.upper[k] + scale
        return inside

    def header(self) -> str:
        extent = ";".join(f"{lo!r}:{hi!r}" for lo, hi in zip(self.lower, self.upper))
        return f"# dim,extent,h\n# {self.dim},{extent},{self.h!r}"


def _parse_extent(dim: int, extent: ExtentSpec) -> List[Tuple[float, float]]:
    items = list(extent)
    if items and all(np.isscalar(v) for v in items):
        if len(items) != 2:
            raise ConfigurationError(
                "Scalar extent must be (L, L_d) for [-L,L]^(d-1) x [0,L_d]",
                key="grid.extent",
            )
        half, height = float(items[0]), float(items[1])
        return [(-half, half)] * (dim - 1) + [(0.0, height)]
    if len(items) != dim:
        raise ConfigurationError(
            f"Extent needs {dim} intervals, got {len(items)}", key="grid.extent"
        )
    return [(float(lo), float(hi)) for lo, hi in items]


def build_grid(dim: int, extent: ExtentSpec, h: float) -> Grid:
    """
    Build a grid on [lo_1,hi_1] x ... x [0, hi_d].

    Args:
        dim: 2 or 3
        extent: (L, L_d) or one (lo, hi) pair per axis; last axis starts at 0
        h: uniform spacing, must divide every side length

    Returns:
        Grid with deterministic row-major node ordering

    Raises:
        ConfigurationError: bad dimension, extent or non-divisible spacing
    """
    if dim not in (2, 3):
        raise ConfigurationError(f"dim must be 2 or 3, got {dim}", key="grid.dim")
    if not h > 0:
        raise ConfigurationError(f"h must be positive, got {h}", key="grid.h")

    intervals = _parse_extent(dim, extent)
    if intervals[-1][0] != 0.0:
        raise ConfigurationError(
            "Last axis must start at the wall x_d = 0", key="grid.extent"
        )

    shape = []
    for k, (lo, hi) in enumerate(intervals):
        if not hi > lo:
            raise ConfigurationError(
                f"Empty interval [{lo}, {hi}] on axis {k}", key="grid.extent"
            )
        n = (hi - lo) / h
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ConfigurationError(
                f"Spacing h={h} does not divide side length {hi - lo} on axis {k}",
                key="grid.h",
            )
        shape.append(int(round(n)) + 1)

    grid = Grid(
        dim=dim,
        lower=tuple(lo for lo, _ in intervals),
        upper=tuple(hi for _, hi in intervals),
        h=float(h),
        shape=tuple(shape),
    )
    logger.debug(f"Built grid {grid.shape} with h={h}")
    return grid


def reference_grid(dim: int, radius: float, h: float) -> Grid:
    """Grid on [-R,R]^(d-1) x [0,R]."""
    return build_grid(dim, (radius, radius), h)


# ==============================================================================
# Regions
# ==============================================================================

LevelFunction = Callable[[np.ndarray], np.ndarray]


def _subsample_offsets(count: int, dims: int) -> np.ndarray:
    ticks = (np.arange(count) + 0.5) / count
    mesh = np.meshgrid(*([ticks] * dims), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _coverage(
    lower_corners: np.ndarray,
    h: float,
    level: LevelFunction,
    lipschitz: float,
    samples: int,
    axes: Sequence[int],
) -> np.ndarray:
    """
    Fraction of each box {corner + h*[0,1]^axes} where level < 0.

    Boxes far from the zero set of `level` are decided by the sign at their
    center; the others are sub-sampled.
    """
    span = np.zeros(lower_corners.shape[-1])
    span[list(axes)] = 0.5 * h
    centers = lower_corners + span
    values = level(centers)
    reach = lipschitz * h * np.sqrt(len(axes)) / 2.0

    weights = np.where(values < 0.0, 1.0, 0.0)
    uncertain = np.abs(values) <= reach
    if np.any(uncertain):
        offsets = _subsample_offsets(samples, len(axes))
        local = np.zeros((offsets.shape[0], lower_corners.shape[-1]))
        local[:, list(axes)] = offsets * h
        corners = lower_corners[uncertain]
        points = corners[:, None, :] + local[None, :, :]
        inside = level(points) < 0.0
        weights[uncertain] = inside.mean(axis=1)
    return weights


@dataclass(frozen=True)
class Region:
    """Quadrature region: cell weights and wall-face weights in [0, 1]."""

    grid: Grid
    cells: np.ndarray = field(repr=False)
    wall: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.cells.shape != self.grid.cell_shape:
            raise ConfigurationError("Region cell weights do not match the grid")
        if self.wall.shape != self.grid.wall_face_shape:
            raise ConfigurationError("Region wall weights do not match the grid")

    @classmethod
    def full(cls, grid: Grid) -> "Region":
        return cls(grid, np.ones(grid.cell_shape), np.ones(grid.wall_face_shape))

    @classmethod
    def empty(cls, grid: Grid) -> "Region":
        return cls(grid, np.zeros(grid.cell_shape), np.zeros(grid.wall_face_shape))

    @classmethod
    def from_level(
        cls,
        grid: Grid,
        level: LevelFunction,
        lipschitz: float = 1.0,
        cell_samples: int = CELL_SUBSAMPLES,
        face_samples: int = FACE_SUBSAMPLES,
    ) -> "Region":
        """Region {level < 0} with sub-sampled coverage weights."""
        d = grid.dim
        cell_corners = grid.cell_centers() - 0.5 * grid.h
        cells = _coverage(
            cell_corners, grid.h, level, lipschitz, cell_samples, range(d)
        )
        face_corners = grid.wall_face_centers()
        face_corners[..., : d - 1] -= 0.5 * grid.h
        wall = _coverage(
            face_corners, grid.h, level, lipschitz, face_samples, range(d - 1)
        )
        return cls(grid, cells, wall)

    @classmethod
    def half_ball(
        cls, grid: Grid, center: Sequence[float], radius: float
    ) -> "Region":
        """B_r(center) intersected with the grid's half-space."""
        c = np.asarray(center, dtype=float)

        def level(points: np.ndarray) -> np.ndarray:
            return np.linalg.norm(points - c, axis=-1) - radius

        return cls.from_level(grid, level)

    @classmethod
    def ellipsoid(
        cls, grid: Grid, center: Sequence[float], matrix: np.ndarray, radius: float
    ) -> "Region":
        """{x : |matrix^{-1}(x - center)| < radius}, e.g. E_r(x0) = T(B_r)."""
        c = np.asarray(center, dtype=float)
        inverse = np.linalg.inv(matrix)
        lipschitz = float(np.linalg.norm(inverse, 2))

        def level(points: np.ndarray) -> np.ndarray:
            local = (points - c) @ inverse.T
            return np.linalg.norm(local, axis=-1) - radius

        return cls.from_level(grid, level, lipschitz=lipschitz)

    @classmethod
    def box(
        cls, grid: Grid, lower: Sequence[float], upper: Sequence[float]
    ) -> "Region":
        """Axis-aligned box [lower, upper] intersected with the grid."""
        lo = np.asarray(lower, dtype=float)
        hi = np.asarray(upper, dtype=float)
        center, half = 0.5 * (lo + hi), 0.5 * (hi - lo)

        def level(points: np.ndarray) -> np.ndarray:
            return np.max(np.abs(points - center) - half, axis=-1)

        return cls.from_level(grid, level)

    @classmethod
    def from_node_mask(cls, grid: Grid, mask: np.ndarray) -> "Region":
        """Cells whose corners all lie in the node mask."""
        mask = np.asarray(mask, dtype=bool)
        cells = np.ones(grid.cell_shape, dtype=bool)
        for bits in np.ndindex(*([2] * grid.dim)):
            index = tuple(slice(b, b + n) for b, n in zip(bits, grid.cell_shape))
            cells &= mask[index]
        return cls.from_cell_mask(grid, cells)

    @classmethod
    def from_cell_mask(cls, grid: Grid, mask: np.ndarray) -> "Region":
        """Region made of whole cells; wall faces follow the first cell layer."""
        cells = np.asarray(mask, dtype=float)
        return cls(grid, cells, cells[..., 0].copy())

    def __or__(self, other: "Region") -> "Region":
        """Union of disjoint regions."""
        cells = self.cells + other.cells
        wall = self.wall + other.wall
        if cells.max(initial=0.0) > 1.0 + 1e-12 or wall.max(initial=0.0) > 1.0 + 1e-12:
            raise ConfigurationError("Regions overlap; union needs disjoint regions")
        return Region(self.grid, cells, wall)

    def __sub__(self, other: "Region") -> "Region":
        """Difference with a region contained in this one."""
        cells = self.cells - other.cells
        wall = self.wall - other.wall
        if cells.min(initial=0.0) < -1e-12 or wall.min(initial=0.0) < -1e-12:
            raise ConfigurationError("Difference needs a contained region")
        return Region(self.grid, np.clip(cells, 0.0, 1.0), np.clip(wall, 0.0, 1.0))

    def measure(self) -> float:
        return float(np.sum(self.cells) * self.grid.cell_volume)

    def node_mask(self) -> np.ndarray:
        """Nodes touched by a cell with positive weight."""
        touched = np.zeros(self.grid.shape, dtype=bool)
        positive = self.cells > 0.0
        for bits in np.ndindex(*([2] * self.grid.dim)):
            index = tuple(
                slice(b, b + n) for b, n in zip(bits, self.grid.cell_shape)
            )
            touched[index] |= positive
        return touched


def ball_node_mask(
    grid: Grid, center: Sequence[float], radius: float, strict: bool = True
) -> np.ndarray:
    """Nodes with |x - center| < radius (or <= when not strict)."""
    dist = np.linalg.norm(grid.coords() - np.asarray(center, dtype=float), axis=-1)
    return dist < radius if strict else dist <= radius


__all__ = [
    "NodeTag",
    "Grid",
    "Region",
    "build_grid",
    "reference_grid",
    "ball_node_mask",
]
