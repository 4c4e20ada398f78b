# capillary_bernoulli/assembly.py
"""
Q1 finite-element building blocks on structured grids.

Gradients are taken at the 2^d Gauss points of each cell, which keeps the
discrete Dirichlet form free of checkerboard modes. Cells are enumerated in
row-major order over grid.cell_shape, local corners in lexicographic bit order.
The d = 2 cut quadrature splits each cell into the triangles (00, 10, 11) and
(00, 11, 01) and integrates positive parts of the P1 interpolant exactly.
"""

import logging
from functools import lru_cache
from typing import Callable, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from .exceptions import ConfigurationError
from .grid import Grid

# Setup logging
logger = logging.getLogger(__name__)

GAUSS_OFFSET = 0.5 / np.sqrt(3.0)


@lru_cache(maxsize=None)
def local_bits(dim: int) -> Tuple[Tuple[int, ...], ...]:
    """Corner offsets of a cell in lexicographic order."""
    return tuple(np.ndindex(*([2] * dim)))


@lru_cache(maxsize=None)
def gauss_reference(dim: int) -> np.ndarray:
    """Gauss points in reference coordinates [0,1]^d, shape (2^d, d)."""
    ticks = (0.5 - GAUSS_OFFSET, 0.5 + GAUSS_OFFSET)
    return np.array([[ticks[b] for b in bits] for bits in local_bits(dim)])


def shape_values(dim: int) -> np.ndarray:
    """N_b at the Gauss points, shape (ngauss, nloc)."""
    xi = gauss_reference(dim)
    out = np.ones((xi.shape[0], 2**dim))
    for b, bits in enumerate(local_bits(dim)):
        for k, bit in enumerate(bits):
            out[:, b] *= xi[:, k] if bit else 1.0 - xi[:, k]
    return out


def shape_gradients(dim: int, h: float) -> np.ndarray:
    """Physical gradients of N_b at the Gauss points, shape (ngauss, d, nloc)."""
    xi = gauss_reference(dim)
    out = np.ones((xi.shape[0], dim, 2**dim))
    for b, bits in enumerate(local_bits(dim)):
        for k in range(dim):
            for j, bit in enumerate(bits):
                if j == k:
                    out[:, k, b] *= (1.0 if bit else -1.0) / h
                else:
                    out[:, k, b] *= xi[:, j] if bit else 1.0 - xi[:, j]
    return out


def cell_node_indices(grid: Grid) -> np.ndarray:
    """Flat node index of every cell corner, shape (ncells, nloc)."""
    index = np.arange(grid.num_nodes).reshape(grid.shape)
    return corner_values(grid, index).astype(np.int64)


def corner_values(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Gather nodal values to cell corners, shape (ncells, nloc)."""
    values = np.asarray(values).reshape(grid.shape)
    columns: List[np.ndarray] = []
    for bits in local_bits(grid.dim):
        index = tuple(slice(b, b + n) for b, n in zip(bits, grid.cell_shape))
        columns.append(values[index].ravel())
    return np.stack(columns, axis=-1)


def gauss_coordinates(grid: Grid) -> np.ndarray:
    """Physical Gauss point coordinates, shape (ncells, ngauss, d)."""
    corners = grid.cell_centers().reshape(-1, grid.dim) - 0.5 * grid.h
    return corners[:, None, :] + grid.h * gauss_reference(grid.dim)[None, :, :]


def gauss_weight(grid: Grid) -> float:
    """Quadrature weight of one Gauss point."""
    return grid.cell_volume / 2**grid.dim


def sample_at_gauss(
    grid: Grid, sampler: Callable[[np.ndarray], np.ndarray]
) -> np.ndarray:
    """Evaluate a sampler at every Gauss point, leading shape (ncells, ngauss)."""
    return sampler(gauss_coordinates(grid))


def gauss_gradients(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Gradients of the Q1 interpolant at the Gauss points, (ncells, ngauss, d)."""
    G = shape_gradients(grid.dim, grid.h)
    U = corner_values(grid, values)
    return np.einsum("gkb,cb->cgk", G, U)


def gauss_values(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Values of the Q1 interpolant at the Gauss points, (ncells, ngauss)."""
    return corner_values(grid, values) @ shape_values(grid.dim).T


def dirichlet_density(
    grid: Grid, values: np.ndarray, A_gauss: np.ndarray
) -> np.ndarray:
    """Per-cell integral of grad u . A grad u, shape (ncells,)."""
    grad = gauss_gradients(grid, values)
    flux = np.einsum("cgkl,cgl->cgk", A_gauss, grad)
    return gauss_weight(grid) * np.einsum("cgk,cgk->c", grad, flux)


def stiffness_matrix(
    grid: Grid,
    A_gauss: np.ndarray,
    cell_weights: Optional[np.ndarray] = None,
) -> sp.csr_matrix:
    """
    Assemble K with u^T K u = sum_c w_c int_c grad u . A grad u.

    Args:
        grid: structured grid
        A_gauss: coefficient matrices at the Gauss points, (ncells, ngauss, d, d)
        cell_weights: region weights per cell (default all ones)

    Returns:
        Symmetric CSR matrix of size num_nodes
    """
    G = shape_gradients(grid.dim, grid.h)
    local = gauss_weight(grid) * np.einsum("gka,cgkl,glb->cab", G, A_gauss, G)
    if cell_weights is not None:
        local = local * np.asarray(cell_weights).reshape(-1)[:, None, None]
    nodes = cell_node_indices(grid)
    nloc = nodes.shape[1]
    rows = np.repeat(nodes, nloc, axis=1).ravel()
    cols = np.tile(nodes, (1, nloc)).ravel()
    K = sp.coo_matrix(
        (local.ravel(), (rows, cols)), shape=(grid.num_nodes, grid.num_nodes)
    ).tocsr()
    K.sum_duplicates()
    return K


def lumped_mass(grid: Grid, cell_weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Trapezoid node weights sum over cells of w_c h^d / 2^d, shape grid.shape."""
    w = np.ones(grid.cell_shape) if cell_weights is None else cell_weights
    mass = np.zeros(grid.shape)
    share = np.asarray(w).reshape(grid.cell_shape) * gauss_weight(grid)
    for bits in local_bits(grid.dim):
        index = tuple(slice(b, b + n) for b, n in zip(bits, grid.cell_shape))
        mass[index] += share
    return mass


def wall_lumped(grid: Grid, face_weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Trapezoid weights of the wall row (zero elsewhere), shape grid.shape."""
    faces = grid.wall_face_shape
    w = np.ones(faces) if face_weights is None else np.asarray(face_weights)
    share = w.reshape(faces) * grid.h ** (grid.dim - 1) / 2 ** (grid.dim - 1)
    row = np.zeros(grid.shape[:-1])
    for bits in local_bits(grid.dim - 1):
        index = tuple(slice(b, b + n) for b, n in zip(bits, faces))
        row[index] += share
    out = np.zeros(grid.shape)
    out[..., 0] = row
    return out


def wall_row(grid: Grid) -> Tuple[slice, ...]:
    """Index selecting the wall row x_d = 0."""
    return (slice(None),) * (grid.dim - 1) + (0,)


# ==============================================================================
# Cut quadrature (d = 2)
# ==============================================================================

# Triangles as corner positions in local_bits(2) = (00, 01, 10, 11)
TRIANGLES = ((0, 2, 3), (0, 3, 1))


def require_planar(grid: Grid) -> None:
    if grid.dim != 2:
        raise ConfigurationError(
            "Cut quadrature is available in d = 2 only", key="quadrature"
        )


def triangle_positive_fraction(
    a: np.ndarray, b: np.ndarray, c: np.ndarray
) -> np.ndarray:
    """Area fraction where the linear interpolant of (a, b, c) is positive."""
    vals = np.sort(np.stack([a, b, c], axis=-1), axis=-1)[..., ::-1]
    p, q, s = vals[..., 0], vals[..., 1], vals[..., 2]
    npos = np.sum(vals > 0.0, axis=-1)
    out = np.where(npos == 3, 1.0, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        one = p * p / ((p - q) * (p - s))
        two = 1.0 - s * s / ((s - p) * (s - q))
    out = np.where(npos == 1, one, out)
    out = np.where(npos == 2, two, out)
    return np.clip(np.nan_to_num(out), 0.0, 1.0)


def segment_positive_integral(
    a: np.ndarray, b: np.ndarray, length: float
) -> np.ndarray:
    """Integral of the positive part of the linear interpolant on a segment."""
    hi = np.maximum(a, b)
    lo = np.minimum(a, b)
    both = 0.5 * (a + b)
    with np.errstate(divide="ignore", invalid="ignore"):
        one = 0.5 * hi * hi / (hi - lo)
    out = np.where(lo > 0.0, both, np.where(hi > 0.0, one, 0.0))
    return length * np.nan_to_num(out)


def triangle_centroids(grid: Grid) -> np.ndarray:
    """Centroids of the two triangles of each cell, shape (ncells, 2, 2)."""
    require_planar(grid)
    corners = grid.cell_centers().reshape(-1, 2) - 0.5 * grid.h
    ref = np.array(local_bits(2), dtype=float)
    cents = np.stack([ref[list(tri)].mean(axis=0) for tri in TRIANGLES])
    return corners[:, None, :] + grid.h * cents[None, :, :]


def triangle_gradients(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Gradient of the P1 interpolant on each triangle, shape (ncells, 2, 2)."""
    require_planar(grid)
    U = corner_values(grid, values)
    u00, u01, u10, u11 = U[:, 0], U[:, 1], U[:, 2], U[:, 3]
    h = grid.h
    # T1 = (00, 10, 11): x-slope along the bottom edge, y-slope along the right edge
    g1 = np.stack([(u10 - u00) / h, (u11 - u10) / h], axis=-1)
    # T2 = (00, 11, 01): y-slope along the left edge, x-slope along the top edge
    g2 = np.stack([(u11 - u01) / h, (u01 - u00) / h], axis=-1)
    return np.stack([g1, g2], axis=1)


def triangle_fractions(grid: Grid, signed: np.ndarray) -> np.ndarray:
    """Positive area fraction of each triangle, shape (ncells, 2)."""
    require_planar(grid)
    U = corner_values(grid, signed)
    return np.stack(
        [
            triangle_positive_fraction(U[:, i], U[:, j], U[:, k])
            for i, j, k in TRIANGLES
        ],
        axis=1,
    )


def wall_positive_integrals(grid: Grid, signed: np.ndarray) -> np.ndarray:
    """Integral of phi^+ over each wall face, shape (nfaces,)."""
    require_planar(grid)
    row = np.asarray(signed).reshape(grid.shape)[:, 0]
    return segment_positive_integral(row[:-1], row[1:], grid.h)


__all__ = [
    "local_bits",
    "gauss_reference",
    "shape_values",
    "shape_gradients",
    "cell_node_indices",
    "corner_values",
    "gauss_coordinates",
    "gauss_weight",
    "sample_at_gauss",
    "gauss_gradients",
    "gauss_values",
    "dirichlet_density",
    "stiffness_matrix",
    "lumped_mass",
    "wall_lumped",
    "wall_row",
    "TRIANGLES",
    "triangle_positive_fraction",
    "segment_positive_integral",
    "triangle_centroids",
    "triangle_gradients",
    "triangle_fractions",
    "wall_positive_integrals",
]
