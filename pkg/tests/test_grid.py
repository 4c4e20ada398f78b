# tests/test_grid.py
"""
Tests for grids, regions and the finite-element quadrature helpers.
"""

import logging
import sys
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pytest

from capillary_bernoulli.assembly import (
    gauss_reference,
    lumped_mass,
    require_planar,
    segment_positive_integral,
    stiffness_matrix,
    triangle_fractions,
    triangle_positive_fraction,
    wall_lumped,
    wall_positive_integrals,
)
from capillary_bernoulli.exceptions import ConfigurationError
from capillary_bernoulli.grid import (
    NodeTag,
    Region,
    ball_node_mask,
    build_grid,
    reference_grid,
)

# Setup logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


class TestGrid:
    """Test grid construction and node tagging."""

    def test_scalar_extent(self):
        """Test that (L, L_d) builds [-L,L] x [0,L_d]."""
        grid = build_grid(2, [1.0, 0.5], 0.25)
        assert grid.lower == (-1.0, 0.0)
        assert grid.upper == (1.0, 0.5)
        assert grid.shape == (9, 3)
        assert grid.cell_shape == (8, 2)
        assert grid.num_nodes == 27
        logger.info(f"✓ Grid built: {grid.shape}")

    def test_pair_extent_3d(self):
        """Test explicit intervals per axis in three dimensions."""
        grid = build_grid(3, [(0.0, 1.0), (-0.5, 0.5), (0.0, 0.5)], 0.25)
        assert grid.shape == (5, 5, 3)
        assert grid.wall_face_shape == (4, 4)
        assert grid.cell_volume == pytest.approx(0.25**3)

    def test_axes_reproducible(self):
        """Test that node coordinates come from lower + h * index."""
        grid = build_grid(2, [1.0, 1.0], 1 / 8)
        x, y = grid.axes()
        assert x[0] == -1.0 and x[-1] == pytest.approx(1.0)
        assert y[3] == pytest.approx(3 / 8)
        assert grid.coords().shape == (17, 9, 2)

    def test_non_divisible_spacing(self):
        """Test that a spacing not dividing the box is a configuration error."""
        with pytest.raises(ConfigurationError) as info:
            build_grid(2, [1.0, 1.0], 0.3)
        assert info.value.key == "grid.h"
        logger.info(f"✓ Rejected: {info.value}")

    @pytest.mark.parametrize(
        "dim, extent, h, key",
        [
            (4, [1.0, 1.0], 0.25, "grid.dim"),
            (2, [1.0, 1.0], -0.1, "grid.h"),
            (2, [(-1.0, 1.0), (0.5, 1.0)], 0.25, "grid.extent"),
            (2, [(-1.0, 1.0)], 0.25, "grid.extent"),
        ],
    )
    def test_invalid_grids(self, dim, extent, h, key):
        """Test the key reported for each kind of invalid grid."""
        with pytest.raises(ConfigurationError) as info:
            build_grid(dim, extent, h)
        assert info.value.key == key

    def test_tags_partition(self, grid2d):
        """Test that the wall row is WALL, the rest of the box boundary OUTER."""
        tags = grid2d.tags()
        assert np.all(tags[:, 0] == NodeTag.WALL)
        assert np.all(tags[0, 1:] == NodeTag.OUTER)
        assert np.all(tags[-1, 1:] == NodeTag.OUTER)
        assert np.all(tags[:, -1] == NodeTag.OUTER)
        assert np.all(tags[1:-1, 1:-1] == NodeTag.INTERIOR)
        logger.info("✓ Node tags partition the grid")

    def test_node_index(self, grid2d):
        """Test node lookup and the error for off-grid points."""
        assert grid2d.node_index((0.0, 0.0)) == (16, 0)
        with pytest.raises(ConfigurationError):
            grid2d.node_index((0.01, 0.0))

    def test_reference_grid(self):
        """Test the reference half-ball box."""
        grid = reference_grid(2, 1.0, 0.125)
        assert grid.lower == (-1.0, 0.0)
        assert grid.upper == (1.0, 1.0)


class TestRegion:
    """Test quadrature regions."""

    def test_full_measure(self, grid2d):
        """Test that the full region measures the box."""
        assert Region.full(grid2d).measure() == pytest.approx(2.0)
        assert Region.empty(grid2d).measure() == 0.0

    def test_half_ball_measure(self, fine_grid2d):
        """Test that the half-disc area converges to pi r^2 / 2."""
        region = Region.half_ball(fine_grid2d, (0.0, 0.0), 0.5)
        assert region.measure() == pytest.approx(np.pi * 0.125, rel=2e-3)
        assert region.wall.sum() * fine_grid2d.h == pytest.approx(1.0, abs=1e-9)
        logger.info(f"✓ Half-ball measure: {region.measure():.6f}")

    def test_box_region(self, grid2d):
        """Test an axis-aligned box aligned with cell faces."""
        region = Region.box(grid2d, (-0.5, 0.0), (0.5, 0.5))
        assert region.measure() == pytest.approx(0.5)

    def test_union_and_difference(self, grid2d):
        """Test disjoint union and contained difference."""
        cells = np.zeros(grid2d.cell_shape, dtype=bool)
        cells[:16] = True
        left = Region.from_cell_mask(grid2d, cells)
        right = Region.from_cell_mask(grid2d, ~cells)
        whole = left | right
        assert whole.measure() == pytest.approx(2.0)
        assert (whole - left).measure() == pytest.approx(right.measure())

    def test_overlapping_union_rejected(self, grid2d):
        """Test that overlapping regions cannot be joined."""
        full = Region.full(grid2d)
        with pytest.raises(ConfigurationError):
            full | full

    def test_difference_needs_containment(self, grid2d):
        """Test that subtracting a larger region fails."""
        small = Region.box(grid2d, (-0.25, 0.0), (0.25, 0.25))
        with pytest.raises(ConfigurationError):
            small - Region.full(grid2d)

    def test_node_mask_round_trip(self, grid2d):
        """Test that a node mask region touches only nodes of the mask."""
        mask = ball_node_mask(grid2d, (0.0, 0.0), 0.5, strict=False)
        region = Region.from_node_mask(grid2d, mask)
        assert region.measure() > 0.0
        assert not np.any(region.node_mask() & ~mask)


class TestAssembly:
    """Test lumped weights, stiffness and cut-cell quadrature."""

    def test_lumped_mass_total(self, grid2d):
        """Test that lumped masses sum to the box volume."""
        assert lumped_mass(grid2d).sum() == pytest.approx(2.0)
        assert wall_lumped(grid2d).sum() == pytest.approx(2.0)

    def test_stiffness_kernel(self, grid2d):
        """Test that constants lie in the kernel of the stiffness matrix."""
        ngauss = gauss_reference(2).shape[0]
        ncells = int(np.prod(grid2d.cell_shape))
        A = np.broadcast_to(np.eye(2), (ncells, ngauss, 2, 2))
        K = stiffness_matrix(grid2d, A)
        ones = np.ones(grid2d.num_nodes)
        assert np.abs(K @ ones).max() < 1e-10
        x = grid2d.coords()[..., 0].ravel()
        # x^T K x = integral of |grad x|^2 = area
        assert x @ (K @ x) == pytest.approx(2.0)
        logger.info("✓ Stiffness matrix reproduces the Dirichlet energy of x")

    def test_triangle_fraction_values(self):
        """Test positive area fractions of a linear triangle."""
        frac = triangle_positive_fraction(
            np.array([1.0, 1.0, -1.0, -1.0]),
            np.array([1.0, -1.0, -1.0, 1.0]),
            np.array([1.0, -1.0, -1.0, 1.0]),
        )
        assert frac[0] == pytest.approx(1.0)
        assert frac[1] == pytest.approx(0.25)
        assert frac[2] == pytest.approx(0.0)
        assert frac[3] == pytest.approx(0.75)

    def test_segment_positive_integral(self):
        """Test the positive-part integral on a segment."""
        out = segment_positive_integral(
            np.array([1.0, 1.0, -1.0]), np.array([1.0, -1.0, -1.0]), 2.0
        )
        assert out == pytest.approx([2.0, 0.5, 0.0])

    def test_cut_fractions_on_affine(self, grid2d):
        """Test that cut quadrature measures {x > 0} exactly."""
        signed = grid2d.coords()[..., 0] - 1e-3
        fractions = triangle_fractions(grid2d, signed)
        area = fractions.sum() * 0.5 * grid2d.h**2
        assert area == pytest.approx(1.0 - 1e-3, rel=1e-12)
        wall = wall_positive_integrals(grid2d, signed).sum()
        assert wall == pytest.approx(0.5 * (1.0 - 1e-3) ** 2, rel=1e-12)

    def test_cut_requires_planar(self):
        """Test that cut quadrature is refused in three dimensions."""
        grid = build_grid(3, [0.5, 0.5], 0.25)
        with pytest.raises(ConfigurationError):
            require_planar(grid)
