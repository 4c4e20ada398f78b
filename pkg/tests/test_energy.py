# tests/test_energy.py
"""
Tests for the energy functionals, almost-minimality gaps and the Weiss energy.
"""

import logging
import math
import sys
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pytest

from capillary_bernoulli.coefficients import constant_coefficients
from capillary_bernoulli.energy import (
    JParams,
    WeissReport,
    almost_minimality_gap,
    energy_F,
    energy_G,
    energy_J,
    is_free_boundary_point,
    weiss,
)
from capillary_bernoulli.exceptions import (
    ConfigurationError,
    DomainError,
    PreconditionError,
    ResolutionError,
)
from capillary_bernoulli.fields import ScalarField
from capillary_bernoulli.grid import Region, build_grid

# Setup logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


def half_plane_energy(q: float, m: float) -> float:
    """Closed-form J of the half-plane solution on [-1,1] x [0,1]."""
    s = math.sqrt(q * q - m * m)
    area = 1.0 + m / (2.0 * s)
    return 2.0 * q * q * area + m * s


class TestJParams:
    """Test the model functional constants."""

    def test_requires_positive_q(self):
        """Test that q must be positive."""
        with pytest.raises(DomainError):
            JParams(0.0, 0.0)

    def test_tangential_slope(self):
        """Test s = sqrt(q^2 - m^2) and the admissibility check."""
        assert JParams(1.0, 0.6).s == pytest.approx(0.8)
        assert not JParams(1.0, 1.0).admissible
        with pytest.raises(DomainError):
            JParams(1.0, -1.2).s

    def test_frozen(self):
        """Test freezing a coefficient field at a wall point."""
        p = JParams.frozen(constant_coefficients(A=4.0, Q=9.0, beta=1.0), (0.0, 0.0))
        assert p.q == pytest.approx(3.0)
        assert p.m == pytest.approx(0.5)


class TestEnergies:
    """Test F and J on closed-form fields."""

    @pytest.mark.parametrize("m", [-0.5, 0.0, 0.5])
    def test_cut_quadrature_exact_on_half_plane(self, half_plane, m):
        """Test that cut quadrature integrates the half-plane solution exactly."""
        u = half_plane(1.0, m, 1 / 16)
        energy = energy_J(u, JParams(1.0, m), quadrature="cut")
        assert energy.total == pytest.approx(half_plane_energy(1.0, m), rel=1e-10)
        assert energy.dirichlet == pytest.approx(energy.bulk, rel=1e-10)
        logger.info(f"✓ J(h_(1,{m})) = {energy.total:.12f}")

    def test_nodal_quadrature_converges(self, half_plane):
        """Test that nodal quadrature is first-order accurate."""
        exact = half_plane_energy(1.0, 0.0)
        errors = [
            abs(energy_J(half_plane(1.0, 0.0, h), JParams(1.0, 0.0)).total - exact)
            for h in (1 / 16, 1 / 32)
        ]
        assert errors[1] < errors[0]
        assert errors[1] < 1 / 32

    @pytest.mark.parametrize("h", [1 / 8, 1 / 16])
    def test_nodal_dirichlet_is_gauss_q1(self, h):
        """Test the Gauss-point Q1 value of int |grad u|^2 for u = x_1^2."""
        grid = build_grid(2, [(0.0, 1.0), (0.0, 1.0)], h)
        u = ScalarField.from_function(grid, lambda x: x[..., 0] ** 2)
        p = JParams(1.0, 0.0)
        expected = 4.0 / 3.0 - h * h / 3.0
        assert energy_J(u, p).dirichlet == pytest.approx(expected, rel=1e-12)
        cells = np.full(grid.cell_shape, 0.5)
        half = Region(grid, cells, np.ones(grid.wall_face_shape))
        halved = energy_J(u, p, half).dirichlet
        assert halved == pytest.approx(0.5 * expected, rel=1e-12)
        logger.info(f"✓ h={h}: dirichlet {expected:.12f}")

    def test_breakdown_total(self, half_plane):
        """Test that total = dirichlet + bulk + wall."""
        energy = energy_J(half_plane(1.0, 0.3), JParams(1.0, 0.3))
        assert energy.total == energy.dirichlet + energy.bulk + energy.wall
        assert set(energy.as_dict()) == {"dirichlet", "bulk", "wall", "total"}

    def test_F_matches_J_for_constant_coefficients(self, half_plane):
        """Test that F with A = Id, Q = q^2, beta = m equals J."""
        u = half_plane(1.0, -0.3)
        F = energy_F(u, constant_coefficients(Q=1.0, beta=-0.3))
        J = energy_J(u, JParams(1.0, -0.3))
        assert F.total == pytest.approx(J.total, rel=1e-12)

    def test_energy_G_split(self, half_plane):
        """Test the frozen split into G+ and G'."""
        u = half_plane(1.0, 0.4)
        gplus, gprime = energy_G(u, constant_coefficients(Q=1.0, beta=0.4), (0.0, 0.0))
        J = energy_J(u, JParams(1.0, 0.4))
        assert gplus == pytest.approx(J.dirichlet + J.bulk)
        assert gprime == pytest.approx(J.wall)

    def test_additivity(self, half_plane):
        """Test additivity over disjoint regions."""
        u = half_plane(1.0, 0.3)
        p = JParams(1.0, 0.3)
        cells = np.zeros(u.grid.cell_shape, dtype=bool)
        cells[: cells.shape[0] // 2] = True
        left = Region.from_cell_mask(u.grid, cells)
        right = Region.from_cell_mask(u.grid, ~cells)
        whole = energy_J(u, p, left | right).total
        parts = energy_J(u, p, left).total + energy_J(u, p, right).total
        assert whole == pytest.approx(parts, rel=1e-12)

    def test_bulk_monotone_in_Q(self, half_plane):
        """Test that the bulk term grows with Q."""
        u = half_plane(1.0, 0.0)
        bulks = [
            energy_F(u, constant_coefficients(Q=Q)).bulk for Q in (0.5, 1.0, 2.0)
        ]
        assert bulks[0] < bulks[1] < bulks[2]

    def test_negative_field_rejected(self, grid2d):
        """Test the nonnegativity precondition inside the region."""
        u = ScalarField(grid2d, -np.ones(grid2d.shape), nonneg=False)
        with pytest.raises(PreconditionError):
            energy_F(u, constant_coefficients())

    def test_unknown_quadrature(self, half_plane):
        """Test that an unknown quadrature name is a configuration error."""
        with pytest.raises(ConfigurationError) as info:
            energy_J(half_plane(), JParams(1.0, 0.0), quadrature="simpson")
        assert info.value.key == "quadrature"


class TestAlmostMinimality:
    """Test the almost-minimality gap."""

    def test_self_competitor(self, half_plane):
        """Test that u against itself leaves only the error terms."""
        u = half_plane(1.0, 0.2)
        c = constant_coefficients(Q=1.0, beta=0.2)
        report = almost_minimality_gap(u, u, c, (0.0, 0.0), 0.25)
        assert report.wall_l1_term == 0.0
        assert report.gap == pytest.approx(-(report.q_term + report.a_term))
        assert report.gap < 0.0

    def test_competitor_outside_ball(self, half_plane):
        """Test that competitors must agree with u outside the frame ball."""
        u = half_plane(1.0, 0.2)
        values = np.array(u.values)
        values[-2, -2] += 1.0
        competitor = u.with_values(values)
        with pytest.raises(PreconditionError):
            almost_minimality_gap(
                u, competitor, constant_coefficients(beta=0.2), (0.0, 0.0), 0.25
            )


class TestWeiss:
    """Test the boundary-adjusted Weiss energy."""

    def test_report_statistics(self):
        """Test drift, monotonicity and spread of a report."""
        report = WeissReport(x0=[0.0, 0.0], radii=[0.4, 0.2, 0.1], W=[1.0, 1.1, 0.9])
        assert report.relative_increments()[0] == pytest.approx(0.1)
        assert report.max_relative_drift() == pytest.approx(0.1)
        assert not report.is_monotone()
        assert report.spread() == pytest.approx(0.2)
        assert report.drift_exponent() is None

    def test_constant_on_half_plane(self, half_plane):
        """Test that W is constant and matches the closed form on h_(q,m)."""
        q, m = 1.0, -0.4
        u = half_plane(q, m, 1 / 64)
        report = weiss(
            u, (0.0, 0.0), [0.5, 0.25, 0.125], c=constant_coefficients(beta=m)
        )
        assert report.radii == [0.5, 0.25, 0.125]
        theta = math.acos(-m / q)
        expected = 0.5 * (q * q * theta + m * math.sqrt(q * q - m * m))
        assert np.allclose(report.W, expected, rtol=0.02)
        assert report.is_monotone()
        logger.info(f"✓ W = {report.W} (closed form {expected:.6f})")

    def test_params_without_coefficients(self, half_plane):
        """Test the identity frame driven by explicit (q, m)."""
        u = half_plane(1.0, 0.0, 1 / 32)
        report = weiss(u, (0.0, 0.0), [0.25], params=JParams(1.0, 0.0))
        assert report.W[0] == pytest.approx(0.25 * math.pi, rel=0.02)

    def test_not_a_free_boundary_point(self, half_plane):
        """Test that x0 must lie on the free boundary."""
        u = half_plane(1.0, -0.4, 1 / 32)
        assert not is_free_boundary_point(u, (0.5, 0.0))
        with pytest.raises(DomainError):
            weiss(u, (0.5, 0.0), [0.25], params=JParams(1.0, -0.4))

    def test_radius_floor(self, half_plane):
        """Test that radii below 4h are refused."""
        u = half_plane(1.0, 0.0, 1 / 32)
        with pytest.raises(ResolutionError):
            weiss(u, (0.0, 0.0), [0.25, 0.1], params=JParams(1.0, 0.0))

    def test_needs_coefficients_or_params(self, half_plane):
        """Test that the frozen constants must be given somehow."""
        with pytest.raises(ConfigurationError):
            weiss(half_plane(1.0, 0.0, 1 / 32), (0.0, 0.0), [0.25])
