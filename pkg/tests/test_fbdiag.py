# tests/test_fbdiag.py
"""
Tests for free-boundary extraction, contact angles and the audits.
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
from capillary_bernoulli.energy import JParams
from capillary_bernoulli.exact import Family, HalfPlaneParams, half_plane_field
from capillary_bernoulli.exceptions import ConfigurationError, ResolutionError
from capillary_bernoulli.fbdiag import (
    AuditCheck,
    AuditReport,
    PointLabel,
    Verdict,
    classify_point,
    default_tolerance,
    extract_fb,
    fit_circle_curvature,
    flatness,
    hausdorff_positivity_distance,
    is_simple,
    label_contact_points,
    marching_squares,
    nondegeneracy_audit,
    positivity_density,
    viscosity_audit,
    wetting_intervals,
)
from capillary_bernoulli.fields import ScalarField
from capillary_bernoulli.grid import build_grid

# Setup logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


class TestExtraction:
    """Test interface polylines, contact points and measured angles."""

    @pytest.mark.parametrize("m", [-0.6, 0.0, 0.6])
    def test_half_plane_angle(self, half_plane, m):
        """Test that the measured angle is arccos(-m/q) on h_(q,m)."""
        fb = extract_fb(half_plane(1.0, m, 1 / 64))
        assert len(fb.polylines) == 1
        assert fb.simple == [True]
        assert len(fb.contact_points) == 1
        assert fb.contact_points[0] == pytest.approx([0.0, 0.0], abs=1e-8)
        assert fb.wet_direction == [1.0]
        assert fb.measured_theta[0] == pytest.approx(math.acos(-m), abs=1e-6)
        logger.info(f"✓ m={m}: theta={math.degrees(fb.measured_theta[0]):.6f} deg")

    def test_interface_distance(self, half_plane):
        """Test that every vertex lies on the exact interface."""
        p = HalfPlaneParams(1.0, 0.3)
        fb = extract_fb(half_plane(1.0, 0.3, 1 / 32))
        distance = np.abs(fb.vertices() @ p.gradient()) / p.q
        assert distance.max() <= 1 / 32

    def test_reflected_wetting(self, fine_grid2d):
        """Test the wet direction when the positive set lies to the left."""
        p = HalfPlaneParams(1.0, 0.0, nu=(-1.0, 0.0))
        fb = extract_fb(half_plane_field(fine_grid2d, p))
        assert fb.wet_direction == [-1.0]
        assert fb.measured_theta[0] == pytest.approx(math.pi / 2, abs=1e-6)

    def test_empty_field(self, grid2d):
        """Test that a zero field has no free boundary."""
        fb = extract_fb(ScalarField.zeros(grid2d))
        assert fb.empty
        assert fb.contact_points == []
        assert fb.wetting_intervals == []

    def test_planar_only(self):
        """Test that extraction is refused in three dimensions."""
        grid = build_grid(3, [0.5, 0.5], 0.25)
        with pytest.raises(ConfigurationError):
            extract_fb(ScalarField.zeros(grid))

    def test_wetting_intervals(self, grid2d):
        """Test maximal runs of wet wall nodes."""
        x = grid2d.axes()[0]
        assert wetting_intervals(grid2d, x > 0.0) == [(1 / 16, 1.0)]
        wet = (x < -0.5) | (x > 0.5)
        assert wetting_intervals(grid2d, wet) == [(-1.0, -0.5625), (0.5625, 1.0)]

    def test_closed_contour(self, grid2d):
        """Test that a bump away from the boundary gives a closed polyline."""
        phi = 0.1 - np.sum((grid2d.coords() - [0.0, 0.5]) ** 2, axis=-1)
        lines, closed = marching_squares(grid2d, phi, 0.0)
        assert closed == [True]
        radius = np.linalg.norm(lines[0] - [0.0, 0.5], axis=-1)
        assert radius == pytest.approx(math.sqrt(0.1), abs=0.02)


class TestGeometry:
    """Test polyline helpers."""

    def test_is_simple(self):
        """Test the self-intersection check."""
        square = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]], dtype=float)
        bowtie = np.array([[0, 0], [1, 1], [1, 0], [0, 1], [0, 0]], dtype=float)
        assert is_simple(square, closed=True)
        assert not is_simple(bowtie, closed=True)

    def test_circle_curvature(self):
        """Test the algebraic circle fit."""
        t = np.linspace(0.0, 0.5, 5)
        points = 2.0 * np.stack([np.cos(t), np.sin(t)], axis=-1) + [3.0, -1.0]
        kappa, _ = fit_circle_curvature(points)
        assert kappa == pytest.approx(0.5, rel=1e-8)
        line = np.stack([t, 2 * t], axis=-1)
        assert fit_circle_curvature(line)[0] == 0.0

    def test_flat_interface_curvature(self, half_plane):
        """Test that a straight interface has zero curvature samples."""
        fb = extract_fb(half_plane(1.0, 0.3, 1 / 32))
        assert np.abs(fb.curvature[0][:, 2]).max() < 1e-6


class TestAudits:
    """Test audit reports and the viscosity, non-degeneracy checks."""

    def test_report_verdicts(self):
        """Test FAIL > INCONCLUSIVE > PASS aggregation."""
        passed = AuditCheck("a", Verdict.PASS, 0.0, 1.0)
        maybe = AuditCheck("b", Verdict.INCONCLUSIVE, math.nan, 1.0)
        failed = AuditCheck("c", Verdict.FAIL, 2.0, 1.0)
        assert AuditReport().verdict is Verdict.INCONCLUSIVE
        assert AuditReport([passed]).verdict is Verdict.PASS
        assert AuditReport([passed, maybe]).verdict is Verdict.INCONCLUSIVE
        assert AuditReport([passed, maybe, failed]).verdict is Verdict.FAIL
        assert AuditReport([passed]).get("a") is passed
        with pytest.raises(KeyError):
            AuditReport([passed]).get("z")

    def test_default_tolerance(self, grid2d):
        """Test 5 q sqrt(h)."""
        u = ScalarField.zeros(grid2d)
        assert default_tolerance(u, constant_coefficients(Q=4.0)) == pytest.approx(
            2.5
        )

    @pytest.mark.parametrize("m", [-0.6, 0.0, 0.6])
    def test_viscosity_passes_on_catalogue(self, half_plane, m):
        """Test that exact half-plane solutions pass the viscosity audit."""
        u = half_plane(1.0, m, 1 / 64)
        c = constant_coefficients(Q=1.0, beta=m)
        report = viscosity_audit(u, c, extract_fb(u))
        names = [check.name for check in report.checks]
        assert names == ["interior", "wall_neumann", "bernoulli", "contact_line[0]"]
        assert report.verdict is Verdict.PASS, report.as_dict()
        logger.info(f"✓ m={m}: viscosity audit PASS")

    def test_viscosity_detects_wrong_wall_coefficient(self, half_plane):
        """Test that a mismatched beta fails the wall condition."""
        u = half_plane(1.0, 0.0, 1 / 64)
        c = constant_coefficients(Q=1.0, beta=0.5)
        report = viscosity_audit(u, c, extract_fb(u), tolerance=0.1)
        assert report.get("wall_neumann").verdict is Verdict.FAIL
        assert report.verdict is Verdict.FAIL

    def test_viscosity_band_floor(self, half_plane):
        """Test that bands thinner than 2h are refused."""
        u = half_plane(1.0, 0.0, 1 / 32)
        with pytest.raises(ResolutionError):
            viscosity_audit(u, constant_coefficients(), extract_fb(u), band=1 / 64)

    def test_positivity_density(self, half_plane):
        """Test the density theta / pi of the positivity set."""
        u = half_plane(1.0, -0.5, 1 / 64)
        density = positivity_density(u, (0.0, 0.0), 0.25)
        assert density == pytest.approx(1 / 3, rel=0.05)

    def test_nondegeneracy_passes(self, half_plane):
        """Test linear growth at the contact point."""
        u = half_plane(1.0, 0.0, 1 / 32)
        c = constant_coefficients()
        checks = nondegeneracy_audit(u, c, extract_fb(u), [0.5, 0.25, 0.125])
        assert [ch.name for ch in checks] == ["nondegeneracy[0]", "density[0]"]
        assert all(ch.verdict is Verdict.PASS for ch in checks)

    def test_nondegeneracy_fails_on_zero(self, grid2d):
        """Test that a vanishing field fails at a prescribed point."""
        u = ScalarField.zeros(grid2d)
        checks = nondegeneracy_audit(
            u, constant_coefficients(), extract_fb(u), [0.5, 0.25], points=[(0.0, 0.0)]
        )
        assert checks[0].verdict is Verdict.FAIL

    def test_nondegeneracy_inconclusive_when_beta_too_negative(self, half_plane):
        """Test the verdict when beta + a sqrt(Q) <= 0 on the wall."""
        u = half_plane(1.0, 0.0, 1 / 32)
        c = constant_coefficients(beta=-1.5)
        checks = nondegeneracy_audit(u, c, extract_fb(u), [0.25])
        assert len(checks) == 1
        assert checks[0].verdict is Verdict.INCONCLUSIVE


class TestClassification:
    """Test flatness and the REG labelling of contact points."""

    def test_flatness_of_half_plane(self, half_plane):
        """Test that the half-plane is flat in the +e1 direction."""
        u = half_plane(1.0, 0.4, 1 / 32)
        result = flatness(u, (0.0, 0.0), 0.25, JParams(1.0, 0.4))
        assert result.eps < 1e-10
        assert result.nu == (1.0, 0.0)
        assert not result.inconclusive

    def test_flatness_floor(self, half_plane):
        """Test that radii below 8h are refused."""
        with pytest.raises(ResolutionError):
            flatness(half_plane(1.0, 0.0, 1 / 32), (0.0, 0.0), 0.125, JParams(1.0, 0.0))

    def test_regular_point(self, half_plane):
        """Test that the half-plane contact point is REG."""
        u = half_plane(1.0, 0.0, 1 / 32)
        result = classify_point(u, constant_coefficients(), (0.0, 0.0), [0.5, 0.25])
        assert result.label is PointLabel.REG
        assert result.family.family is Family.HALF_PLANE
        assert result.radii == [0.5, 0.25]

    def test_label_every_contact_point(self, half_plane):
        """Test that each contact point gets a label."""
        u = half_plane(1.0, 0.0, 1 / 32)
        labels = label_contact_points(
            u, constant_coefficients(), extract_fb(u), [0.5, 0.25]
        )
        assert len(labels) == 1
        assert labels[0].label in (PointLabel.REG, PointLabel.INCONCLUSIVE)


class TestHausdorff:
    """Test the positivity-set distance."""

    def test_shifted_half_planes(self, grid2d):
        """Test the distance between shifted positivity sets."""
        p = HalfPlaneParams(1.0, 0.0)
        u1 = half_plane_field(grid2d, p)
        u2 = half_plane_field(grid2d, p, shift=0.25)
        assert hausdorff_positivity_distance(u1, u2) == pytest.approx(0.25)

    def test_empty_sets(self, grid2d):
        """Test the conventions for empty positivity sets."""
        zero = ScalarField.zeros(grid2d)
        u = half_plane_field(grid2d, HalfPlaneParams(1.0, 0.0))
        assert hausdorff_positivity_distance(zero, zero) == 0.0
        assert hausdorff_positivity_distance(zero, u) == pytest.approx(math.sqrt(5.0))
