# tests/test_varstab.py
"""
Tests for vector fields, flows, shape derivatives and the variations of J.
"""

import logging
import sys
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pytest

from capillary_bernoulli.energy import JParams
from capillary_bernoulli.exact import HalfPlaneParams
from capillary_bernoulli.exceptions import ConfigurationError, DomainError
from capillary_bernoulli.fbdiag import Verdict, extract_fb
from capillary_bernoulli.fields import ScalarField
from capillary_bernoulli.varstab import (
    ETA_FAMILIES,
    FixedDomainProblem,
    bump_profile,
    curvature_audit,
    expansion_check,
    first_variation_J,
    flow_map,
    make_flow,
    second_variation_J,
    shape_derivatives,
    taylor_flow_check,
    transported_energy,
    wedge_variation_check,
)

# Setup logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

BUMP_FAMILIES = ["tangential", "radial", "shear", "normal", "swirl"]


class TestVectorFields:
    """Test the registered families and their closed-form jets."""

    def test_registry(self):
        """Test that every family is registered."""
        assert set(BUMP_FAMILIES) | {"constant"} <= set(ETA_FAMILIES)

    def test_unknown_family(self):
        """Test the key reported for an unknown family."""
        with pytest.raises(ConfigurationError) as info:
            make_flow("vortex", (0.0, 0.0))
        assert info.value.key == "eta.family"

    def test_direction_must_be_tangent(self):
        """Test that translations must be parallel to the wall."""
        with pytest.raises(ConfigurationError) as info:
            make_flow("tangential", (0.0, 0.0), direction=(0.0, 1.0))
        assert info.value.key == "eta.direction"

    def test_bump_derivatives(self):
        """Test the bump profile against central differences."""
        s, step = np.array([-0.6, 0.3]), 1e-6
        b, db, d2b = bump_profile(s)
        assert b[1] == pytest.approx(0.91**4)
        fd1 = (bump_profile(s + step)[0] - bump_profile(s - step)[0]) / (2 * step)
        fd2 = (bump_profile(s + step)[1] - bump_profile(s - step)[1]) / (2 * step)
        assert np.allclose(fd1, db, atol=1e-7)
        assert np.allclose(fd2, d2b, atol=1e-6)
        assert bump_profile(np.array([1.0, -1.5]))[0].tolist() == [0.0, 0.0]

    @pytest.mark.parametrize("family", BUMP_FAMILIES)
    def test_tangent_to_wall(self, family):
        """Test eta_d = 0 on the wall."""
        eta = make_flow(family, (0.1, 0.0), radius=0.4)
        wall = np.stack([np.linspace(-0.4, 0.6, 21), np.zeros(21)], axis=-1)
        assert np.abs(eta(wall)[:, -1]).max() <= 1e-12

    @pytest.mark.parametrize("family", BUMP_FAMILIES)
    def test_jet_matches_finite_differences(self, family):
        """Test D eta and D^2 eta with jac[..., i, j] = d_j eta_i."""
        eta = make_flow(family, (0.1, 0.2), radius=0.4)
        x = np.array([0.15, 0.25])
        _, jac, hess = eta.jet(x)
        step = 1e-6
        for j in range(2):
            e = np.zeros(2)
            e[j] = step
            fd = (eta(x + e) - eta(x - e)) / (2 * step)
            assert np.allclose(fd, jac[:, j], atol=1e-7)
            fd_jac = (eta.jet(x + e)[1] - eta.jet(x - e)[1]) / (2 * step)
            assert np.allclose(fd_jac, hess[:, :, j], atol=1e-6)
        logger.info(f"✓ '{family}' jet consistent")


class TestFlow:
    """Test the RK4 flow and its Jacobian."""

    def test_identity_at_zero(self):
        """Test Phi_0 = Id."""
        eta = make_flow("radial", (0.0, 0.0), radius=0.4)
        points = np.array([[0.1, 0.1], [0.3, 0.0]])
        image = flow_map(eta, 0.0, points)
        assert np.array_equal(image.points, points)
        assert np.allclose(image.det, 1.0)

    def test_constant_translation(self):
        """Test that the global family translates rigidly."""
        eta = make_flow("constant", (0.0, 0.0), amplitude=0.5)
        assert eta.t_max == float("inf")
        points = np.array([[0.1, 0.2], [-0.3, 0.0]])
        image = flow_map(eta, 0.3, points)
        assert np.allclose(image.points, points + [0.15, 0.0])
        assert np.allclose(image.det, 1.0)

    @pytest.mark.parametrize("family", BUMP_FAMILIES)
    def test_wall_preserved(self, family):
        """Test that wall points stay on the wall."""
        eta = make_flow(family, (0.0, 0.0), radius=0.4)
        wall = np.stack([np.linspace(-0.3, 0.3, 7), np.zeros(7)], axis=-1)
        image = flow_map(eta, 0.5 * eta.t_max, wall)
        assert np.all(image.points[:, -1] == 0.0)

    def test_inverse_flow(self):
        """Test Phi_-t o Phi_t = Id."""
        eta = make_flow("swirl", (0.0, 0.1), radius=0.4)
        points = np.array([[0.05, 0.1], [0.2, 0.3], [-0.1, 0.0]])
        t = 0.1 * eta.t_max
        forward = flow_map(eta, t, points).points
        assert np.allclose(flow_map(eta, -t, forward).points, points, atol=1e-9)

    def test_time_limit(self):
        """Test that |t| sup|D eta| >= 1/2 is refused."""
        eta = make_flow("radial", (0.0, 0.0), radius=0.4)
        with pytest.raises(DomainError):
            flow_map(eta, 2.0 * eta.t_max, np.zeros((1, 2)))


class TestShapeDerivatives:
    """Test the expansions of B_t and m_t."""

    @pytest.mark.parametrize("family", BUMP_FAMILIES)
    def test_expansion_residuals_decay(self, family):
        """Test first-order decay of the B_t and m_t residuals."""
        report = expansion_check(make_flow(family, (0.0, 0.0), radius=0.4), m=-0.4)
        assert report.passed(0.9), report.slopes()
        assert len(report.rows()) == len(report.ts)
        logger.info(f"✓ '{family}' slopes {report.slopes()}")

    @pytest.mark.parametrize("family", BUMP_FAMILIES)
    def test_wall_jacobian_expansion(self, family):
        """Test the tangential wall coefficients against d_1 Phi_1 on the wall."""
        eta = make_flow(family, (0.0, 0.0), radius=0.4)
        sd = shape_derivatives(eta, m=1.0, q=1.0)
        wall = np.stack([np.linspace(-0.35, 0.35, 15), np.zeros(15)], axis=-1)
        t = 1e-3
        stretch = flow_map(eta, t, wall).jacobian[..., 0, 0]
        expected = 1.0 + t * sd.deltam_tangential(wall)
        expected += t * t * sd.delta2m_tangential(wall)
        assert np.allclose(stretch, expected, atol=1e-7)

    def test_taylor_along_flow(self, half_plane):
        """Test second- and third-order remainders of the transported state."""
        u = half_plane(1.0, 0.0, 1 / 16)
        report = taylor_flow_check(u, make_flow("tangential", (0.0, 0.0), radius=0.4))
        assert report.passed(1.9, 2.5), report.as_dict()

    def test_taylor_needs_interior_support(self, half_plane):
        """Test that the field must vanish on the outer boundary."""
        u = half_plane(1.0, 0.0, 1 / 16)
        with pytest.raises(DomainError):
            taylor_flow_check(u, make_flow("constant", (0.0, 0.0)))


class TestVariations:
    """Test the first and second variation of J."""

    @pytest.mark.parametrize("m", [0.0, -0.4])
    def test_volume_route_is_derivative(self, half_plane, m):
        """Test the volume route against a central difference of J(u_t)."""
        u = half_plane(1.0, m, 1 / 32)
        p = JParams(1.0, m)
        eta = make_flow("radial", (0.0, 0.0), radius=0.4)
        fv = first_variation_J(u, eta, p)
        t = 1e-4
        fd = (transported_energy(u, eta, t, p) - transported_energy(u, eta, -t, p)) / (
            2 * t
        )
        assert fd == pytest.approx(fv.volume, abs=1e-6)

    @pytest.mark.parametrize("m", [0.0, -0.4, 0.4])
    @pytest.mark.parametrize("family", BUMP_FAMILIES)
    def test_routes_agree_on_half_plane(self, half_plane, family, m):
        """Test that both first-variation routes vanish on a critical point."""
        u = half_plane(1.0, m, 1 / 32)
        fv = first_variation_J(
            u, make_flow(family, (0.0, 0.0), radius=0.4), JParams(1.0, m)
        )
        assert abs(fv.surface) < 1e-6
        assert fv.relative_difference <= 1 / 32, fv.as_dict()
        if m == 0.0:
            assert fv.wall_term == 0.0
            assert fv.wall_correction == 0.0
        logger.info(f"✓ '{family}' m={m}: {fv.as_dict()}")

    def test_wall_correction_is_resolution_independent(self, half_plane):
        """Test that the uncorrected gap is the wall correction at every h."""
        p = JParams(1.0, -0.4)
        eta = make_flow("normal", (0.0, 0.0), radius=0.4)
        coarse = first_variation_J(half_plane(1.0, -0.4, 1 / 32), eta, p)
        fine = first_variation_J(half_plane(1.0, -0.4, 1 / 64), eta, p)
        assert abs(coarse.wall_correction) > 1e-4
        assert fine.wall_correction == pytest.approx(coarse.wall_correction, rel=0.05)
        for fv in (coarse, fine):
            gap = fv.volume - fv.surface
            assert gap == pytest.approx(fv.wall_correction, rel=0.1)

    def test_second_variation_matches_finite_difference(self, half_plane):
        """Test the volume route against the re-solved energy."""
        u = half_plane(1.0, 0.0, 1 / 16)
        sv = second_variation_J(
            u, make_flow("radial", (0.0, 0.0), radius=0.4), JParams(1.0, 0.0)
        )
        assert sv.finite_difference == pytest.approx(
            sv.volume, abs=1e-4 * max(1.0, abs(sv.volume))
        )
        assert set(sv.as_dict()) >= {"volume", "surface", "finite_difference"}

    def test_positive_side_gradients(self, half_plane):
        """Test that nodal gradients on a slanted half-plane are its slope."""
        u = half_plane(1.0, -0.4, 1 / 32)
        problem = FixedDomainProblem.from_field(u, JParams(1.0, -0.4))
        grads = problem.positive_gradients()
        expected = HalfPlaneParams(1.0, -0.4).gradient()
        assert grads.shape == (u.grid.num_nodes, 2)
        assert np.allclose(grads, expected, atol=1e-10)

    @pytest.mark.parametrize("family", ["radial", "tangential"])
    def test_second_variation_routes_agree(self, half_plane, family):
        """Test both second-variation routes on a vertical interface."""
        u = half_plane(1.0, 0.0, 1 / 32)
        sv = second_variation_J(
            u, make_flow(family, (0.0, 0.0), radius=0.4), JParams(1.0, 0.0)
        )
        assert sv.wall_correction == 0.0
        assert sv.difference <= (1 / 32) ** 0.5 * max(abs(sv.volume), 1e-3)
        logger.info(f"✓ '{family}': {sv.as_dict()}")

    @pytest.mark.slow
    @pytest.mark.parametrize("family", ["tangential", "normal"])
    def test_slanted_routes_converge(self, half_plane, family):
        """Test route agreement and the u' identity under refinement at m != 0."""
        p = JParams(1.0, -0.4)
        eta = make_flow(family, (0.0, 0.0), radius=0.4)
        runs = [
            second_variation_J(half_plane(1.0, -0.4, h), eta, p)
            for h in (1 / 16, 1 / 32, 1 / 64)
        ]
        differences = [sv.difference for sv in runs]
        residuals = [sv.identity_residual for sv in runs]
        assert differences[2] < differences[0], differences
        assert residuals[2] < residuals[0], residuals
        assert runs[2].dirichlet_uprime <= 2.0 * runs[1].dirichlet_uprime
        logger.info(f"✓ '{family}': differences {differences}, residuals {residuals}")


class TestCurvatureAudit:
    """Test the curvature and gradient-bound audit."""

    def test_half_plane_passes(self, half_plane):
        """Test that a flat interface with |grad u| = q passes."""
        u = half_plane(1.0, 0.3, 1 / 32)
        report = curvature_audit(u, JParams(1.0, 0.3), extract_fb(u))
        assert report.get("curvature").verdict is Verdict.PASS
        assert report.get("gradient_bound").verdict is Verdict.PASS

    def test_steep_field_fails(self, grid2d):
        """Test that |grad u| = 2q fails the gradient bound."""
        u = ScalarField.from_function(
            grid2d, lambda x: 2.0 * np.maximum(x[..., 0], 0.0)
        )
        report = curvature_audit(u, JParams(1.0, 0.0))
        assert report.get("gradient_bound").verdict is Verdict.FAIL
        assert report.verdict is Verdict.FAIL


class TestWedgeVariation:
    """Test the fitted wedge curvature."""

    def test_matches_closed_form(self):
        """Test the polynomial fit of J(v_t) against f''(0)."""
        check = wedge_variation_check(1.0, -0.6, h=1 / 64)
        assert len(check.energies) == 11
        assert check.predicted < 0.0
        assert check.relative_error <= 0.02
        logger.info(f"✓ fitted {check.fitted:.6f}, predicted {check.predicted:.6f}")
