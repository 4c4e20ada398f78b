# tests/test_fields.py
"""
Tests for scalar fields, frame transforms, resampling and coefficient families.
"""

import logging
import sys
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pytest

from capillary_bernoulli.coefficients import (
    FAMILIES,
    constant_coefficients,
    make_coefficients,
)
from capillary_bernoulli.exact import HalfPlaneParams, half_plane_field
from capillary_bernoulli.exceptions import (
    ConfigurationError,
    DomainError,
    OutOfDomainError,
    ResolutionError,
)
from capillary_bernoulli.fields import (
    FrameTransform,
    ScalarField,
    blowup,
    householder_to,
    matrix_sqrt,
    sample_field,
    signed_extension,
    transform_field,
)
from capillary_bernoulli.grid import build_grid

# Setup logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


class TestScalarField:
    """Test field validation and immutability."""

    def test_values_read_only(self, grid2d):
        """Test that field values cannot be modified in place."""
        u = ScalarField.zeros(grid2d)
        with pytest.raises(ValueError):
            u.values[0, 0] = 1.0

    def test_shape_mismatch(self, grid2d):
        """Test that values must match the grid shape."""
        with pytest.raises(DomainError):
            ScalarField(grid2d, np.zeros((3, 3)))

    def test_non_finite_rejected(self, grid2d):
        """Test that NaN values are rejected."""
        values = np.zeros(grid2d.shape)
        values[2, 2] = np.nan
        with pytest.raises(DomainError):
            ScalarField(grid2d, values)

    def test_negative_needs_flag(self, grid2d):
        """Test the nonnegativity flag."""
        values = -np.ones(grid2d.shape)
        with pytest.raises(DomainError):
            ScalarField(grid2d, values)
        u = ScalarField(grid2d, values, nonneg=False)
        assert u.sup_norm() == 1.0
        assert not u.positive().any()

    def test_positivity_threshold(self, grid2d):
        """Test that tiny values fall below the positivity threshold."""
        values = np.zeros(grid2d.shape)
        values[5, 5] = 1e-14
        values[6, 6] = 1e-3
        u = ScalarField(grid2d, values)
        assert u.positive().sum() == 1
        logger.info(f"✓ tau = {u.tau():.1e}")


class TestFrames:
    """Test matrix square roots and frame transforms."""

    def test_matrix_sqrt_roundtrip(self):
        """Test M @ M = A on random SPD matrices."""
        rng = np.random.default_rng(3)
        for _ in range(50):
            B = rng.standard_normal((3, 3))
            A = B @ B.T + 0.5 * np.eye(3)
            M = matrix_sqrt(A)
            assert np.allclose(M, M.T)
            assert np.linalg.norm(M @ M - A) <= 1e-12 * np.linalg.norm(A)
        logger.info("✓ matrix_sqrt roundtrip on 50 matrices")

    def test_matrix_sqrt_rejects(self):
        """Test non-symmetric and indefinite inputs."""
        with pytest.raises(DomainError):
            matrix_sqrt(np.array([[1.0, 0.5], [0.0, 1.0]]))
        with pytest.raises(DomainError):
            matrix_sqrt(np.diag([1.0, -1.0]))

    def test_householder_maps_last_axis(self):
        """Test R e_d = target for a unit target."""
        target = np.array([0.6, 0.8])
        R = householder_to(target)
        assert np.allclose(R @ np.array([0.0, 1.0]), target)
        assert np.allclose(householder_to(np.array([0.0, 1.0])), np.eye(2))

    def test_frame_maps_wall_to_wall(self):
        """Test that T maps the reference wall onto the physical wall."""
        A0 = np.array([[2.0, 0.5], [0.5, 1.5]])
        T = FrameTransform.from_matrix((0.25, 0.0), A0)
        wall = np.array([[t, 0.0] for t in np.linspace(-1.0, 1.0, 9)])
        assert np.allclose(T.apply(wall)[:, -1], 0.0, atol=1e-14)
        points = np.array([[0.3, 0.2], [-0.1, 0.7]])
        assert np.allclose(T.inverse(T.apply(points)), points)
        assert T.jacobian == pytest.approx(np.sqrt(np.linalg.det(A0)))

    def test_frame_anchor_on_wall(self):
        """Test that a frame needs its anchor on the wall."""
        with pytest.raises(DomainError):
            FrameTransform.from_matrix((0.0, 0.1), np.eye(2))

    def test_identity_transform(self, grid2d):
        """Test that the identity frame reproduces the field."""
        u = ScalarField.from_function(grid2d, lambda x: x[..., 0] ** 2 + x[..., 1])
        T = FrameTransform.from_matrix((0.0, 0.0), np.eye(2))
        assert np.abs(transform_field(u, T).values - u.values).max() <= 1e-14


class TestResampling:
    """Test interpolation, blow-ups and signed extension."""

    def test_sample_linear_exact(self, grid2d):
        """Test that multilinear interpolation reproduces affine fields."""
        u = ScalarField.from_function(
            grid2d, lambda x: 1.0 + 2 * x[..., 0] + x[..., 1], nonneg=False
        )
        points = np.array([[0.123, 0.456], [-0.77, 0.01]])
        expected = 1.0 + 2 * points[:, 0] + points[:, 1]
        assert np.allclose(sample_field(u, points), expected)

    def test_sample_outside(self, grid2d):
        """Test that points outside the box list their indices."""
        u = ScalarField.zeros(grid2d)
        points = np.array([[0.0, 0.5], [1.5, 0.5], [0.0, -0.2]])
        with pytest.raises(OutOfDomainError) as info:
            sample_field(u, points)
        assert info.value.offending == [(1,), (2,)]
        logger.info(f"✓ {info.value}")

    def test_blowup_of_homogeneous_field(self):
        """Test that a 1-homogeneous field is invariant under blow-up."""
        p = HalfPlaneParams(1.0, 0.4)
        u = half_plane_field(build_grid(2, [1.0, 1.0], 1 / 32), p)
        v = blowup(u, (0.0, 0.0), 0.25)
        expected = half_plane_field(v.grid, p)
        assert np.abs(v.values - expected.values).max() < 1e-12

    def test_blowup_resolution_floor(self, grid2d):
        """Test that scales below 2h are refused."""
        with pytest.raises(ResolutionError):
            blowup(ScalarField.zeros(grid2d), (0.0, 0.0), grid2d.h)

    def test_signed_extension_affine(self, grid2d):
        """Test that the extension of a clipped affine field is exact."""
        u = ScalarField.from_function(
            grid2d, lambda x: np.maximum(x[..., 0] - 0.1, 0.0)
        )
        ext = signed_extension(u)
        x = grid2d.coords()[..., 0]
        extended = ext.values < 0.0
        assert extended.any()
        assert np.allclose(ext.values[extended], x[extended] - 0.1)
        positive = u.values > 0.0
        assert np.array_equal(ext.values[positive], u.values[positive])


class TestCoefficients:
    """Test coefficient families and validation."""

    def test_registry(self):
        """Test the registered families."""
        assert {"constant", "affine", "sinusoidal", "holder"} <= set(FAMILIES)

    def test_unknown_family(self):
        """Test the configuration key for an unknown family."""
        with pytest.raises(ConfigurationError) as info:
            make_coefficients(2, "quadratic", {})
        assert info.value.key == "coefficients.family"

    def test_frozen_parameters(self):
        """Test (q, m) = (sqrt(Q), beta / a) at a wall point."""
        c = constant_coefficients(A=4.0, Q=4.0, beta=1.0)
        q, m = c.frozen_q_m((0.0, 0.0))
        assert q == pytest.approx(2.0)
        assert m == pytest.approx(0.5)

    def test_validate_asymmetric(self, grid2d):
        """Test that an asymmetric A fails validation."""
        c = constant_coefficients(A=[[1.0, 0.2], [0.0, 1.0]])
        with pytest.raises(DomainError):
            c.validate(grid2d)

    def test_beta_admissibility(self, grid2d):
        """Test the wall bound |beta| < a sqrt(Q)."""
        assert constant_coefficients(beta=0.5).beta_admissible(grid2d)
        bad = constant_coefficients(beta=1.5)
        assert not bad.beta_admissible(grid2d)
        assert np.all(bad.beta_gap(grid2d) > 0.0)
        assert np.all(constant_coefficients(beta=-1.5).beta_gap(grid2d) < 0.0)

    @pytest.mark.parametrize("family", ["affine", "sinusoidal", "holder"])
    def test_families_validate(self, family, grid2d):
        """Test that default parameters give valid coefficient fields."""
        c = make_coefficients(2, family, {})
        c.validate(grid2d)
        assert c.a(grid2d.coords()).shape == grid2d.shape
        logger.info(f"✓ Family '{family}' valid, Lambda_A={c.LambdaA:.3f}")
