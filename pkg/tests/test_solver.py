# tests/test_solver.py
"""
Tests for Dirichlet data, harmonic replacement, capacitary profiles, the
annealed minimizer and the radial diagnostics.
"""

import logging
import sys
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pytest

from capillary_bernoulli.coefficients import constant_coefficients
from capillary_bernoulli.energy import energy_F
from capillary_bernoulli.exceptions import (
    ConfigurationError,
    DomainError,
    ResolutionError,
)
from capillary_bernoulli.fields import ScalarField
from capillary_bernoulli.grid import NodeTag, Region, build_grid
from capillary_bernoulli.solver import (
    DIRICHLET_SAMPLERS,
    SolveConfig,
    capacitary_levels,
    capacitary_profile,
    check_relative_bounds,
    dirichlet_mask,
    fit_rate,
    harmonic_replacement,
    laplacian_measure,
    make_dirichlet,
    mean_growth,
    minimize_F,
    schauder_compare,
)

# Setup logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


@pytest.fixture
def small_config():
    """Coarse half-plane problem that solves in well under a second."""
    grid = build_grid(2, [0.5, 0.5], 1 / 16)
    return SolveConfig(
        grid=grid,
        coeffs=constant_coefficients(),
        dirichlet=make_dirichlet(2, "half_plane", {"q": 1.0, "m": 0.0}),
        eps0=0.25,
        max_inner=200,
        restarts=2,
        seed=5,
    )


class TestDirichletData:
    """Test Dirichlet samplers and the fixed-node mask."""

    def test_registry(self):
        """Test the registered samplers."""
        assert {"half_plane", "constant", "zero", "linear"} <= set(DIRICHLET_SAMPLERS)

    def test_unknown_sampler(self):
        """Test the key reported for an unknown sampler."""
        with pytest.raises(ConfigurationError) as info:
            make_dirichlet(2, "parabolic")
        assert info.value.key == "dirichlet.sampler"

    def test_linear_sampler(self):
        """Test the clipped linear sampler and its slope check."""
        g = make_dirichlet(2, "linear", {"slope": [1.0, 0.0], "offset": -0.5})
        assert g(np.array([[1.0, 0.0], [0.0, 0.0]])) == pytest.approx([0.5, 0.0])
        with pytest.raises(ConfigurationError) as info:
            make_dirichlet(2, "linear", {"slope": [1.0]})
        assert info.value.key == "dirichlet.params.slope"

    def test_mask(self, grid2d):
        """Test that outer nodes and the two wall corners are fixed."""
        mask = dirichlet_mask(grid2d)
        assert np.array_equal(mask[:, 1:], grid2d.tags()[:, 1:] == NodeTag.OUTER)
        assert mask[0, 0] and mask[-1, 0]
        assert not mask[1:-1, 0].any()


class TestHarmonicReplacement:
    """Test replacement by A-harmonic functions."""

    def test_affine_unchanged(self, grid2d):
        """Test that a harmonic field with zero wall flux is reproduced."""
        u = ScalarField.from_function(grid2d, lambda x: 1.0 + x[..., 0])
        region = Region.half_ball(grid2d, (0.0, 0.0), 0.5)
        v = harmonic_replacement(u, constant_coefficients(), region)
        assert np.abs(v.values - u.values).max() < 1e-8

    def test_energy_decreases(self, grid2d):
        """Test that replacement lowers the Dirichlet energy."""
        c = constant_coefficients()
        u = ScalarField.from_function(
            grid2d,
            lambda x: 1.0 + x[..., 0] + 0.3 * np.sin(4 * np.pi * x[..., 0]) ** 2,
        )
        region = Region.box(grid2d, (-0.5, 0.0), (0.5, 0.5))
        v = harmonic_replacement(u, c, region)
        before = energy_F(u, c).dirichlet
        after = energy_F(v, c).dirichlet
        assert after < before
        outside = ~region.node_mask()
        assert np.array_equal(v.values[outside], u.values[outside])
        logger.info(f"✓ Dirichlet energy {before:.4f} -> {after:.4f}")


class TestCapacitary:
    """Test capacitary profiles and the coefficient comparison."""

    def test_resolution_floor(self):
        """Test that annuli thinner than 4h are refused."""
        with pytest.raises(ResolutionError):
            capacitary_profile(constant_coefficients(), 0.1, 1 / 16)

    @pytest.mark.parametrize("half", [False, True])
    def test_maximum_principle(self, half):
        """Test that the profile stays between its two levels."""
        profile = capacitary_profile(constant_coefficients(), 0.25, 1 / 32, half=half)
        inner, outer = capacitary_levels(2, 0.25)
        values = np.asarray(profile.u.values)[profile.free]
        assert values.min() >= outer - 1e-10
        assert values.max() <= inner + 1e-10

    def test_relative_bounds(self):
        """Test the (1+eps) comparison of coefficient matrices."""
        points = build_grid(2, [0.5, 0.5], 0.25).coords()
        B = constant_coefficients()
        check_relative_bounds(constant_coefficients(A=1.05), B, 0.1, points)
        with pytest.raises(DomainError):
            check_relative_bounds(constant_coefficients(A=2.0), B, 0.5, points)

    def test_conformal_rate(self):
        """Test a first-order rate for conformal perturbations with a source."""

        def conformal(eps):
            return constant_coefficients(A=(1.0 + eps) * np.eye(2))

        report = schauder_compare(
            conformal,
            constant_coefficients(),
            r=0.25,
            epsilons=(0.04, 0.02, 0.01),
            h=1 / 32,
            source=1.0,
        )
        assert report.distances[0] > report.distances[1] > report.distances[2]
        assert abs(report.sigma - 1.0) < 0.05
        logger.info(f"✓ Schauder rate sigma = {report.sigma:.4f}")

    def test_fit_rate(self):
        """Test the log-log slope helper."""
        assert fit_rate([1.0, 2.0, 4.0], [3.0, 12.0, 48.0]) == pytest.approx(2.0)
        assert fit_rate([1.0], [1.0]) is None


class TestSolveConfig:
    """Test the minimizer configuration."""

    def test_schedule_ends_at_eps_min(self):
        """Test the geometric anneal schedule."""
        grid = build_grid(2, [1.0, 1.0], 1 / 64)
        cfg = SolveConfig(grid, constant_coefficients(), make_dirichlet(2, "zero"))
        assert cfg.schedule() == pytest.approx([0.1, 0.05, 1 / 32])

    @pytest.mark.parametrize(
        "overrides, key",
        [
            ({"eps_min": 0.01}, "schedule.eps_min"),
            ({"restarts": 0}, "schedule.restarts"),
            ({"eps_factor": 1.0}, "schedule.factor"),
        ],
    )
    def test_invalid(self, overrides, key):
        """Test the configuration checks."""
        grid = build_grid(2, [1.0, 1.0], 1 / 16)
        with pytest.raises(ConfigurationError) as info:
            SolveConfig(
                grid, constant_coefficients(), make_dirichlet(2, "zero"), **overrides
            )
        assert info.value.key == key


class TestMinimizer:
    """Test the annealed projected-descent minimizer."""

    def test_stage_energies_nonincreasing(self, small_config):
        """Test that every stage trace is nonincreasing."""
        result = minimize_F(small_config)
        for k in range(small_config.restarts):
            for j in range(len(result.stages)):
                trace = result.stage_trace(k, j)
                assert trace, f"empty trace for restart {k} stage {j}"
                assert np.all(np.diff(trace) <= 0.0)
        logger.info(f"✓ {len(result.trace)} trace rows, all stages nonincreasing")

    def test_result_respects_data(self, small_config):
        """Test nonnegativity and the Dirichlet data of the minimizer."""
        result = minimize_F(small_config)
        grid = small_config.grid
        fixed = dirichlet_mask(grid)
        data = small_config.dirichlet(grid.coords())
        assert np.asarray(result.u.values).min() >= 0.0
        assert np.allclose(result.u.values[fixed], data[fixed])
        summary = result.summary()
        assert summary["energy"] == min(summary["energies"])

    def test_deterministic(self, small_config):
        """Test that equal configurations give identical fields."""
        first = minimize_F(small_config)
        second = minimize_F(small_config)
        assert np.array_equal(first.u.values, second.u.values)
        assert first.energies == second.energies

    def test_negative_data_rejected(self):
        """Test that negative Dirichlet data is refused."""
        grid = build_grid(2, [0.5, 0.5], 1 / 16)
        cfg = SolveConfig(
            grid,
            constant_coefficients(),
            make_dirichlet(2, "constant", {"value": -1.0}),
            max_inner=10,
            restarts=1,
        )
        with pytest.raises(DomainError):
            minimize_F(cfg)


class TestRadialDiagnostics:
    """Test the Laplacian measure and mean growth on the half-plane solution."""

    def test_laplacian_measure(self, half_plane):
        """Test that |div grad u|(B_r) ~ q r across the free boundary."""
        u = half_plane(1.0, 0.0, 1 / 32)
        fit = laplacian_measure(u, constant_coefficients(), (0.0, 0.0), [0.25, 0.5])
        assert all(0.85 <= k <= 1.05 for k in fit.constants)
        assert fit.spread < 1.1

    def test_mean_growth(self, half_plane):
        """Test r^-d int u = r / 3 for u = x_1^+."""
        u = half_plane(1.0, 0.0, 1 / 64)
        fit = mean_growth(u, (0.0, 0.0), [0.25, 0.5])
        assert fit.constants == pytest.approx([1 / 3] * 2, rel=0.03)

    def test_radius_floors(self, half_plane):
        """Test the per-diagnostic radius floors."""
        u = half_plane(1.0, 0.0, 1 / 32)
        with pytest.raises(ResolutionError):
            laplacian_measure(u, constant_coefficients(), (0.0, 0.0), [0.125])
        with pytest.raises(DomainError):
            mean_growth(u, (0.5, 0.0), [0.25])
