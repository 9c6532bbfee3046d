"""
Unit tests for the heat-flow evolution.

This module tests:
- Initial spectral densities and mass conservation
- The semigroup property and long-time flattening
- Spectral synthesis against a Gauss-Hermite convolution
- The identities I' = -Q and I'' = D
- The sign of Phi(t) = I D - Q^2 along the flow
"""

import numpy as np
import pytest
from numpy.polynomial.hermite_e import hermegauss

from app.services.flow import (
    evolve,
    evolve_further,
    flow_profile,
    functionals_at_time,
    initial_density,
    reconstruct,
    verify_identities,
)
from app.services.torus2d import (
    GridConfigurationError,
    PeriodicGrid,
    TorusExpFamily,
    haar_average,
    torus_functionals,
)


# ============================================================================
# Fixtures
# ============================================================================


@pytest.fixture
def family():
    """Torus family at eps = 0.05."""
    return TorusExpFamily(eps=0.05)


@pytest.fixture
def grid():
    """The default 128 x 128 flow grid."""
    return PeriodicGrid.square(128)


def convolved_density(family: TorusExpFamily, grid: PeriodicGrid, t: float, points: list) -> list:
    """E[f(x + sqrt(t) Z)] for a standard 2-D normal Z, by Gauss-Hermite quadrature."""
    nodes, weights = hermegauss(40)
    weights = weights / np.sqrt(2.0 * np.pi)
    z = haar_average(np.exp(family.log_jet(grid.angles()).u), grid)
    waves = family.waves
    zx, zy = np.meshgrid(nodes, nodes, indexing="ij")
    w = np.outer(weights, weights)
    values = []
    for s, t_angle in points:
        x = waves.point(s, t_angle)
        shifted = np.stack([x[0] + np.sqrt(t) * zx, x[1] + np.sqrt(t) * zy], axis=-1)
        u = family.log_jet([shifted @ waves.k1, shifted @ waves.k2]).u
        values.append(float(np.sum(w * np.exp(u))) / z)
    return values


# ============================================================================
# Spectral Density Tests
# ============================================================================


class TestSpectralDensity:
    """Tests for initial_density, evolve and reconstruct."""

    def test_initial_functionals_match_torus(self, family, grid):
        """Test that t = 0 reproduces the direct torus quadrature."""
        spectral = functionals_at_time(initial_density(family, grid=grid), grid)
        direct = torus_functionals(family, grid)
        assert spectral.i_val == pytest.approx(direct.i_val, rel=1e-10)
        assert spectral.q_val == pytest.approx(direct.q_val, rel=1e-10)
        assert spectral.d_val == pytest.approx(direct.d_val, rel=1e-10)

    @pytest.mark.parametrize("t", [0.0, 0.1, 1.0, 20.0])
    def test_mass_conserved(self, family, grid, t):
        """Test unit mass at every time."""
        assert evolve(family, t, grid).mass == pytest.approx(1.0, abs=1e-15)

    def test_semigroup(self, family, grid):
        """Test P_0.02 P_0.03 = P_0.05 on the coefficients."""
        two_steps = evolve_further(evolve(family, 0.03, grid), 0.02)
        one_step = evolve(family, 0.05, grid)
        assert two_steps.time == pytest.approx(0.05)
        assert np.max(np.abs(two_steps.table.coeffs - one_step.table.coeffs)) <= 1e-14

    def test_long_time_flattening(self, family, grid):
        """Test that I(20) has decayed below 1e-8 of I(0)."""
        start = functionals_at_time(evolve(family, 0.0, grid), grid)
        late = functionals_at_time(evolve(family, 20.0, grid), grid)
        assert late.i_val < 1e-8 * start.i_val

    def test_matches_gauss_hermite_convolution(self, family, grid):
        """Test f_t against a direct Gaussian convolution at t = 0.1."""
        f, _, _, _ = reconstruct(evolve(family, 0.1, grid), grid)
        indices = [(0, 0), (5, 17), (64, 64), (100, 3)]
        angles = [2 * np.pi * np.array(ij) / 128 for ij in indices]
        expected = convolved_density(family, grid, 0.1, angles)
        for (a, b), value in zip(indices, expected):
            assert f[a, b] == pytest.approx(value, rel=1e-10)

    def test_negative_time_rejected(self, family, grid):
        """Test that the flow cannot be evaluated at negative time."""
        with pytest.raises(ValueError):
            evolve(family, -0.1, grid)
        with pytest.raises(ValueError):
            evolve_further(evolve(family, 0.1, grid), -0.05)

    def test_grid_too_coarse(self, family, grid):
        """Test that synthesis needs a grid finer than the truncation."""
        density = initial_density(family, grid=grid)
        with pytest.raises(GridConfigurationError):
            reconstruct(density, PeriodicGrid.square(32))


# ============================================================================
# Identity and Defect Tests
# ============================================================================


class TestFlowIdentities:
    """Tests for verify_identities and flow_profile."""

    def test_identities_hold(self, family, grid):
        """Test the de Bruijn-type identities with second-order convergence."""
        report = verify_identities(family, [0.02, 0.05, 0.1], dt=1e-3, grid=grid)
        assert report.max_residual_first <= 1e-6
        assert report.max_residual_second <= 1e-6
        for check in report.checks:
            if check.residual_first > 1e-12:
                assert 3.5 <= check.order_first <= 4.5
            if check.residual_second > 1e-12:
                assert 3.5 <= check.order_second <= 4.5

    def test_phi_negative_and_fisher_decreasing(self, family, grid):
        """Test Phi(t) < 0 and a strictly decreasing I on eleven times in [0, 0.1]."""
        times = [0.01 * k for k in range(11)]
        profile = flow_profile(family, times, grid)
        assert all(phi < 0 for phi in profile.phi_defect)
        fisher = [triple.i_val for triple in profile.triples]
        assert all(b < a for a, b in zip(fisher, fisher[1:]))

    def test_profile_rows(self, family, grid):
        """Test the report rows of a flow profile."""
        rows = flow_profile(family, [0.0, 0.05], grid).rows()
        assert [row["t"] for row in rows] == [0.0, 0.05]
        assert set(rows[0]) == {"t", "I", "Q", "D", "defect", "ratio"}
        assert rows[0]["defect"] == pytest.approx(
            rows[0]["I"] * rows[0]["D"] - rows[0]["Q"] ** 2, rel=1e-12
        )

    def test_workers_keep_time_order(self, family, grid):
        """Test that concurrent evaluation reproduces the serial report and profile."""
        times = [0.02, 0.05]
        serial = verify_identities(family, times, dt=1e-3, grid=grid)
        threaded = verify_identities(family, times, dt=1e-3, grid=grid, workers=2)
        assert [c.t for c in threaded.checks] == times
        assert threaded == serial
        profile = flow_profile(family, times, grid, workers=2)
        assert profile.triples == [check.triple for check in serial.checks]
