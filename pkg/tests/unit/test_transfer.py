"""
Unit tests for the Euclidean envelope transfer.

This module tests:
- Fourier tables of sampled periodic fields
- Gaussian-shell averages against a planar quadrature
- Envelope shifts of the functionals
- The reference defect table
"""

import math

import numpy as np
import pytest

from app.services.torus2d import (
    CircleExpFamily,
    PeriodicGrid,
    TorusExpFamily,
    TriadWaveSystem,
    circle_functionals,
    haar_average,
    torus_functionals,
)
from app.services.transfer import (
    REFERENCE_ROWS,
    EnvelopeFamily,
    ModeTruncationError,
    compare_to_reference,
    defect_report,
    envelope_shift,
    euclidean_functionals,
    find_reference,
    fourier_coefficients,
    gaussian_weighted_average,
    hexagonal_test_fields,
    shell_average,
)


# ============================================================================
# Fixtures
# ============================================================================


@pytest.fixture
def grid128():
    """A 128 x 128 angle grid."""
    return PeriodicGrid.square(128)


@pytest.fixture
def grid256():
    """The default 256 x 256 angle grid."""
    return PeriodicGrid.square(256)


def planar_average(field_name: str, eps: float, radius: float) -> float:
    """Trapezoidal E_R[G] over a square in the plane, for G = phi or |hess phi|^2."""
    waves = TriadWaveSystem.hexagonal()
    half_width = 8.0 * radius
    axis = np.linspace(-half_width, half_width, 641)
    x, y = np.meshgrid(axis, axis, indexing="ij")
    points = np.stack([x, y], axis=-1)
    s = points @ waves.k1
    t = points @ waves.k2
    jet = TorusExpFamily(eps=1.0).log_jet([s, t])
    if field_name == "phi":
        field = jet.u
    else:
        field = np.einsum("...ij,...ij->...", jet.hess, jet.hess)
    weight = np.exp(eps * jet.u - (x**2 + y**2) / (2 * radius**2))
    return float(np.sum(field * weight) / np.sum(weight))


# ============================================================================
# Fourier Table Tests
# ============================================================================


class TestFourierCoefficients:
    """Tests for fourier_coefficients."""

    def test_cosine(self):
        """Test the coefficients of cos(s)."""
        grid = PeriodicGrid.square(16)
        s, _ = grid.angles()
        table = fourier_coefficients(np.cos(s), grid, max_mode=4)
        assert table.coefficient(1, 0) == pytest.approx(0.5, abs=1e-15)
        assert table.coefficient(-1, 0) == pytest.approx(0.5, abs=1e-15)
        assert abs(table.coefficient(0, 0)) < 1e-15
        assert abs(table.coefficient(0, 1)) < 1e-15

    def test_hexagonal_field(self):
        """Test that phi has coefficient 1/2 on the six triad modes."""
        grid = PeriodicGrid.square(16)
        phi = TorusExpFamily(eps=1.0).log_jet(grid.angles()).u
        table = fourier_coefficients(phi, grid, max_mode=4)
        for mode in [(1, 0), (0, 1), (-1, -1), (-1, 0), (0, -1), (1, 1)]:
            assert table.coefficient(*mode) == pytest.approx(0.5, abs=1e-14)
        assert abs(table.coefficient(1, -1)) < 1e-14

    def test_mean_coefficient_is_haar_average(self, grid128):
        """Test that the zero mode equals the Haar average."""
        phi = TorusExpFamily(eps=1.0).log_jet(grid128.angles()).u
        samples = np.exp(0.3 * phi) * phi**2
        table = fourier_coefficients(samples, grid128, max_mode=8)
        assert table.coefficient(0, 0).real == pytest.approx(
            haar_average(samples, grid128), rel=1e-14
        )

    def test_hexagonal_norms(self):
        """Test |xi_m|^2 for the basic triad modes."""
        grid = PeriodicGrid.square(16)
        table = fourier_coefficients(np.zeros(grid.shape), grid, max_mode=2)
        norms = table.norms()
        assert norms[3, 2] == pytest.approx(1.0)
        assert norms[1, 1] == pytest.approx(1.0)
        assert norms[3, 1] == pytest.approx(3.0)

    def test_truncation_too_large(self):
        """Test that 2M >= n is rejected."""
        grid = PeriodicGrid.square(16)
        with pytest.raises(ModeTruncationError):
            fourier_coefficients(np.zeros(grid.shape), grid, max_mode=8)

    def test_mode_outside_table(self):
        """Test that reading beyond M is rejected."""
        grid = PeriodicGrid.square(16)
        table = fourier_coefficients(np.zeros(grid.shape), grid, max_mode=2)
        with pytest.raises(ModeTruncationError):
            table.coefficient(3, 0)


# ============================================================================
# Shell Average Tests
# ============================================================================


class TestShellAverage:
    """Tests for shell_average and gaussian_weighted_average."""

    def test_constant_field(self, grid128):
        """Test that G = 1 averages to 1 for every radius."""
        ones = np.ones(grid128.shape)
        for radius in (0.5, 2.0, 10.0, 1000.0):
            assert gaussian_weighted_average(ones, 0.05, radius, grid128, 16) == pytest.approx(
                1.0, abs=1e-14
            )

    @pytest.mark.parametrize("field_name", ["phi", "hess_sq"])
    def test_planar_quadrature_oracle(self, grid128, field_name):
        """Test the shell formula against a direct planar quadrature at R = 2."""
        fields = hexagonal_test_fields(0.04, grid128)
        got = gaussian_weighted_average(fields[field_name], 0.04, 2.0, grid128, 16)
        assert got == pytest.approx(planar_average(field_name, 0.04, 2.0), rel=1e-6)

    def test_large_radius_recovers_torus_average(self):
        """Test |E_R[G] - E_inf[G]| <= 1e-12 for the five test fields at R = 10."""
        grid = PeriodicGrid.square(64)
        eps = 0.05
        weight = np.exp(eps * TorusExpFamily(eps=1.0).log_jet(grid.angles()).u)
        for name, field in hexagonal_test_fields(eps, grid).items():
            torus_average = haar_average(field * weight, grid) / haar_average(weight, grid)
            shell = shell_average(field, weight, 10.0, grid, 16)
            assert abs(shell - torus_average) <= 1e-12, name


# ============================================================================
# Euclidean Functional Tests
# ============================================================================


class TestEnvelopeShift:
    """Tests for envelope_shift."""

    @pytest.mark.parametrize("dim", [1, 2, 3])
    def test_pure_gaussian(self, dim):
        """Test that the envelope alone gives a ratio of exactly 2."""
        c = 1e-2
        triple = envelope_shift(0.0, 0.0, 0.0, c, dim)
        assert triple.i_val == pytest.approx(dim * c)
        assert triple.q_val == pytest.approx(dim * c**2)
        assert triple.d_val == pytest.approx(2 * dim * c**3)
        assert triple.ratio == pytest.approx(2.0, abs=1e-12)


class TestEuclideanFunctionals:
    """Tests for euclidean_functionals and defect_report."""

    def test_large_radius_is_shifted_torus(self, grid128):
        """Test that R = 1000 differs from the torus triple by the envelope shift only."""
        eps = 0.04
        torus = torus_functionals(TorusExpFamily(eps=eps), grid128)
        euclid = euclidean_functionals(EnvelopeFamily(eps=eps, radius=1000.0), grid128)
        expected = envelope_shift(torus.i_val, torus.q_val, torus.d_val, 1e-6, 2)
        assert euclid.i_val == pytest.approx(expected.i_val, rel=1e-12)
        assert euclid.q_val == pytest.approx(expected.q_val, rel=1e-12)
        assert euclid.d_val == pytest.approx(expected.d_val, rel=1e-12)

    def test_circle_base(self):
        """Test the one-dimensional envelope over the circle family."""
        grid = PeriodicGrid.line(64)
        circle = circle_functionals(CircleExpFamily(eps=0.2), grid)
        euclid = euclidean_functionals(EnvelopeFamily(eps=0.2, radius=500.0, base="circle"), grid)
        expected = envelope_shift(circle.i_val, circle.q_val, circle.d_val, 4e-6, 1)
        assert euclid.i_val == pytest.approx(expected.i_val, rel=1e-12)
        assert euclid.d_val == pytest.approx(expected.d_val, rel=1e-12)

    def test_zero_eps_control_row(self, grid256):
        """Test that eps = 0 is the pure Gaussian with ratio 2."""
        report = defect_report(0.0, 1000.0, grid256)
        assert report.ratio == pytest.approx(2.0, abs=1e-9)
        assert compare_to_reference(report).passed

    @pytest.mark.parametrize("row", REFERENCE_ROWS, ids=lambda r: f"eps={r.eps}")
    def test_reference_rows(self, grid256, row):
        """Test each defect-table row against its published values."""
        report = defect_report(row.eps, 1000.0, grid256)
        comparison = compare_to_reference(report)
        assert comparison.reference == row
        assert comparison.checks == {
            "i": True,
            "q": True,
            "d": True,
            "defect": True,
            "ratio": True,
        }

    @pytest.mark.parametrize("radius", [1000.0, 10000.0])
    @pytest.mark.parametrize("eps", [0.03, 0.04, 0.05, 0.055])
    def test_defect_negative_for_large_radius(self, grid128, eps, radius):
        """Test that the Euclidean defect is negative once R is large enough."""
        report = defect_report(eps, radius, grid128)
        assert report.defect < 0

    def test_small_radius_defect_positive(self, grid128):
        """Test that the envelope curvature dominates the defect at R = 100."""
        assert defect_report(0.03, 100.0, grid128).defect > 0

    def test_monotone_convergence_in_radius(self, grid128):
        """Test that the triple approaches the torus triple as R grows."""
        eps = 0.05
        torus = torus_functionals(TorusExpFamily(eps=eps), grid128)
        gaps = []
        for radius in (5.0, 10.0, 20.0):
            triple = euclidean_functionals(EnvelopeFamily(eps=eps, radius=radius), grid128)
            gaps.append(
                (
                    abs(triple.i_val - torus.i_val),
                    abs(triple.q_val - torus.q_val),
                    abs(triple.d_val - torus.d_val),
                )
            )
        for coarse, fine in zip(gaps, gaps[1:]):
            assert all(f < c for c, f in zip(coarse, fine))


class TestReferenceLookup:
    """Tests for find_reference."""

    def test_known_row(self):
        """Test lookup of a published row."""
        assert find_reference(0.05, 1000.0).i_val == pytest.approx(3.84443e-3)

    def test_other_radius(self):
        """Test that rows exist only at the reference radius."""
        assert find_reference(0.05, 500.0) is None

    def test_unknown_eps(self):
        """Test that unlisted eps values have no reference."""
        assert find_reference(0.07, 1000.0) is None
        assert math.isclose(REFERENCE_ROWS[-1].eps, 0.055)
