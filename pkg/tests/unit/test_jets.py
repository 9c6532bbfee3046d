"""
Unit tests for the log-density jet algebra.

This module tests:
- LogDensityJet construction and symmetry canonicalization
- Functional integrands (j1, j2, j3)
- Conversion between density jets and log-density jets
- Positivity and finiteness errors
"""

import numpy as np
import pytest

from app.config import Settings
from app.services.jets import (
    JetValueError,
    LogDensityJet,
    PositivityViolationError,
    density_jet_from_log,
    hessian_operator_norm,
    integrands_at,
    jet_of_log_from_density_jet,
    symmetrize3,
)
from app.services.torus2d import TorusExpFamily


# ============================================================================
# Fixtures
# ============================================================================


@pytest.fixture
def rng():
    """Deterministic random generator."""
    return np.random.default_rng(Settings(_env_file=None).random_seed)


@pytest.fixture
def random_jets(rng):
    """Twenty random symmetric 3-dimensional jets."""
    dim = 3
    hess = rng.normal(size=(20, dim, dim))
    hess = 0.5 * (hess + np.swapaxes(hess, -1, -2))
    third = symmetrize3(rng.normal(size=(20, dim, dim, dim)))
    return LogDensityJet(
        u=rng.normal(size=20), grad=rng.normal(size=(20, dim)), hess=hess, third=third
    )


# ============================================================================
# LogDensityJet Tests
# ============================================================================


class TestLogDensityJet:
    """Tests for jet construction."""

    def test_zeros_has_requested_shapes(self):
        """Test that the zero jet carries the batch and dimension axes."""
        jet = LogDensityJet.zeros(2, (4, 5))
        assert jet.dim == 2
        assert jet.batch_shape == (4, 5)
        assert jet.third.shape == (4, 5, 2, 2, 2)

    def test_asymmetric_hessian_rejected(self):
        """Test that a non-symmetric Hessian is rejected."""
        with pytest.raises(JetValueError, match="not symmetric"):
            LogDensityJet(
                u=0.0,
                grad=np.zeros(2),
                hess=np.array([[1.0, 2.0], [0.0, 1.0]]),
                third=np.zeros((2, 2, 2)),
            )

    def test_asymmetric_third_rejected(self):
        """Test that a third tensor without full symmetry is rejected."""
        third = np.zeros((2, 2, 2))
        third[0, 0, 1] = 1.0
        with pytest.raises(JetValueError, match="fully symmetric"):
            LogDensityJet(u=0.0, grad=np.zeros(2), hess=np.zeros((2, 2)), third=third)

    def test_shape_mismatch_rejected(self):
        """Test that mismatched tensor shapes are rejected."""
        with pytest.raises(JetValueError):
            LogDensityJet(u=0.0, grad=np.zeros(2), hess=np.zeros((3, 3)), third=np.zeros((2, 2, 2)))

    def test_dimension_limit(self):
        """Test that dense layouts beyond dimension 8 are rejected."""
        with pytest.raises(JetValueError, match="outside"):
            LogDensityJet.zeros(9)

    def test_scaled_and_added(self, random_jets):
        """Test linear operations on jets."""
        doubled = random_jets + random_jets
        np.testing.assert_allclose(doubled.hess, random_jets.scaled(2.0).hess)
        np.testing.assert_allclose(doubled.third, 2.0 * random_jets.third)


# ============================================================================
# Integrand Tests
# ============================================================================


class TestIntegrands:
    """Tests for integrands_at."""

    def test_flat_jet_gives_zero(self):
        """Test that a flat log-density has vanishing integrands."""
        values = integrands_at(LogDensityJet.zeros(2))
        assert values.j1 == 0.0
        assert values.j2 == 0.0
        assert values.j3 == 0.0

    @pytest.mark.parametrize("sigma", [0.5, 1.0, 3.0])
    def test_gaussian_jet(self, sigma):
        """Test the constant-Hessian Gaussian case in one dimension."""
        jet = LogDensityJet(
            u=0.0,
            grad=np.zeros(1),
            hess=np.array([[-(sigma**-2)]]),
            third=np.zeros((1, 1, 1)),
        )
        values = integrands_at(jet)
        assert values.j1 == pytest.approx(sigma**-2, rel=1e-15)
        assert values.j2 == pytest.approx(sigma**-4, rel=1e-15)
        assert values.j3 == pytest.approx(2.0 * sigma**-6, rel=1e-15)

    def test_hexagonal_origin(self):
        """Test the jet of 0.1 * phi at the origin: H = 0.15 I_2, third = 0."""
        family = TorusExpFamily(eps=0.1)
        jet = family.log_jet([np.array(0.0), np.array(0.0)])
        values = integrands_at(jet)
        assert float(values.j1) == pytest.approx(0.3, abs=1e-15)
        assert float(values.j2) == pytest.approx(0.045, abs=1e-15)
        assert float(values.j3) == pytest.approx(0.0135, abs=1e-15)

    def test_non_finite_rejected(self):
        """Test that NaN entries are rejected."""
        jet = LogDensityJet(
            u=0.0,
            grad=np.array([np.nan, 0.0]),
            hess=np.zeros((2, 2)),
            third=np.zeros((2, 2, 2)),
        )
        with pytest.raises(JetValueError, match="Non-finite"):
            integrands_at(jet)

    def test_j3_invariant_under_index_permutation(self, random_jets):
        """Test that permuting the indices of the third tensor leaves j3 unchanged."""
        base = integrands_at(random_jets).j3
        for axes in [(0, 2, 1, 3), (0, 3, 2, 1), (0, 2, 3, 1)]:
            permuted = LogDensityJet(
                u=random_jets.u,
                grad=random_jets.grad,
                hess=random_jets.hess,
                third=np.transpose(random_jets.third, axes),
            )
            np.testing.assert_allclose(integrands_at(permuted).j3, base, rtol=1e-12, atol=1e-12)

    def test_cauchy_schwarz_and_positivity(self, random_jets):
        """Test j2 >= 0 and j1^2 <= dim * j2 for every jet."""
        values = integrands_at(random_jets)
        assert np.all(values.j2 >= 0)
        assert np.all(values.j1**2 <= random_jets.dim * values.j2 * (1 + 1e-12))

    def test_j3_lower_bound(self, random_jets):
        """Test the sanity bound j3 >= -2 dim |H|_op^3."""
        values = integrands_at(random_jets)
        bound = -2.0 * random_jets.dim * hessian_operator_norm(random_jets) ** 3
        assert np.all(values.j3 >= bound - 1e-12)


# ============================================================================
# Density Jet Conversion Tests
# ============================================================================


class TestDensityJetConversion:
    """Tests for jet_of_log_from_density_jet and density_jet_from_log."""

    def test_constant_density(self):
        """Test that a constant density has a zero log-jet apart from the value."""
        jet = jet_of_log_from_density_jet(
            np.full(3, 2.5), np.zeros((3, 2)), np.zeros((3, 2, 2)), np.zeros((3, 2, 2, 2))
        )
        np.testing.assert_allclose(jet.u, np.log(2.5))
        assert np.all(jet.grad == 0)
        assert np.all(jet.hess == 0)
        assert np.all(jet.third == 0)

    def test_standard_gaussian_at_one(self):
        """Test the log-derivatives of exp(-x^2 / 2) at x = 1."""
        f = np.exp(-0.5)
        jet = jet_of_log_from_density_jet(
            np.array(f),
            np.array([-f]),
            np.array([[0.0]]),
            np.array([[[2.0 * f]]]),
        )
        assert float(jet.grad[0]) == pytest.approx(-1.0, abs=1e-15)
        assert float(jet.hess[0, 0]) == pytest.approx(-1.0, abs=1e-15)
        assert float(jet.third[0, 0, 0]) == pytest.approx(0.0, abs=1e-15)

    def test_round_trip_on_hexagonal_field(self, rng):
        """Test that exponentiating and taking logs reproduces the jet of eps * phi."""
        s, t = rng.uniform(0, 2 * np.pi, size=(2, 100))
        original = TorusExpFamily(eps=0.3).log_jet([s, t])
        recovered = jet_of_log_from_density_jet(*density_jet_from_log(original))
        for name in ("u", "grad", "hess", "third"):
            np.testing.assert_allclose(
                getattr(recovered, name), getattr(original, name), rtol=0, atol=1e-12
            )

    def test_non_positive_density_names_point(self):
        """Test that an underflowing density reports the offending abscissa."""
        points = np.array([-1.0, 0.0, 1.0])
        f = np.array([1.0, 0.0, 1.0])
        with pytest.raises(PositivityViolationError, match="x="):
            jet_of_log_from_density_jet(
                f, np.zeros((3, 1)), np.zeros((3, 1, 1)), np.zeros((3, 1, 1, 1)), points=points
            )

    def test_density_jet_log_scale(self):
        """Test that the log scale multiplies every density derivative."""
        jet = LogDensityJet(
            u=np.array(0.0),
            grad=np.array([1.0]),
            hess=np.array([[0.0]]),
            third=np.array([[[0.0]]]),
        )
        f, grad_f, hess_f, third_f = density_jet_from_log(jet, log_scale=np.log(3.0))
        assert float(f) == pytest.approx(3.0)
        assert float(grad_f[0]) == pytest.approx(3.0)
        assert float(hess_f[0, 0]) == pytest.approx(3.0)
        assert float(third_f[0, 0, 0]) == pytest.approx(3.0)
