"""
Unit tests for series coefficients and the quotient slope.

This module tests:
- Closed-form expansions of the torus and circle families
- Least-squares coefficient fits on synthetic and real evaluators, and their convergence
- Richardson and polynomial extrapolation
- Slope of the ratio I*D/Q^2 at eps = 0
"""

from fractions import Fraction

import numpy as np
import pytest

from app.schemas import FunctionalTriple
from app.services.asymptotics import (
    FitConditioningError,
    UndefinedRatioError,
    closed_form_circle,
    closed_form_torus,
    fit_coefficients,
    fit_series,
    polynomial_limit,
    quotient_slope,
    richardson_extrapolate,
    sample_evaluator,
)
from app.services.simplex import SimplexExpFamily, simplex_functionals
from app.services.torus2d import (
    CircleExpFamily,
    PeriodicGrid,
    TorusExpFamily,
    circle_functionals,
    torus_functionals,
)


# ============================================================================
# Fixtures
# ============================================================================


@pytest.fixture
def torus_evaluator():
    """eps -> torus triple on a 64 x 64 grid."""
    grid = PeriodicGrid.square(64)
    return lambda eps: torus_functionals(TorusExpFamily(eps=eps), grid)


@pytest.fixture
def circle_evaluator():
    """eps -> circle triple on 64 nodes."""
    grid = PeriodicGrid.line(64)
    return lambda eps: circle_functionals(CircleExpFamily(eps=eps), grid)


@pytest.fixture
def polynomial_evaluator():
    """Synthetic triples with known series coefficients."""

    def evaluate(eps: float) -> FunctionalTriple:
        return FunctionalTriple(
            i_val=1.5 * eps**2 + 0.75 * eps**3 + 0.2 * eps**4 - 0.1 * eps**5,
            q_val=1.5 * eps**2 + 0.375 * eps**3 - 0.3 * eps**4,
            d_val=1.5 * eps**2 - 0.1875 * eps**3 + 0.05 * eps**5,
        )

    return evaluate


# ============================================================================
# Closed Form Tests
# ============================================================================


class TestClosedForms:
    """Tests for closed_form_torus and closed_form_circle."""

    def test_torus(self):
        """Test the torus defect -9/32 and slope -1/8."""
        closed = closed_form_torus()
        assert closed.defect.coefficients[5] == Fraction(-9, 32)
        assert closed.slope == Fraction(-1, 8)
        assert closed.records["q"].cubic == pytest.approx(0.375)

    def test_circle(self):
        """Test that the circle has no cubic terms and zero slope."""
        closed = closed_form_circle()
        assert closed.defect.coefficients[5] == 0
        assert closed.slope == 0
        assert all(record.cubic == 0 for record in closed.records.values())


# ============================================================================
# Fit Tests
# ============================================================================


class TestFitSeries:
    """Tests for fit_series and fit_coefficients."""

    def test_zero_evaluator(self):
        """Test that a flat family fits to zero with zero residual."""
        records = fit_coefficients(lambda eps: FunctionalTriple.zero())
        for record in records.values():
            assert record.coefficient(2) == 0.0
            assert record.coefficient(3) == 0.0
            assert record.residual == 0.0

    def test_exact_polynomial(self, polynomial_evaluator):
        """Test exact recovery when the nuisance powers cover the series."""
        records = fit_coefficients(polynomial_evaluator, family="synthetic")
        assert records["i"].coefficient(2) == pytest.approx(1.5, rel=1e-9)
        assert records["i"].coefficient(3) == pytest.approx(0.75, rel=1e-9)
        assert records["q"].coefficient(3) == pytest.approx(0.375, rel=1e-9)
        assert records["d"].coefficient(3) == pytest.approx(-0.1875, rel=1e-9)
        assert records["d"].source == "fitted"
        assert records["d"].fit_window == [0.01, 0.02, 0.04]

    def test_unpaired_fit(self, polynomial_evaluator):
        """Test an unpaired fit with a four-point window."""
        records = fit_coefficients(
            polynomial_evaluator,
            eps_set=(0.01, 0.02, 0.03, 0.04),
            paired=False,
            nuisance=(4, 5),
        )
        assert records["q"].coefficient(2) == pytest.approx(1.5, rel=1e-8)

    def test_window_too_small(self, polynomial_evaluator):
        """Test that fewer than three window values are rejected."""
        with pytest.raises(FitConditioningError):
            fit_coefficients(polynomial_evaluator, eps_set=(0.01, 0.02))

    def test_window_out_of_range(self, polynomial_evaluator):
        """Test that window values above 0.1 are rejected."""
        with pytest.raises(FitConditioningError):
            fit_coefficients(polynomial_evaluator, eps_set=(0.05, 0.1, 0.2))

    def test_ill_conditioned_design(self):
        """Test that nearly coincident abscissae trip the condition limit."""
        eps = np.array([0.01, 0.010001, 0.010002, 0.010003])
        with pytest.raises(FitConditioningError, match="condition number"):
            fit_series(eps, eps**2, powers=(2, 3), nuisance=(4, 5))

    def test_torus_cubic_coefficients(self, torus_evaluator):
        """Test the fitted torus cubic coefficients against 3/4, 3/8 and -3/16."""
        records = fit_coefficients(torus_evaluator, family="torus")
        closed = closed_form_torus()
        for name in ("i", "q", "d"):
            assert records[name].agrees_with(closed.records[name], rel_tol=1e-2), name

    def test_torus_defect_coefficient(self, torus_evaluator):
        """Test the fitted eps^5 defect coefficient against -9/32."""
        records = fit_coefficients(torus_evaluator, (5, 6), quantities=("defect",))
        assert records["defect"].coefficient(5) == pytest.approx(-9 / 32, rel=1e-2)

    def test_fit_converges_as_window_shrinks(self, torus_evaluator):
        """Test that halving the fit window moves the cubic coefficients toward the closed forms."""
        closed = closed_form_torus()

        def total_error(window):
            records = fit_coefficients(torus_evaluator, eps_set=window)
            return sum(
                abs(records[name].cubic - closed.records[name].cubic) for name in ("i", "q", "d")
            )

        wide = total_error((0.02, 0.04, 0.08))
        narrow = total_error((0.01, 0.02, 0.04))
        assert narrow < wide

    def test_parallel_sampling_keeps_order(self, polynomial_evaluator):
        """Test that threaded sampling returns triples in input order."""
        eps = [0.01, 0.02, 0.03]
        serial = sample_evaluator(polynomial_evaluator, eps)
        threaded = sample_evaluator(polynomial_evaluator, eps, workers=2)
        assert serial == threaded


# ============================================================================
# Extrapolation and Slope Tests
# ============================================================================


class TestExtrapolation:
    """Tests for richardson_extrapolate and polynomial_limit."""

    def test_richardson_removes_linear_and_quadratic(self):
        """Test exact limits for a quadratic in the step."""
        steps = [0.1, 0.05, 0.025]
        values = [1 + 2 * h + 3 * h**2 for h in steps]
        assert richardson_extrapolate(values, p=1, r=2.0) == pytest.approx(1.0, abs=1e-12)

    def test_richardson_needs_two_values(self):
        """Test that a single value is rejected."""
        with pytest.raises(ValueError):
            richardson_extrapolate([1.0], p=1)

    def test_polynomial_limit(self):
        """Test the interpolation limit on a non-geometric window."""
        steps = [0.04, 0.03, 0.01]
        values = [2 - h + h**2 for h in steps]
        assert polynomial_limit(steps, values) == pytest.approx(2.0, abs=1e-12)


class TestQuotientSlope:
    """Tests for quotient_slope."""

    def test_torus_slope(self, torus_evaluator):
        """Test the torus slope -1/8."""
        assert quotient_slope(torus_evaluator) == pytest.approx(-0.125, rel=2e-2)

    def test_circle_slope(self, circle_evaluator):
        """Test that the circle slope vanishes."""
        assert abs(quotient_slope(circle_evaluator)) <= 5e-3

    def test_simplex_slope(self):
        """Test the d = 3 simplex slope -1/4."""
        slope = quotient_slope(lambda eps: simplex_functionals(SimplexExpFamily.of_dimension(eps, 3)))
        assert slope == pytest.approx(-0.25, rel=2e-2)

    def test_undefined_ratio(self):
        """Test that Q = 0 makes the slope undefined."""
        with pytest.raises(UndefinedRatioError):
            quotient_slope(lambda eps: FunctionalTriple.zero())
