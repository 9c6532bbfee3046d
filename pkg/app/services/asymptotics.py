"""
Series coefficients of the functionals in the perturbation size eps.

Closed forms are exact rationals. Fitted coefficients come from least squares on a
small eps window; by default each eps is paired with -eps, which separates even
and odd powers so that the quintic term cannot leak into the cubic coefficient.
"""

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from app.schemas import ExpansionRecord, FunctionalTriple
from app.services.workers import parallel_map

logger = logging.getLogger(__name__)

Evaluator = Callable[[float], FunctionalTriple]

MAX_CONDITION = 1e8
QUANTITIES = ("i", "q", "d")


class FitConditioningError(Exception):
    """Raised when a coefficient fit is ill-conditioned or underdetermined."""

    pass


class UndefinedRatioError(Exception):
    """Raised when the ratio I*D/Q^2 is undefined (Q = 0) at a sample point."""

    pass


# ============================================================================
# Closed forms
# ============================================================================


@dataclass(frozen=True)
class ClosedFormExpansion:
    """Exact quadratic and cubic coefficients of I, Q, D plus the derived defect and slope."""

    family: str
    records: dict[str, ExpansionRecord]
    defect: ExpansionRecord
    slope: Fraction


def closed_form_expansion(
    family: str,
    a: tuple[Fraction, Fraction],
    q: tuple[Fraction, Fraction],
    d: tuple[Fraction, Fraction],
) -> ClosedFormExpansion:
    """
    Build closed-form records from (quadratic, cubic) pairs of I, Q and D.

    With equal quadratic coefficients the eps^4 term of I*D - Q^2 cancels and the
    leading defect coefficient is a2 d3 + a3 d2 - 2 q2 q3. The ratio I*D/Q^2 is
    1 + slope * eps + O(eps^2) with slope = (a3 + d3 - 2 q3) / a2.
    """
    records = {
        name: ExpansionRecord(
            family=family, quantity=name, coefficients={2: pair[0], 3: pair[1]}, source="closed-form"
        )
        for name, pair in zip(QUANTITIES, (a, q, d))
    }
    defect = a[0] * d[1] + a[1] * d[0] - 2 * q[0] * q[1]
    slope = (a[1] + d[1] - 2 * q[1]) / a[0] if a[0] else Fraction(0)
    return ClosedFormExpansion(
        family=family,
        records=records,
        defect=ExpansionRecord(
            family=family, quantity="defect", coefficients={5: defect}, source="closed-form"
        ),
        slope=slope,
    )


def closed_form_torus() -> ClosedFormExpansion:
    """I = 3/2 e^2 + 3/4 e^3, Q = 3/2 e^2 + 3/8 e^3, D = 3/2 e^2 - 3/16 e^3; defect -9/32 e^5."""
    s = Fraction(3, 2)
    return closed_form_expansion(
        "torus", (s, Fraction(3, 4)), (s, Fraction(3, 8)), (s, Fraction(-3, 16))
    )


def closed_form_circle() -> ClosedFormExpansion:
    """I = Q = D = e^2 / 2 + O(e^4): no cubic terms, zero slope."""
    half = Fraction(1, 2)
    return closed_form_expansion("circle", (half, Fraction(0)), (half, Fraction(0)), (half, Fraction(0)))


# ============================================================================
# Numerical fits
# ============================================================================


def _quantity(triple: FunctionalTriple, name: str) -> float:
    if name == "defect":
        return triple.defect
    return {"i": triple.i_val, "q": triple.q_val, "d": triple.d_val}[name]


def sample_evaluator(
    evaluator: Evaluator, eps_values: Sequence[float], workers: int = 1
) -> list[FunctionalTriple]:
    """Evaluate at every eps, in order."""
    return parallel_map(evaluator, list(eps_values), workers=workers)


def fit_series(
    eps: np.ndarray,
    values: np.ndarray,
    powers: Sequence[int],
    nuisance: Sequence[int] = (),
) -> tuple[dict[int, float], float]:
    """
    Least-squares fit of values ~ sum_p c_p eps^p.

    The data are divided by eps^p_min and the design uses (eps / max|eps|)^k columns.

    Returns:
        Tuple (coefficients of `powers`, relative RMS residual)

    Raises:
        FitConditioningError: If the design is underdetermined or its condition number exceeds 1e8
    """
    all_powers = sorted(set(powers) | set(nuisance))
    if len(np.unique(eps)) < len(all_powers):
        raise FitConditioningError(
            f"{len(np.unique(eps))} distinct eps values cannot determine {len(all_powers)} powers"
        )
    p_min = all_powers[0]
    scale = float(np.max(np.abs(eps)))
    x = eps / scale
    design = np.stack([x ** (p - p_min) for p in all_powers], axis=1)
    cond = np.linalg.cond(design)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise FitConditioningError(
            f"Fit design has condition number {cond:.3e} > {MAX_CONDITION:.0e}; "
            f"choose a different eps window"
        )
    target = values / eps**p_min
    solution, *_ = np.linalg.lstsq(design, target, rcond=None)
    fitted = design @ solution
    size = float(np.max(np.abs(target)))
    residual = float(np.sqrt(np.mean((fitted - target) ** 2))) / size if size > 0 else 0.0
    coeffs = {p: float(solution[k] / scale ** (p - p_min)) for k, p in enumerate(all_powers)}
    return {p: coeffs[p] for p in powers}, residual


def fit_coefficients(
    evaluator: Evaluator,
    powers: Sequence[int] = (2, 3),
    eps_set: Sequence[float] = (0.01, 0.02, 0.04),
    quantities: Sequence[str] = QUANTITIES,
    paired: bool = True,
    nuisance: Optional[Sequence[int]] = None,
    family: str = "custom",
    workers: int = 1,
) -> dict[str, ExpansionRecord]:
    """
    Fit series coefficients of the requested quantities.

    Args:
        evaluator: Callable eps -> FunctionalTriple
        powers: Powers of eps whose coefficients are reported
        eps_set: Fit window, at least 3 distinct values in (0, 0.1]
        quantities: Any of 'i', 'q', 'd', 'defect'
        paired: Also evaluate at -eps for every eps
        nuisance: Extra powers absorbed by the fit (default: the next two powers
            when paired, the next one otherwise)
        family: Family identifier stored in the records
        workers: Parallel evaluator calls

    Returns:
        Dict quantity -> fitted ExpansionRecord

    Raises:
        FitConditioningError: For an invalid window or an ill-conditioned fit
    """
    window = sorted(set(float(e) for e in eps_set))
    if len(window) < 3 or window[0] <= 0 or window[-1] > 0.1:
        raise FitConditioningError(f"Fit window {list(eps_set)} needs 3 distinct values in (0, 0.1]")
    if nuisance is None:
        top = max(powers)
        nuisance = (top + 1, top + 2) if paired else (top + 1,)

    points = window + [-e for e in window] if paired else window
    triples = sample_evaluator(evaluator, points, workers=workers)
    eps = np.array(points)

    records = {}
    for name in quantities:
        values = np.array([_quantity(t, name) for t in triples])
        coeffs, residual = fit_series(eps, values, powers, nuisance)
        records[name] = ExpansionRecord(
            family=family,
            quantity=name,
            coefficients=coeffs,
            source="fitted",
            fit_window=window,
            residual=residual,
        )
        logger.info(f"Fitted {family}/{name}: {coeffs} (residual {residual:.2e})")
    return records


# ============================================================================
# Quotient slope
# ============================================================================


def richardson_extrapolate(base_values: Sequence[float], p: int, r: float = 2.0) -> float:
    """
    Richardson extrapolation of approximations whose step shrinks by r per entry.

    Each level removes one more power of the step, starting at p.

    Raises:
        ValueError: If fewer than two values are given
    """
    n = len(base_values)
    if n < 2:
        raise ValueError("richardson_extrapolate requires at least two base values.")
    vals = [float(v) for v in base_values]
    for j in range(1, n):
        factor = r ** (p * j)
        for k in range(n - 1, j - 1, -1):
            vals[k] = (factor * vals[k] - vals[k - 1]) / (factor - 1.0)
    return vals[-1]


def _common_ratio(steps: Sequence[float]) -> Optional[float]:
    ratios = [a / b for a, b in zip(steps, steps[1:])]
    if ratios and all(abs(q - ratios[0]) <= 1e-9 * ratios[0] for q in ratios) and ratios[0] > 1:
        return ratios[0]
    return None


def polynomial_limit(steps: Sequence[float], values: Sequence[float]) -> float:
    """Value at zero of the interpolating polynomial through (step, value)."""
    x = np.asarray(steps, dtype=float) / max(steps)
    vandermonde = np.vander(x, increasing=True)
    return float(np.linalg.solve(vandermonde, np.asarray(values, dtype=float))[0])


def quotient_slope(
    evaluator: Evaluator, eps_set: Sequence[float] = (0.01, 0.02, 0.04), workers: int = 1
) -> float:
    """
    Slope of I*D/Q^2 = 1 + slope * eps + O(eps^2) at eps = 0.

    (ratio(eps) - 1) / eps is extrapolated to eps -> 0: by Richardson when the
    window is geometric, by polynomial interpolation otherwise.

    Raises:
        UndefinedRatioError: If Q = 0 at some eps
    """
    steps = sorted(set(float(e) for e in eps_set), reverse=True)
    if len(steps) < 2 or steps[-1] <= 0:
        raise FitConditioningError(f"Slope window {list(eps_set)} needs 2 positive values")
    triples = sample_evaluator(evaluator, steps, workers=workers)
    values = []
    for eps, triple in zip(steps, triples):
        if triple.ratio is None:
            raise UndefinedRatioError(f"Ratio undefined at eps={eps} (Q={triple.q_val})")
        values.append((triple.ratio - 1.0) / eps)

    r = _common_ratio(steps)
    slope = richardson_extrapolate(values, p=1, r=r) if r else polynomial_limit(steps, values)
    logger.info(f"Quotient slope over {steps}: {slope:.6f}")
    return slope
