"""
Composition calculus for the three functionals.

Products add triples, Gaussian blocks have closed forms, dilations scale the
functionals by r^-2, r^-4 and r^-6, and well separated mixtures are asymptotically
additive. One-dimensional density models are integrated directly through their
log-density jets.
"""

import logging
import math
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.integrate import trapezoid
from scipy.special import logsumexp

from app.schemas import FunctionalTriple
from app.services.jets import (
    LogDensityJet,
    density_jet_from_log,
    integrands_at,
    jet_of_log_from_density_jet,
)

logger = logging.getLogger(__name__)

# Half-width of the background quadrature window and of the bump window in units of r.
WINDOW_HALF_WIDTH = 10.0


class CompositionError(Exception):
    """Raised for invalid composition parameters or an exhausted threshold search."""

    pass


# ============================================================================
# One-dimensional density models
# ============================================================================


class LineModel(BaseModel):
    """A smooth positive density on the real line given by its log-density jet."""

    model_config = ConfigDict(frozen=True)

    def log_jet(self, x: np.ndarray) -> LogDensityJet:
        """Jet of the (possibly unnormalized) log-density at the points x."""
        raise NotImplementedError

    def support(self) -> tuple[float, float]:
        """Interval carrying all but a negligible part of the mass."""
        raise NotImplementedError

    def log_normalizer(self, nodes: int = 4096) -> float:
        """log of the integral of exp(u), by quadrature over the support."""
        a, b = self.support()
        x = np.linspace(a, b, nodes)
        u = self.log_jet(x).u
        return float(logsumexp(u) + math.log((b - a) / (nodes - 1)))


def _line_jet(u, grad, hess, third) -> LogDensityJet:
    return LogDensityJet(
        u=np.asarray(u, dtype=float),
        grad=np.asarray(grad, dtype=float)[..., None],
        hess=np.asarray(hess, dtype=float)[..., None, None],
        third=np.asarray(third, dtype=float)[..., None, None, None],
    )


class GaussianLine(LineModel):
    """Normalized Gaussian N(center, sigma^2)."""

    sigma: float = Field(default=1.0, gt=0)
    center: float = 0.0

    def log_jet(self, x: np.ndarray) -> LogDensityJet:
        z = (np.asarray(x, dtype=float) - self.center) / self.sigma
        u = -0.5 * z**2 - math.log(self.sigma * math.sqrt(2.0 * math.pi))
        return _line_jet(
            u, -z / self.sigma, np.full_like(z, -1.0 / self.sigma**2), np.zeros_like(z)
        )

    def support(self) -> tuple[float, float]:
        return (self.center - 12.0 * self.sigma, self.center + 12.0 * self.sigma)

    def log_normalizer(self, nodes: int = 4096) -> float:
        return 0.0


class CosineEnvelopeLine(LineModel):
    """exp(eps cos x - x^2 / (2 radius^2)) on the line, unnormalized."""

    eps: float = Field(..., allow_inf_nan=False)
    radius: float = Field(..., gt=0)

    def log_jet(self, x: np.ndarray) -> LogDensityJet:
        x = np.asarray(x, dtype=float)
        c = 1.0 / self.radius**2
        return _line_jet(
            self.eps * np.cos(x) - 0.5 * c * x**2,
            -self.eps * np.sin(x) - c * x,
            -self.eps * np.cos(x) - c,
            self.eps * np.sin(x),
        )

    def support(self) -> tuple[float, float]:
        return (-12.0 * self.radius, 12.0 * self.radius)


class RescaledLine(LineModel):
    """Dilation g_r(x) = g(x / r) / r of a base model."""

    base: LineModel
    r: float = Field(..., gt=0)

    def log_jet(self, x: np.ndarray) -> LogDensityJet:
        jet = self.base.log_jet(np.asarray(x, dtype=float) / self.r)
        return LogDensityJet(
            u=jet.u - math.log(self.r),
            grad=jet.grad / self.r,
            hess=jet.hess / self.r**2,
            third=jet.third / self.r**3,
        )

    def support(self) -> tuple[float, float]:
        a, b = self.base.support()
        return (a * self.r, b * self.r)

    def log_normalizer(self, nodes: int = 4096) -> float:
        return self.base.log_normalizer(nodes)


def _weighted_triple(jets: Sequence[LogDensityJet], xs: Sequence[np.ndarray]) -> FunctionalTriple:
    """Trapezoid weighted averages of the integrands over one or more windows."""
    shift = max(float(np.max(jet.u)) for jet in jets)
    sums = np.zeros(4)
    for jet, x in zip(jets, xs):
        values = integrands_at(jet)
        weight = np.exp(jet.u - shift)
        sums += [
            trapezoid(weight, x),
            trapezoid(values.j1 * weight, x),
            trapezoid(values.j2 * weight, x),
            trapezoid(values.j3 * weight, x),
        ]
    z, i_num, q_num, d_num = sums
    if not z > 0:
        raise CompositionError("Quadrature weight vanished on every window")
    return FunctionalTriple(i_val=i_num / z, q_val=q_num / z, d_val=d_num / z)


def line_functionals(model: LineModel, nodes: int = 4096) -> FunctionalTriple:
    """
    Functionals of a 1-D density by trapezoid quadrature over its support.

    Args:
        model: The line density model
        nodes: Quadrature nodes

    Returns:
        FunctionalTriple computed from the pointwise jet integrands
    """
    a, b = model.support()
    x = np.linspace(a, b, nodes)
    return _weighted_triple([model.log_jet(x)], [x])


# ============================================================================
# Products, Gaussian blocks and dilations
# ============================================================================


class GaussianBlockSpec(BaseModel):
    """Isotropic Gaussian factor N(0, sigma^2 I_dim)."""

    model_config = ConfigDict(frozen=True)

    dim: int = Field(..., ge=1)
    sigma: float = Field(..., gt=0)


def product_triple(a: FunctionalTriple, b: FunctionalTriple) -> FunctionalTriple:
    """Triple of a product density: the log-Hessian is block diagonal, so the functionals add."""
    return FunctionalTriple(
        i_val=a.i_val + b.i_val, q_val=a.q_val + b.q_val, d_val=a.d_val + b.d_val
    )


def gaussian_block(dim: int, sigma: float) -> FunctionalTriple:
    """
    Closed-form triple (dim sigma^-2, dim sigma^-4, 2 dim sigma^-6) of N(0, sigma^2 I_dim).

    Raises:
        CompositionError: If dim < 1 or sigma <= 0
    """
    if dim < 1 or not sigma > 0:
        raise CompositionError(f"Invalid Gaussian block dim={dim}, sigma={sigma}")
    return FunctionalTriple(
        i_val=dim / sigma**2, q_val=dim / sigma**4, d_val=2.0 * dim / sigma**6
    )


def block_triple(spec: GaussianBlockSpec) -> FunctionalTriple:
    return gaussian_block(spec.dim, spec.sigma)


def rescale_triple(triple: FunctionalTriple, r: float) -> FunctionalTriple:
    """
    Triple of the dilation g_r(x) = r^-d g(x / r).

    Raises:
        CompositionError: If r <= 0
    """
    if not r > 0:
        raise CompositionError(f"Scale must be positive, got {r}")
    return FunctionalTriple(
        i_val=triple.i_val / r**2, q_val=triple.q_val / r**4, d_val=triple.d_val / r**6
    )


def broad_gaussian_threshold(
    triple: FunctionalTriple,
    rel_tol: float = 1e-3,
    sigma_start: float = 1.0,
    max_doublings: int = 64,
) -> float:
    """
    Smallest sigma on the doubling ladder sigma_start * 2^k at which adjoining a
    broad 1-D Gaussian moves the ratio by at most rel_tol * |ratio|.

    Raises:
        CompositionError: If the ratio is undefined or no sigma is found
    """
    rho = triple.ratio
    if rho is None:
        raise CompositionError("Ratio undefined (Q = 0); no threshold exists")
    sigma = sigma_start
    for _ in range(max_doublings):
        product = product_triple(triple, gaussian_block(1, sigma))
        if abs(product.ratio - rho) <= rel_tol * abs(rho):
            logger.debug(f"Broad Gaussian threshold sigma0={sigma} for ratio {rho:.6f}")
            return sigma
        sigma *= 2.0
    raise CompositionError(f"No threshold found within {max_doublings} doublings")


def gaussian_extension(
    base: FunctionalTriple, extra_dim: int, sigmas: Sequence[float]
) -> list[tuple[float, FunctionalTriple]]:
    """
    Lift a density by a broad factor N(0, sigma^2 I_extra_dim), for increasing sigma.

    A negative base defect carries over to the product once sigma is large, which
    turns a two-dimensional example into one in 2 + extra_dim dimensions.

    Args:
        base: Triple of the base density
        extra_dim: Dimension of the Gaussian factor
        sigmas: Gaussian widths, evaluated in increasing order

    Returns:
        List of (sigma, product triple)

    Raises:
        CompositionError: If extra_dim < 1 or a sigma is not positive
    """
    return [(s, product_triple(base, gaussian_block(extra_dim, s))) for s in sorted(sigmas)]


def approaches_base_ratio(
    base: FunctionalTriple, extension: Sequence[tuple[float, FunctionalTriple]]
) -> bool:
    """True when |ratio - base ratio| strictly decreases along the extension."""
    if base.ratio is None or any(t.ratio is None for _, t in extension):
        return False
    gaps = [abs(t.ratio - base.ratio) for _, t in extension]
    return all(b < a for a, b in zip(gaps, gaps[1:]))


# ============================================================================
# Separated mixtures
# ============================================================================


class MixtureSpec(BaseModel):
    """F = (1 - eta) h + eta g_r(x - L)."""

    model_config = ConfigDict(frozen=True)

    background: LineModel = Field(default_factory=GaussianLine)
    bump: LineModel = Field(default_factory=GaussianLine)
    r: float = Field(default=1.0, gt=0)
    eta: float = Field(default=0.3, gt=0, lt=1)
    separation: float = Field(default=40.0, gt=0)

    @property
    def scaled_bump(self) -> RescaledLine:
        return RescaledLine(base=self.bump, r=self.r)


def mixture_windows(spec: MixtureSpec, nodes: int) -> list[np.ndarray]:
    """
    Quadrature abscissae: [-10, 10] and [L - 10r, L + 10r], merged when they meet.

    A merged window keeps the node density of a single window.
    """
    left = (-WINDOW_HALF_WIDTH, WINDOW_HALF_WIDTH)
    right = (
        spec.separation - WINDOW_HALF_WIDTH * spec.r,
        spec.separation + WINDOW_HALF_WIDTH * spec.r,
    )
    if right[0] <= left[1]:
        a, b = min(left[0], right[0]), max(left[1], right[1])
        count = int(math.ceil(nodes * (b - a) / (2.0 * WINDOW_HALF_WIDTH)))
        return [np.linspace(a, b, max(count, nodes))]
    return [np.linspace(*left, nodes), np.linspace(*right, nodes)]


def mixture_jet(spec: MixtureSpec, x: np.ndarray) -> LogDensityJet:
    """
    Jet of log F built from the density jets of the two components.

    Raises:
        PositivityViolationError: If F underflows at some abscissa
    """
    bump = spec.scaled_bump
    h = density_jet_from_log(
        spec.background.log_jet(x),
        math.log1p(-spec.eta) - spec.background.log_normalizer(),
    )
    g = density_jet_from_log(
        bump.log_jet(x - spec.separation), math.log(spec.eta) - bump.log_normalizer()
    )
    return jet_of_log_from_density_jet(
        h[0] + g[0], h[1] + g[1], h[2] + g[2], h[3] + g[3], points=x
    )


def mixture_functionals(spec: MixtureSpec, nodes: int = 4096) -> FunctionalTriple:
    """
    Functionals of a separated mixture by direct 1-D quadrature of log F.

    Args:
        spec: Mixture specification
        nodes: Nodes per window

    Returns:
        FunctionalTriple of the normalized mixture
    """
    windows = mixture_windows(spec, nodes)
    jets = [mixture_jet(spec, x) for x in windows]
    triple = _weighted_triple(jets, windows)
    logger.info(
        f"Mixture eta={spec.eta} r={spec.r} L={spec.separation}: "
        f"I={triple.i_val:.6e} Q={triple.q_val:.6e} D={triple.d_val:.6e}"
    )
    return triple


def additivity_prediction(spec: MixtureSpec, nodes: int = 4096) -> FunctionalTriple:
    """(1 - eta) T[h] + eta T[g_r], the L -> infinity limit of the mixture triple."""
    h = line_functionals(spec.background, nodes)
    g = line_functionals(spec.scaled_bump, nodes)
    w = spec.eta
    return FunctionalTriple(
        i_val=(1 - w) * h.i_val + w * g.i_val,
        q_val=(1 - w) * h.q_val + w * g.q_val,
        d_val=(1 - w) * h.d_val + w * g.d_val,
    )


def additivity_deviation(spec: MixtureSpec, nodes: int = 4096) -> float:
    """Largest absolute deviation of the mixture triple from additivity."""
    got = mixture_functionals(spec, nodes)
    expected = additivity_prediction(spec, nodes)
    return max(
        abs(got.i_val - expected.i_val),
        abs(got.q_val - expected.q_val),
        abs(got.d_val - expected.d_val),
    )


def dichotomy_sweep(
    scales: Sequence[float],
    separation: float = 40.0,
    bump: Optional[LineModel] = None,
    nodes: int = 4096,
) -> list[tuple[float, float, FunctionalTriple]]:
    """
    Mixture triples along the schedule eta = r^3.

    Returns:
        List of (r, eta, triple) per scale

    Raises:
        CompositionError: If some r^3 is not in (0, 1)
    """
    bump = bump or GaussianLine()
    results = []
    for r in scales:
        eta = r**3
        if not 0 < eta < 1:
            raise CompositionError(f"Scale r={r} gives eta={eta} outside (0, 1)")
        spec = MixtureSpec(bump=bump, r=r, eta=eta, separation=separation)
        results.append((r, eta, mixture_functionals(spec, nodes)))
    return results
