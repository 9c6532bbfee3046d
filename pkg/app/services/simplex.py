"""
The simplex resonance family in dimension d.

Roots k_ij = (e_i - e_j) / sqrt(2), 1 <= i < j <= d + 1, live on the zero-sum
hyperplane of R^{d+1} and are expressed in an orthonormal basis of it. Phases are
angle differences k_ij . x = v_i - v_j; fixing the gauge v_{d+1} = 0 turns the Haar
average into a plain d-fold tensor grid over (v_1, ..., v_d).
"""

import logging
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, InstanceOf
from scipy.linalg import null_space

from app.schemas import ExpansionRecord, FunctionalTriple
from app.services.jets import LogDensityJet
from app.services.torus2d import (
    GridConfigurationError,
    PeriodicGrid,
    cosine_sum_jet,
    periodic_functionals,
)
from app.services.transfer import envelope_functionals

logger = logging.getLogger(__name__)

MIN_DIM = 2
MAX_DIM = 6
MAX_EUCLIDEAN_DIM = 3
MIN_NODES = 16
ACCURATE_NODES = 32
DEFAULT_BUDGET = 2**24

# Allowed off-diagonal products of two distinct roots.
GRAM_VALUES = np.array([-0.5, 0.0, 0.5])

# Points per quadrature block; bounds the memory of the rank-3 tensors.
BLOCK_POINTS = 65536


class SimplexDimensionError(Exception):
    """Raised when a simplex dimension is outside the supported range."""

    pass


class QuadratureBudgetError(Exception):
    """Raised when a simplex grid would exceed the configured node budget."""

    pass


@dataclass(frozen=True)
class SimplexWaveSystem:
    """Unit roots of the simplex family with their angle map and triangle relations."""

    d: int
    roots: np.ndarray
    pairs: tuple[tuple[int, int], ...]
    triangles: tuple[tuple[int, int, int], ...]

    def __post_init__(self):
        if np.max(np.abs(np.linalg.norm(self.roots, axis=1) - 1.0)) > 1e-14:
            raise ValueError("Simplex roots must have unit length")
        gram = self.gram
        off = gram[~np.eye(len(gram), dtype=bool)]
        distance = np.min(np.abs(off[:, None] - GRAM_VALUES[None, :]), axis=1)
        if off.size and np.max(distance) > 1e-14:
            raise ValueError("Simplex root products must lie in {0, +-1/2}")
        for i, j, k in self.triangles:
            residual = self.root(i, j) + self.root(j, k) - self.root(i, k)
            if np.max(np.abs(residual)) > 1e-14:
                raise ValueError(f"Triangle relation fails for ({i}, {j}, {k})")

    def root(self, i: int, j: int) -> np.ndarray:
        return self.roots[self.pairs.index((i, j))]

    @property
    def n_roots(self) -> int:
        return len(self.pairs)

    @property
    def gram(self) -> np.ndarray:
        return self.roots @ self.roots.T

    @property
    def angle_coeffs(self) -> np.ndarray:
        """Row (i, j) encodes v_i - v_j over the gauge-fixed angles v_1..v_d."""
        coeffs = np.zeros((self.n_roots, self.d), dtype=int)
        for row, (i, j) in enumerate(self.pairs):
            coeffs[row, i] = 1
            if j < self.d:
                coeffs[row, j] = -1
        return coeffs

    @property
    def frequencies(self) -> np.ndarray:
        """v_i = k_{i,d+1} . x, so the frequency of angle i is the root (i, d+1)."""
        return np.stack([self.root(i, self.d) for i in range(self.d)])


def build_simplex_system(d: int) -> SimplexWaveSystem:
    """
    Realize the simplex roots in an orthonormal basis of the zero-sum hyperplane.

    Args:
        d: Dimension, 2 <= d <= 6

    Returns:
        SimplexWaveSystem with d(d+1)/2 roots and C(d+1, 3) triangles

    Raises:
        SimplexDimensionError: If d is out of range
    """
    if d < MIN_DIM or d > MAX_DIM:
        raise SimplexDimensionError(f"Simplex dimension must be in {MIN_DIM}..{MAX_DIM}, got {d}")
    basis = null_space(np.ones((1, d + 1)))
    pairs = tuple(combinations(range(d + 1), 2))
    roots = np.stack([(basis[i] - basis[j]) / np.sqrt(2.0) for i, j in pairs])
    triangles = tuple(combinations(range(d + 1), 3))
    logger.debug(f"Built simplex system d={d}: {len(pairs)} roots, {len(triangles)} triangles")
    return SimplexWaveSystem(d=d, roots=roots, pairs=pairs, triangles=triangles)


class SimplexExpFamily(BaseModel):
    """f proportional to exp(eps * sum_{i<j} cos(k_ij . x)) on the simplex torus."""

    model_config = ConfigDict(frozen=True)

    eps: float = Field(..., allow_inf_nan=False)
    waves: InstanceOf[SimplexWaveSystem]

    @classmethod
    def of_dimension(cls, eps: float, d: int) -> "SimplexExpFamily":
        return cls(eps=eps, waves=build_simplex_system(d))

    @property
    def dim(self) -> int:
        return self.waves.d

    @property
    def frequencies(self) -> np.ndarray:
        return self.waves.frequencies

    def log_jet(self, angles: Sequence[np.ndarray]) -> LogDensityJet:
        return cosine_sum_jet(self.waves.roots, self.waves.angle_coeffs, angles).scaled(self.eps)


def simplex_grid(d: int, nodes_per_angle: int, budget: int = DEFAULT_BUDGET) -> PeriodicGrid:
    """
    Gauge-fixed d-fold angle grid, checked against the node budget.

    Raises:
        GridConfigurationError: If nodes_per_angle < 16
        QuadratureBudgetError: If nodes^d exceeds the budget
    """
    if nodes_per_angle < MIN_NODES:
        raise GridConfigurationError(f"Simplex grids need at least {MIN_NODES} nodes per angle")
    total = nodes_per_angle**d
    if total > budget:
        raise QuadratureBudgetError(
            f"nodes^d = {nodes_per_angle}^{d} = {total} exceeds the quadrature budget {budget}"
        )
    if nodes_per_angle < ACCURATE_NODES:
        logger.warning(
            f"Simplex quadrature d={d} with {nodes_per_angle} nodes per angle: reduced accuracy"
        )
    return PeriodicGrid.cube(nodes_per_angle, d)


def simplex_functionals(
    family: SimplexExpFamily,
    nodes_per_angle: int = ACCURATE_NODES,
    budget: int = DEFAULT_BUDGET,
    workers: int = 1,
) -> FunctionalTriple:
    """
    Functionals of the simplex family on the gauge-fixed angle grid.

    Args:
        family: The simplex exponential family
        nodes_per_angle: Nodes per angle axis (>= 16)
        budget: Maximum total node count nodes^d
        workers: Quadrature workers

    Returns:
        FunctionalTriple of the torus density
    """
    grid = simplex_grid(family.dim, nodes_per_angle, budget)
    block = max(1, BLOCK_POINTS // nodes_per_angle ** (family.dim - 1))
    triple = periodic_functionals(family, grid, workers=workers, block=block)
    logger.info(
        f"Simplex functionals d={family.dim} eps={family.eps} nodes={nodes_per_angle}: "
        f"defect={triple.defect:.4e}"
    )
    return triple


@dataclass(frozen=True)
class SimplexCoefficients:
    """Exact series coefficients of the simplex family in dimension d."""

    d: int
    s_d: Fraction
    alpha: Fraction
    gamma: Fraction
    delta: Fraction
    slope: Fraction

    def records(self) -> list[ExpansionRecord]:
        family = f"simplex-{self.d}"
        return [
            ExpansionRecord(
                family=family,
                quantity=quantity,
                coefficients={2: self.s_d, 3: cubic},
                source="closed-form",
            )
            for quantity, cubic in (("i", self.alpha), ("q", self.gamma), ("d", self.delta))
        ]


def simplex_closed_form_coeffs(d: int) -> SimplexCoefficients:
    """
    S_d = d(d+1)/4, alpha = d(d+1)(d-1)/8, gamma = alpha/2, delta = -alpha/4, slope = -(d-1)/8.

    d = 1 is accepted as the degenerate circle case (no triangles, zero cubic terms).
    """
    if d < 1:
        raise SimplexDimensionError(f"Simplex dimension must be positive, got {d}")
    cubic = Fraction(d * (d + 1) * (d - 1))
    return SimplexCoefficients(
        d=d,
        s_d=Fraction(d * (d + 1), 4),
        alpha=cubic / 8,
        gamma=cubic / 16,
        delta=-cubic / 32,
        slope=-Fraction(d - 1, 8),
    )


def simplex_euclidean_functionals(
    eps: float,
    radius: float,
    d: int,
    nodes_per_angle: int = ACCURATE_NODES,
    max_mode: int = 12,
) -> FunctionalTriple:
    """
    Functionals of the simplex family under a Gaussian envelope of radius R.

    Shell exponents come from the Gram matrix of the angle frequencies
    (1 on the diagonal, 1/2 off it).

    Raises:
        SimplexDimensionError: If d > 3
    """
    if d > MAX_EUCLIDEAN_DIM:
        raise SimplexDimensionError(
            f"Euclidean simplex realizations are limited to d <= {MAX_EUCLIDEAN_DIM}, got {d}"
        )
    family = SimplexExpFamily.of_dimension(eps, d)
    grid = simplex_grid(d, nodes_per_angle)
    return envelope_functionals(family, radius, grid, max_mode)
