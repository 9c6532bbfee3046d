"""
Hexagonal triad model on the triangular torus, the circle family, and Haar quadrature.

Every periodic model in the package is written in angle coordinates: a vector of
angles (s, t, ...) on the cube [0, 2pi)^n, an integer matrix expressing each wave
phase in those angles, and the ambient wave vectors. The triangular lattice never
materializes; the square angle grid already carries the normalized Haar measure.
"""

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Protocol, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, InstanceOf, field_validator

from app.schemas import AverageTable, FunctionalTriple
from app.services.jets import LogDensityJet, integrands_at
from app.services.workers import blockwise_sum, parallel_map

logger = logging.getLogger(__name__)


class GridConfigurationError(Exception):
    """Raised when a grid is unsuitable for the requested computation."""

    pass


class QuadratureValueError(Exception):
    """Raised when sampled quadrature values are not finite."""

    pass


# ============================================================================
# Grids and Haar averages
# ============================================================================


class PeriodicGrid(BaseModel):
    """Uniform tensor grid on [0, 2pi)^n in angle coordinates."""

    model_config = ConfigDict(frozen=True)

    shape: tuple[int, ...] = Field(..., min_length=1, max_length=6)

    @field_validator("shape")
    @classmethod
    def validate_shape(cls, v: tuple[int, ...]) -> tuple[int, ...]:
        """Node counts must be even and at least 4."""
        for n in v:
            if n < 4 or n % 2:
                raise ValueError(f"Node count {n} must be even and >= 4")
        return v

    @classmethod
    def square(cls, n: int) -> "PeriodicGrid":
        return cls(shape=(n, n))

    @classmethod
    def line(cls, n: int) -> "PeriodicGrid":
        return cls(shape=(n,))

    @classmethod
    def cube(cls, n: int, ndim: int) -> "PeriodicGrid":
        return cls(shape=(n,) * ndim)

    @property
    def n_s(self) -> int:
        return self.shape[0]

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def axis_nodes(self, axis: int) -> np.ndarray:
        n = self.shape[axis]
        return 2.0 * np.pi * np.arange(n) / n

    def angles(self, start: int = 0, stop: Optional[int] = None) -> list[np.ndarray]:
        """Meshgrid of the angle coordinates, optionally restricted on the outer axis."""
        axes = [self.axis_nodes(a) for a in range(self.ndim)]
        axes[0] = axes[0][start:stop]
        return list(np.meshgrid(*axes, indexing="ij"))


def haar_average(samples: np.ndarray, grid: PeriodicGrid) -> float:
    """
    Normalized Haar average of a field sampled on a periodic grid.

    The rectangle rule on a periodic grid is spectrally accurate for smooth
    fields and exact for trigonometric polynomials the grid resolves.

    Raises:
        GridConfigurationError: If the samples do not match the grid
        QuadratureValueError: If any sample is not finite
    """
    samples = np.asarray(samples, dtype=float)
    if samples.shape != grid.shape:
        raise GridConfigurationError(
            f"Samples of shape {samples.shape} do not match grid {grid.shape}"
        )
    if not np.all(np.isfinite(samples)):
        raise QuadratureValueError("Non-finite samples passed to haar_average")
    return float(np.mean(samples))


# ============================================================================
# Cosine wave systems
# ============================================================================


def cosine_sum_jet(
    vectors: np.ndarray, angle_coeffs: np.ndarray, angles: Sequence[np.ndarray]
) -> LogDensityJet:
    """
    Jet of phi = sum_r cos(theta_r) with theta_r = sum_a angle_coeffs[r, a] * angles[a].

    Ambient derivatives: grad phi = -sum sin(theta_r) k_r,
    hess phi = -sum cos(theta_r) k_r k_r^T, third phi = sum sin(theta_r) k_r^{x3}.
    """
    stacked = np.stack([np.asarray(a, dtype=float) for a in angles], axis=-1)
    theta = stacked @ np.asarray(angle_coeffs, dtype=float).T
    cos_t = np.cos(theta)
    sin_t = np.sin(theta)
    outer2 = np.einsum("ri,rj->rij", vectors, vectors)
    outer3 = np.einsum("ri,rj,rk->rijk", vectors, vectors, vectors)
    return LogDensityJet(
        u=cos_t.sum(axis=-1),
        grad=-sin_t @ vectors,
        hess=-np.einsum("...r,rij->...ij", cos_t, outer2),
        third=np.einsum("...r,rijk->...ijk", sin_t, outer3),
    )


@dataclass(frozen=True)
class TriadWaveSystem:
    """Resonant unit wave vectors k1 + k2 + k3 = 0 with pairwise products -1/2."""

    k1: np.ndarray
    k2: np.ndarray
    k3: np.ndarray
    gram: np.ndarray

    def __post_init__(self):
        vectors = np.stack([self.k1, self.k2, self.k3])
        if np.max(np.abs(np.linalg.norm(vectors, axis=1) - 1.0)) > 1e-15:
            raise ValueError("Triad wave vectors must have unit length")
        if np.max(np.abs(vectors.sum(axis=0))) > 1e-15:
            raise ValueError("Triad wave vectors must sum to zero")
        off = self.gram[~np.eye(3, dtype=bool)]
        if np.max(np.abs(off + 0.5)) > 1e-15:
            raise ValueError("Triad wave vectors must have pairwise products -1/2")

    @classmethod
    def hexagonal(cls) -> "TriadWaveSystem":
        k1 = np.array([1.0, 0.0])
        k2 = np.array([-0.5, np.sqrt(3.0) / 2.0])
        k3 = -(k1 + k2)
        vectors = np.stack([k1, k2, k3])
        return cls(k1=k1, k2=k2, k3=k3, gram=vectors @ vectors.T)

    @property
    def vectors(self) -> np.ndarray:
        return np.stack([self.k1, self.k2, self.k3])

    @property
    def angle_coeffs(self) -> np.ndarray:
        # theta1 = s, theta2 = t, theta3 = -(s + t)
        return np.array([[1, 0], [0, 1], [-1, -1]])

    @property
    def frequencies(self) -> np.ndarray:
        """Ambient frequency of each angle coordinate: s = k1.x, t = k2.x."""
        return np.stack([self.k1, self.k2])

    def point(self, s: float, t: float) -> np.ndarray:
        """Ambient point x with k1.x = s and k2.x = t."""
        return np.linalg.solve(self.frequencies, np.array([s, t], dtype=float))


def phi_jet_at(waves: TriadWaveSystem, s, t) -> tuple[np.ndarray, LogDensityJet]:
    """
    Evaluate phi = cos(theta1) + cos(theta2) + cos(theta3) and its ambient jet.

    Args:
        waves: The triad wave system
        s: Angle theta1 (scalar or array)
        t: Angle theta2 (same shape as s)

    Returns:
        Tuple (phi, jet of phi)
    """
    s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
    jet = cosine_sum_jet(waves.vectors, waves.angle_coeffs, [s, t])
    return jet.u, jet


# ============================================================================
# Periodic exponential families
# ============================================================================


class PeriodicModel(Protocol):
    """An exponential family exp(eps * phi) on an angle-coordinate torus."""

    eps: float

    @property
    def dim(self) -> int: ...

    @property
    def frequencies(self) -> np.ndarray: ...

    def log_jet(self, angles: Sequence[np.ndarray]) -> LogDensityJet: ...


class TorusExpFamily(BaseModel):
    """f_eps proportional to exp(eps * phi) on the triangular torus."""

    model_config = ConfigDict(frozen=True)

    eps: float = Field(..., allow_inf_nan=False)
    waves: InstanceOf[TriadWaveSystem] = Field(default_factory=TriadWaveSystem.hexagonal)

    @property
    def dim(self) -> int:
        return 2

    @property
    def frequencies(self) -> np.ndarray:
        return self.waves.frequencies

    def log_jet(self, angles: Sequence[np.ndarray]) -> LogDensityJet:
        return cosine_sum_jet(self.waves.vectors, self.waves.angle_coeffs, angles).scaled(self.eps)


class CircleExpFamily(BaseModel):
    """f_eps proportional to exp(eps * cos x) on the circle R / 2pi Z."""

    model_config = ConfigDict(frozen=True)

    eps: float = Field(..., allow_inf_nan=False)

    @property
    def dim(self) -> int:
        return 1

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([[1.0]])

    def log_jet(self, angles: Sequence[np.ndarray]) -> LogDensityJet:
        return cosine_sum_jet(np.array([[1.0]]), np.array([[1]]), angles).scaled(self.eps)


def periodic_functionals(
    model: PeriodicModel, grid: PeriodicGrid, workers: int = 1, block: int = 32
) -> FunctionalTriple:
    """
    Exact weighted-average triple of exp(eps * phi) on its torus.

    Each functional is the ratio of two plain Haar averages: the integrand times
    the weight exp(eps * phi), over the weight alone.
    """
    if grid.ndim != len(model.frequencies):
        raise GridConfigurationError(
            f"Grid has {grid.ndim} axes but the model uses {len(model.frequencies)} angles"
        )

    def evaluate(start: int, stop: int) -> np.ndarray:
        jet = model.log_jet(grid.angles(start, stop))
        values = integrands_at(jet)
        weight = np.exp(jet.u)
        return np.array(
            [
                weight.sum(),
                (values.j1 * weight).sum(),
                (values.j2 * weight).sum(),
                (values.j3 * weight).sum(),
            ]
        )

    z, i_num, q_num, d_num = blockwise_sum(evaluate, grid.n_s, block=block, workers=workers)
    if not np.isfinite(z) or z <= 0:
        raise QuadratureValueError(f"Invalid normalization {z} for eps={model.eps}")
    return FunctionalTriple(i_val=i_num / z, q_val=q_num / z, d_val=d_num / z)


def torus_functionals(
    family: TorusExpFamily, grid: PeriodicGrid, workers: int = 1, block: int = 32
) -> FunctionalTriple:
    """
    Functionals of the hexagonal torus family at a fixed eps (no truncation in eps).

    Args:
        family: The torus exponential family
        grid: A square angle grid (n >= 64 recommended)
        workers: Quadrature workers
        block: Outer-axis rows per block

    Returns:
        FunctionalTriple with I = <eps phi e^{eps phi}>/Z, Q and D likewise
    """
    triple = periodic_functionals(family, grid, workers=workers, block=block)
    logger.info(
        f"Torus functionals eps={family.eps} grid={grid.shape}: "
        f"I={triple.i_val:.6e} Q={triple.q_val:.6e} D={triple.d_val:.6e}"
    )
    return triple


def circle_functionals(
    family: CircleExpFamily, grid: PeriodicGrid, workers: int = 1, block: int = 32
) -> FunctionalTriple:
    """
    Functionals of exp(eps * cos x) on the circle.

    H = eps cos x, so the D integrand is eps^2 sin^2 x + 2 eps^3 cos^3 x.
    """
    if grid.ndim != 1:
        raise GridConfigurationError("The circle family needs a one-axis grid")
    triple = periodic_functionals(family, grid, workers=workers, block=block)
    logger.debug(f"Circle functionals eps={family.eps}: ratio={triple.ratio}")
    return triple


# ============================================================================
# Hexagonal averages
# ============================================================================


HEXAGONAL_CLOSED_FORMS: dict[str, Fraction] = {
    "grad_sq": Fraction(3, 2),
    "phi_grad_sq": Fraction(3, 4),
    "hess_sq": Fraction(3, 2),
    "phi_hess_sq": Fraction(3, 8),
    "third_sq": Fraction(3, 2),
    "phi_third_sq": Fraction(3, 16),
    "tr_hess_cubed": Fraction(3, 16),
    "phi_sq": Fraction(3, 2),
    "phi_cubed": Fraction(3, 2),
    "phi": Fraction(0),
}


def hexagonal_fields(waves: TriadWaveSystem, grid: PeriodicGrid) -> dict[str, np.ndarray]:
    """Grid samples of phi and the scalar invariants of its derivatives."""
    s, t = grid.angles()
    phi, jet = phi_jet_at(waves, s, t)
    return {
        "phi": phi,
        "grad_sq": np.einsum("...i,...i->...", jet.grad, jet.grad),
        "hess_sq": np.einsum("...ij,...ij->...", jet.hess, jet.hess),
        "third_sq": np.einsum("...ijk,...ijk->...", jet.third, jet.third),
        "tr_hess_cubed": np.einsum("...ij,...jk,...ki->...", jet.hess, jet.hess, jet.hess),
    }


def hexagonal_average_table(
    grid: PeriodicGrid, waves: Optional[TriadWaveSystem] = None, workers: int = 1
) -> AverageTable:
    """
    Haar averages of the hexagonal field and its derivative invariants.

    Args:
        grid: Square angle grid
        waves: Triad wave system (default: the hexagonal triad)
        workers: Averages computed concurrently

    Returns:
        AverageTable with the nine cubic-order averages plus <phi>, each next
        to its closed form
    """
    if grid.ndim != 2:
        raise GridConfigurationError("Hexagonal averages need a square angle grid")
    waves = waves or TriadWaveSystem.hexagonal()
    fields = hexagonal_fields(waves, grid)
    phi = fields["phi"]
    samples = {
        "grad_sq": fields["grad_sq"],
        "phi_grad_sq": phi * fields["grad_sq"],
        "hess_sq": fields["hess_sq"],
        "phi_hess_sq": phi * fields["hess_sq"],
        "third_sq": fields["third_sq"],
        "phi_third_sq": phi * fields["third_sq"],
        "tr_hess_cubed": fields["tr_hess_cubed"],
        "phi_sq": phi**2,
        "phi_cubed": phi**3,
        "phi": phi,
    }
    averages = parallel_map(lambda field: haar_average(field, grid), list(samples.values()), workers)
    values = dict(zip(samples, averages))
    logger.info(f"Computed {len(values)} hexagonal averages on grid {grid.shape}")
    return AverageTable(grid_size=grid.n_s, values=values, closed_forms=dict(HEXAGONAL_CLOSED_FORMS))
