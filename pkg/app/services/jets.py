"""
Log-density jet algebra for FisherFlow.

A jet bundles the value, gradient, Hessian and third-derivative tensor of a
scalar field at one or many points. Every density model in the package reduces
to a jet evaluator, and this module turns jets into the pointwise integrands of
the three functionals:

- j1 = tr(H)                     (Fisher information)
- j2 = tr(H^2)                   (quadratic log-Hessian energy)
- j3 = |grad H|^2 + 2 tr(H^3)    (second Fisher-information production)

with H = -hess(log f). All arrays carry an arbitrary leading batch shape, so a
whole quadrature grid is processed in one call.
"""

import logging
from dataclasses import dataclass
from itertools import permutations
from typing import Optional

import numpy as np

logger = logging.getLogger(__name__)

# Densities below this value signal genuine underflow, not a model property.
POSITIVITY_FLOOR = 1e-300

# Dense third-derivative layout is used up to this dimension.
MAX_DENSE_DIM = 8

# Relative asymmetry tolerated (and removed) when canonicalizing tensors.
SYMMETRY_TOLERANCE = 1e-8


class JetValueError(Exception):
    """Raised when a jet has malformed, asymmetric or non-finite entries."""

    pass


class PositivityViolationError(Exception):
    """Raised when a density is not safely positive at an evaluation point."""

    pass


def symmetrize2(tensor: np.ndarray) -> np.ndarray:
    """Symmetric part of a batch of square matrices."""
    return 0.5 * (tensor + np.swapaxes(tensor, -1, -2))


def symmetrize3(tensor: np.ndarray) -> np.ndarray:
    """Average of a batch of rank-3 tensors over all 6 index permutations."""
    lead = tensor.ndim - 3
    total = np.zeros_like(tensor)
    for perm in permutations(range(3)):
        total = total + np.transpose(tensor, tuple(range(lead)) + tuple(lead + p for p in perm))
    return total / 6.0


def _asymmetry(tensor: np.ndarray, canonical: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(tensor), initial=0.0)), 1.0)
    return float(np.max(np.abs(tensor - canonical), initial=0.0)) / scale


@dataclass(frozen=True)
class LogDensityJet:
    """
    Value, gradient, Hessian and third-derivative tensor of a scalar field.

    Shapes: u (*B), grad (*B, d), hess (*B, d, d), third (*B, d, d, d). The
    Hessian and third tensor are canonicalized to their fully symmetric parts
    on construction.
    """

    u: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    third: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        grad = np.asarray(self.grad, dtype=float)
        hess = np.asarray(self.hess, dtype=float)
        third = np.asarray(self.third, dtype=float)

        if grad.ndim < 1:
            raise JetValueError("grad must have a trailing dimension axis")
        dim = grad.shape[-1]
        if dim < 1 or dim > MAX_DENSE_DIM:
            raise JetValueError(f"Jet dimension {dim} outside 1..{MAX_DENSE_DIM}")
        batch = grad.shape[:-1]
        if u.shape != batch:
            u = np.broadcast_to(u, batch).copy()
        if hess.shape != batch + (dim, dim):
            raise JetValueError(f"hess has shape {hess.shape}, expected {batch + (dim, dim)}")
        if third.shape != batch + (dim, dim, dim):
            raise JetValueError(
                f"third has shape {third.shape}, expected {batch + (dim, dim, dim)}"
            )

        hess_sym = symmetrize2(hess)
        third_sym = symmetrize3(third)
        if _asymmetry(hess, hess_sym) > SYMMETRY_TOLERANCE:
            raise JetValueError("hess is not symmetric")
        if _asymmetry(third, third_sym) > SYMMETRY_TOLERANCE:
            raise JetValueError("third is not fully symmetric")

        object.__setattr__(self, "u", u)
        object.__setattr__(self, "grad", grad)
        object.__setattr__(self, "hess", hess_sym)
        object.__setattr__(self, "third", third_sym)

    @property
    def dim(self) -> int:
        return self.grad.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return self.grad.shape[:-1]

    @classmethod
    def zeros(cls, dim: int, batch_shape: tuple = ()) -> "LogDensityJet":
        """The jet of a constant field."""
        return cls(
            u=np.zeros(batch_shape),
            grad=np.zeros(batch_shape + (dim,)),
            hess=np.zeros(batch_shape + (dim, dim)),
            third=np.zeros(batch_shape + (dim, dim, dim)),
        )

    def scaled(self, factor: float) -> "LogDensityJet":
        """Jet of factor * field."""
        return LogDensityJet(
            u=factor * self.u,
            grad=factor * self.grad,
            hess=factor * self.hess,
            third=factor * self.third,
        )

    def __add__(self, other: "LogDensityJet") -> "LogDensityJet":
        return LogDensityJet(
            u=self.u + other.u,
            grad=self.grad + other.grad,
            hess=self.hess + other.hess,
            third=self.third + other.third,
        )


@dataclass(frozen=True)
class IntegrandValues:
    """Pointwise integrands (j1, j2, j3) of the three functionals."""

    j1: np.ndarray
    j2: np.ndarray
    j3: np.ndarray


def _require_finite(name: str, array: np.ndarray) -> None:
    if not np.all(np.isfinite(array)):
        raise JetValueError(f"Non-finite entries in jet component '{name}'")


def integrands_at(jet: LogDensityJet) -> IntegrandValues:
    """
    Evaluate the functional integrands of a log-density jet.

    Args:
        jet: Jet of u = log f (any batch shape)

    Returns:
        IntegrandValues with j1 = -tr(hess), j2 = |hess|^2 and
        j3 = |third|^2 + 2 tr((-hess)^3)

    Raises:
        JetValueError: If any jet entry is not finite
    """
    for name in ("grad", "hess", "third"):
        _require_finite(name, getattr(jet, name))

    h = -jet.hess
    j1 = np.trace(h, axis1=-2, axis2=-1)
    j2 = np.einsum("...ij,...ij->...", h, h)
    tr_h3 = np.einsum("...ij,...jk,...ki->...", h, h, h)
    # The sign of third does not matter inside the squared norm.
    j3 = np.einsum("...ijk,...ijk->...", jet.third, jet.third) + 2.0 * tr_h3
    return IntegrandValues(j1=j1, j2=j2, j3=j3)


def hessian_operator_norm(jet: LogDensityJet) -> np.ndarray:
    """Spectral norm of H = -hess at every point."""
    return np.max(np.abs(np.linalg.eigvalsh(-jet.hess)), axis=-1)


def _format_point(points: Optional[np.ndarray], index: tuple) -> str:
    if points is None:
        return f"index {index}"
    point = np.asarray(points)[index]
    return f"x={np.array2string(np.atleast_1d(point), precision=6)}"


def jet_of_log_from_density_jet(
    f: np.ndarray,
    grad_f: np.ndarray,
    hess_f: np.ndarray,
    third_f: np.ndarray,
    points: Optional[np.ndarray] = None,
) -> LogDensityJet:
    """
    Convert derivatives of a density f into the jet of u = log f.

    Uses grad u = grad f / f, hess u = hess f / f - (grad f)(grad f)^T / f^2 and
    third u = third f / f - 3 Sym(hess f x grad f) / f^2 + 2 (grad f)^{x3} / f^3.

    Args:
        f: Density values (*B)
        grad_f: Gradients (*B, d)
        hess_f: Hessians (*B, d, d)
        third_f: Third-derivative tensors (*B, d, d, d)
        points: Optional coordinates (*B, ...) used only in error messages

    Returns:
        LogDensityJet of log f

    Raises:
        PositivityViolationError: If f <= 1e-300 anywhere
    """
    f = np.asarray(f, dtype=float)
    grad_f = np.asarray(grad_f, dtype=float)
    hess_f = np.asarray(hess_f, dtype=float)
    third_f = np.asarray(third_f, dtype=float)

    bad = ~(f > POSITIVITY_FLOOR)
    if np.any(bad):
        index = tuple(int(i) for i in np.argwhere(bad)[0]) if f.ndim else ()
        value = float(f[index]) if f.ndim else float(f)
        raise PositivityViolationError(
            f"Density value {value:.3e} at {_format_point(points, index)} "
            f"is below the positivity floor {POSITIVITY_FLOOR:.0e}"
        )

    inv = 1.0 / f
    g = grad_f * inv[..., None]
    hf = hess_f * inv[..., None, None]
    hess_u = hf - np.einsum("...i,...j->...ij", g, g)
    # 3 Sym(hess f x grad f) / f^2 written with the three distinct index placements.
    mixed = (
        np.einsum("...ij,...k->...ijk", hf, g)
        + np.einsum("...ik,...j->...ijk", hf, g)
        + np.einsum("...jk,...i->...ijk", hf, g)
    )
    third_u = (
        third_f * inv[..., None, None, None]
        - mixed
        + 2.0 * np.einsum("...i,...j,...k->...ijk", g, g, g)
    )
    return LogDensityJet(u=np.log(f), grad=g, hess=hess_u, third=third_u)


def density_jet_from_log(jet: LogDensityJet, log_scale: float = 0.0) -> tuple:
    """
    Derivatives of f = exp(u + log_scale) from the jet of u.

    Returns:
        Tuple (f, grad f, hess f, third f)
    """
    f = np.exp(jet.u + log_scale)
    g = jet.grad
    gg = np.einsum("...i,...j->...ij", g, g)
    hess_f = (jet.hess + gg) * f[..., None, None]
    mixed = (
        np.einsum("...ij,...k->...ijk", jet.hess, g)
        + np.einsum("...ik,...j->...ijk", jet.hess, g)
        + np.einsum("...jk,...i->...ijk", jet.hess, g)
    )
    third_f = (jet.third + mixed + np.einsum("...i,...j,...k->...ijk", g, g, g)) * f[
        ..., None, None, None
    ]
    return f, g * f[..., None], hess_f, third_f
