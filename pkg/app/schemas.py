"""Pydantic schemas for computed records, reports and run configuration."""

from fractions import Fraction
from typing import Optional, List, Dict, Literal
from pydantic import BaseModel, ConfigDict, Field, computed_field, field_serializer, field_validator, model_validator


# ============================================================================
# Functional Schemas
# ============================================================================


class FunctionalTriple(BaseModel):
    """
    The three Fisher-information functionals of a density.

    `defect` and `ratio` are derived on access and included on serialization,
    so they always agree with the stored triple.
    """

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    i_val: float = Field(..., description="Fisher information I[f]")
    q_val: float = Field(..., description="Quadratic log-Hessian energy Q[f]")
    d_val: float = Field(..., description="Second Fisher-information production D[f]")

    @computed_field  # type: ignore[prop-decorator]
    @property
    def defect(self) -> float:
        """Log-convexity defect I*D - Q^2."""
        return self.i_val * self.d_val - self.q_val**2

    @computed_field  # type: ignore[prop-decorator]
    @property
    def ratio(self) -> Optional[float]:
        """I*D/Q^2, defined only when Q > 0."""
        if self.q_val > 0:
            return self.i_val * self.d_val / self.q_val**2
        return None

    @classmethod
    def zero(cls) -> "FunctionalTriple":
        """The triple of a flat density."""
        return cls(i_val=0.0, q_val=0.0, d_val=0.0)


class DefectReport(BaseModel):
    """One row of the Euclidean defect table."""

    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    eps: float
    radius: float
    i_val: float
    q_val: float
    d_val: float

    @computed_field  # type: ignore[prop-decorator]
    @property
    def defect(self) -> float:
        """Recomputed from the stored functionals on every access."""
        return self.i_val * self.d_val - self.q_val**2

    @computed_field  # type: ignore[prop-decorator]
    @property
    def ratio(self) -> Optional[float]:
        if self.q_val > 0:
            return self.i_val * self.d_val / self.q_val**2
        return None

    @classmethod
    def from_triple(cls, eps: float, radius: float, triple: FunctionalTriple) -> "DefectReport":
        """Build a report row from a computed triple."""
        return cls(
            eps=eps, radius=radius, i_val=triple.i_val, q_val=triple.q_val, d_val=triple.d_val
        )


class ReferenceRow(BaseModel):
    """Published reference values for one defect-table row."""

    eps: float
    i_val: float
    q_val: float
    d_val: float
    defect: float
    ratio: float


class TableComparison(BaseModel):
    """A computed defect row next to its reference and per-column verdicts."""

    report: DefectReport
    reference: Optional[ReferenceRow] = None
    checks: Dict[str, bool] = {}

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


# ============================================================================
# Series Coefficient Schemas
# ============================================================================


class ExpansionRecord(BaseModel):
    """Power-series coefficients of one functional of one family."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    family: str = Field(..., min_length=1, description="Family identifier, e.g. 'torus'")
    quantity: str = Field(..., description="'i', 'q', 'd' or 'defect'")
    coefficients: Dict[int, Fraction | float] = Field(
        ..., description="Coefficient per power of eps"
    )
    source: Literal["closed-form", "fitted"]
    fit_window: Optional[List[float]] = None
    residual: Optional[float] = Field(
        None, description="Relative RMS residual of the fit (fitted records only)"
    )

    @field_serializer("coefficients")
    def serialize_coefficients(self, coefficients: Dict[int, Fraction | float]) -> Dict[int, float]:
        return {power: float(value) for power, value in coefficients.items()}

    @property
    def quadratic(self) -> Optional[float]:
        value = self.coefficients.get(2)
        return None if value is None else float(value)

    @property
    def cubic(self) -> Optional[float]:
        value = self.coefficients.get(3)
        return None if value is None else float(value)

    def coefficient(self, power: int) -> float:
        """Coefficient of eps**power as a float (0 when absent)."""
        return float(self.coefficients.get(power, 0))

    def agrees_with(self, other: "ExpansionRecord", rel_tol: float) -> bool:
        """True when every shared coefficient matches within rel_tol."""
        for power in set(self.coefficients) & set(other.coefficients):
            expected = float(other.coefficients[power])
            got = float(self.coefficients[power])
            if abs(got - expected) > rel_tol * max(abs(expected), 1e-300):
                return False
        return True


class AverageTable(BaseModel):
    """Numerical Haar averages of the hexagonal field next to their closed forms."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    grid_size: int
    values: Dict[str, float]
    closed_forms: Dict[str, Fraction]

    @field_serializer("closed_forms")
    def serialize_closed_forms(self, closed_forms: Dict[str, Fraction]) -> Dict[str, str]:
        return {name: str(value) for name, value in closed_forms.items()}

    def deltas(self) -> Dict[str, float]:
        """Absolute deviation of each average from its closed form."""
        return {
            name: abs(self.values[name] - float(self.closed_forms[name])) for name in self.values
        }


# ============================================================================
# Heat Flow Schemas
# ============================================================================


class FlowProfile(BaseModel):
    """Functionals and log-convexity defect along the heat flow."""

    times: List[float]
    triples: List[FunctionalTriple]
    phi_defect: List[float]

    @model_validator(mode="after")
    def validate_shape(self) -> "FlowProfile":
        if not (len(self.times) == len(self.triples) == len(self.phi_defect)):
            raise ValueError("times, triples and phi_defect must have equal lengths")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("times must be strictly increasing")
        return self

    def rows(self) -> List[Dict[str, Optional[float]]]:
        """Rows with columns t, I, Q, D, defect, ratio."""
        return [
            {
                "t": t,
                "I": triple.i_val,
                "Q": triple.q_val,
                "D": triple.d_val,
                "defect": defect,
                "ratio": triple.ratio,
            }
            for t, triple, defect in zip(self.times, self.triples, self.phi_defect)
        ]


class IdentityCheck(BaseModel):
    """Finite-difference check of I' = -Q and I'' = D at one time."""

    t: float
    triple: FunctionalTriple
    first_difference: float
    second_difference: float
    residual_first: float
    residual_second: float
    residual_first_half: float
    residual_second_half: float

    @property
    def order_first(self) -> float:
        """Residual reduction factor under dt halving (4 for second order)."""
        return self.residual_first / max(self.residual_first_half, 1e-300)

    @property
    def order_second(self) -> float:
        return self.residual_second / max(self.residual_second_half, 1e-300)


class IdentityReport(BaseModel):
    """All identity checks of one heat-flow run."""

    eps: float
    dt: float
    checks: List[IdentityCheck]

    @property
    def max_residual_first(self) -> float:
        return max((c.residual_first for c in self.checks), default=0.0)

    @property
    def max_residual_second(self) -> float:
        return max((c.residual_second for c in self.checks), default=0.0)


# ============================================================================
# Run Configuration Schemas
# ============================================================================


CommandName = Literal["table1", "averages", "expand", "simplex", "flow", "mixture", "theta-scan"]


class RunConfig(BaseModel):
    """
    Configuration of a single CLI invocation.

    Assembled from Settings defaults, an optional JSON config file and command-line
    flags, in increasing order of precedence.
    """

    command: CommandName
    grid: int = Field(default=256, ge=4, description="Nodes per angle axis")
    modes: int = Field(default=16, ge=1, description="Fourier truncation M")
    eps: List[float] = Field(default=[0.03, 0.04, 0.05, 0.055], min_length=1)
    radius: List[float] = Field(default=[1000.0], min_length=1)
    dim: int = Field(default=2, ge=1, le=6, description="Dimension d")
    sigmas: List[float] = Field(
        default=[10.0, 100.0, 1000.0], min_length=1, description="Widths of the adjoined Gaussian block"
    )
    times: List[float] = Field(default=[0.02, 0.05, 0.1], min_length=1)
    dt: float = Field(default=1e-3, gt=0, le=0.1)
    nodes: int = Field(default=32, ge=16, description="Nodes per simplex angle")
    eta: float = Field(default=0.3, gt=0, lt=1, description="Mixture bump mass")
    scale: float = Field(default=1.0, gt=0, description="Mixture bump scale r")
    separations: List[float] = Field(default=[10.0, 20.0, 40.0], min_length=1)
    out: Optional[str] = None
    format: Literal["csv", "json"] = "csv"
    workers: int = -1

    @field_validator("grid")
    @classmethod
    def validate_grid(cls, v: int) -> int:
        if v % 2:
            raise ValueError(f"grid must be even, got {v}")
        return v

    @field_validator("eps")
    @classmethod
    def validate_eps(cls, v: List[float]) -> List[float]:
        for eps in v:
            if abs(eps) > 0.5:
                raise ValueError(f"eps={eps} outside the supported window [-0.5, 0.5]")
        return v

    @field_validator("radius", "separations", "sigmas")
    @classmethod
    def validate_positive(cls, v: List[float]) -> List[float]:
        if any(x <= 0 for x in v):
            raise ValueError("radius, separation and sigma values must be positive")
        return v

    @field_validator("times")
    @classmethod
    def validate_times(cls, v: List[float]) -> List[float]:
        if any(t < 0 for t in v):
            raise ValueError("times must be non-negative")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("times must be strictly increasing")
        return v

    @field_validator("workers")
    @classmethod
    def validate_workers(cls, v: int) -> int:
        if v == 0:
            raise ValueError("workers must be non-zero")
        return v

    @model_validator(mode="after")
    def validate_modes(self) -> "RunConfig":
        if 2 * self.modes >= self.grid:
            raise ValueError(
                f"modes={self.modes} too large for grid={self.grid} (need 2*modes < grid)"
            )
        return self
