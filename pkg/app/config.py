"""Application configuration management."""

from typing import Optional
from pydantic_settings import BaseSettings
from pydantic import Field, field_validator


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    # Quadrature grids
    grid_size: int = Field(
        default=256, ge=4, le=4096, description="Nodes per angle axis for torus quadrature"
    )
    fourier_modes: int = Field(
        default=16, ge=1, description="Fourier truncation M for the Gaussian-shell formula"
    )
    block_rows: int = Field(
        default=32, ge=1, description="Outer-axis rows per quadrature block"
    )
    workers: int = Field(
        default=-1, description="Quadrature workers (joblib convention, -1 uses all cores)"
    )

    # Euclidean family
    radius: float = Field(default=1000.0, gt=0, description="Gaussian envelope radius R")
    table_eps: list[float] = Field(
        default=[0.03, 0.04, 0.05, 0.055], description="Perturbation sizes for the defect table"
    )

    # Series coefficients
    fit_window: list[float] = Field(
        default=[0.01, 0.02, 0.04], description="Perturbation sizes used for coefficient fits"
    )

    # Heat flow
    flow_modes: int = Field(default=24, ge=1, description="Fourier truncation for the heat flow")
    flow_grid_size: int = Field(
        default=128, ge=4, description="Nodes per angle axis for heat-flow evaluation"
    )
    flow_dt: float = Field(default=1e-3, gt=0, le=0.1, description="Finite-difference step")
    flow_times: list[float] = Field(
        default=[0.02, 0.05, 0.1], description="Times at which the flow identities are checked"
    )

    # Simplex family
    simplex_nodes: int = Field(default=32, ge=16, description="Nodes per simplex angle")
    simplex_budget: int = Field(
        default=2**24, ge=1, description="Maximum total node count of a simplex grid"
    )

    # Mixtures
    mixture_nodes: int = Field(
        default=4096, ge=64, description="Nodes per window for 1-D mixture quadrature"
    )

    # Output
    output_dir: str = Field(default="results", description="Default directory for reports")
    output_format: str = Field(default="csv", description="Report format: 'csv' or 'json'")
    random_seed: int = Field(default=20240601, description="Seed for property sampling")

    # Logging
    log_level: str = Field(default="INFO", description="Logging level")
    log_file: Optional[str] = Field(
        default=None, description="Log file path (if None, logs to console only)"
    )

    model_config = {
        "env_file": ".env",
        "env_file_encoding": "utf-8",
        "case_sensitive": False,
        "extra": "ignore",
    }

    @field_validator("grid_size", "flow_grid_size")
    @classmethod
    def validate_even(cls, v: int) -> int:
        """Periodic grids must have an even node count."""
        if v % 2:
            raise ValueError(f"Grid size must be even, got {v}")
        return v

    @field_validator("output_format")
    @classmethod
    def validate_format(cls, v: str) -> str:
        """Validate that the output format is either 'csv' or 'json'."""
        if v not in ["csv", "json"]:
            raise ValueError("Output format must be either 'csv' or 'json'")
        return v

    @field_validator("workers")
    @classmethod
    def validate_workers(cls, v: int) -> int:
        """Zero workers is meaningless for joblib."""
        if v == 0:
            raise ValueError("workers must be a positive count or negative (joblib convention)")
        return v


# Global settings instance
settings: Optional[Settings] = None


def get_settings() -> Settings:
    """Get or create the global settings instance."""
    global settings
    if settings is None:
        settings = Settings()
    return settings


def load_settings() -> Settings:
    """Load settings from environment variables."""
    global settings
    settings = Settings()
    return settings
