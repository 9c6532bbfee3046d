"""CLI commands for FisherFlow.

Every command assembles a RunConfig, computes its report, writes it as CSV or JSON,
prints a summary and exits 0 when all embedded tolerance checks pass, 1 when some
check fails (after listing the failures) and 2 when a computation or the
configuration itself fails.
"""

import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, NoReturn, Optional, Tuple

import numpy as np
import typer
from pydantic import ValidationError

from app.cli.utils import (
    console,
    print_checks,
    print_error,
    print_info,
    print_records,
    print_success,
    print_warning,
    show_progress,
    write_report,
)
from app.config import Settings, get_settings
from app.schemas import ExpansionRecord, FlowProfile, FunctionalTriple, RunConfig
from app.services.asymptotics import (
    ClosedFormExpansion,
    FitConditioningError,
    UndefinedRatioError,
    closed_form_circle,
    closed_form_expansion,
    closed_form_torus,
    fit_coefficients,
    quotient_slope,
)
from app.services.compose import (
    CompositionError,
    MixtureSpec,
    additivity_prediction,
    approaches_base_ratio,
    dichotomy_sweep,
    gaussian_extension,
    mixture_functionals,
)
from app.services.flow import (
    FlowPositivityError,
    evolve,
    evolve_further,
    verify_identities,
)
from app.services.jets import JetValueError, PositivityViolationError
from app.services.simplex import (
    QuadratureBudgetError,
    SimplexDimensionError,
    SimplexExpFamily,
    simplex_closed_form_coeffs,
    simplex_euclidean_functionals,
    simplex_functionals,
)
from app.services.torus2d import (
    CircleExpFamily,
    GridConfigurationError,
    PeriodicGrid,
    QuadratureValueError,
    TorusExpFamily,
    circle_functionals,
    hexagonal_average_table,
    torus_functionals,
)
from app.services.transfer import (
    ModeTruncationError,
    ShellAverageError,
    compare_to_reference,
    defect_report,
)
from app.services.workers import parallel_map


logger = logging.getLogger(__name__)

SERVICE_ERRORS = (
    JetValueError,
    PositivityViolationError,
    GridConfigurationError,
    QuadratureValueError,
    ModeTruncationError,
    ShellAverageError,
    SimplexDimensionError,
    QuadratureBudgetError,
    CompositionError,
    FlowPositivityError,
    FitConditioningError,
    UndefinedRatioError,
    ValidationError,
    ValueError,
    OSError,
)

AVERAGE_TOL = 1e-12
TORUS_COEFF_TOL = 1e-2
SIMPLEX_COEFF_TOL = 2e-2
SLOPE_REL_TOL = 2e-2
SLOPE_ABS_TOL = 5e-3
FLOW_RESIDUAL_TOL = 1e-5
FLOW_ORDER_RANGE = (3.5, 4.5)
SEMIGROUP_TOL = 1e-14
MIXTURE_ADDITIVITY_TOL = 1e-6
MIXTURE_NOISE_FLOOR = 1e-13
DICHOTOMY_SCALES = [0.5, 0.25, 0.125]
THETA_SCAN_EPS = [0.01, 0.02, 0.04, 0.08]
CIRCLE_RATIO_TOL = 1e-9


# =============================================================================
# CONFIGURATION AND REPORTING HELPERS
# =============================================================================


def settings_defaults(command: str, settings: Settings) -> Dict[str, Any]:
    """RunConfig values taken from Settings for a given command.

    Args:
        command: Command name
        settings: Application settings

    Returns:
        Dictionary of RunConfig fields
    """
    values: Dict[str, Any] = {
        "command": command,
        "grid": settings.grid_size,
        "modes": settings.fourier_modes,
        "eps": list(settings.table_eps),
        "radius": [settings.radius],
        "times": list(settings.flow_times),
        "dt": settings.flow_dt,
        "nodes": settings.simplex_nodes,
        "format": settings.output_format,
        "workers": settings.workers,
    }
    if command == "flow":
        values.update(grid=settings.flow_grid_size, modes=settings.flow_modes, eps=[0.05])
    elif command in ("expand", "simplex"):
        values["eps"] = list(settings.fit_window)
    elif command == "theta-scan":
        values["eps"] = list(THETA_SCAN_EPS)
    if command == "simplex":
        values["dim"] = 3
    if command == "mixture":
        values["nodes"] = settings.mixture_nodes
    return values


def load_config_file(path: Path) -> Dict[str, Any]:
    """Read a JSON run-configuration file.

    Args:
        path: Path to a JSON object with RunConfig field names

    Returns:
        The parsed overrides

    Raises:
        ValueError: If the file is not a JSON object or names unknown fields
    """
    data = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError(f"Config file {path} must contain a JSON object")
    unknown = set(data) - set(RunConfig.model_fields)
    if unknown:
        raise ValueError(f"Unknown config fields in {path}: {sorted(unknown)}")
    return data


def build_run_config(
    command: str, config_file: Optional[Path], flags: Dict[str, Any]
) -> RunConfig:
    """Merge Settings defaults, a config file and command-line flags.

    Precedence: flags > config file > defaults.

    Args:
        command: Command name
        config_file: Optional JSON config path
        flags: Flag values; None and empty lists mean "not given"

    Returns:
        Validated RunConfig
    """
    values = settings_defaults(command, get_settings())
    if config_file is not None:
        values.update(load_config_file(config_file))
        values["command"] = command
    values.update(
        {key: value for key, value in flags.items() if value is not None and value != []}
    )
    config = RunConfig(**values)
    logger.debug(f"Run configuration for {command}: {config.model_dump()}")
    return config


def output_path(config: RunConfig, suffix: str = "") -> Path:
    """Report destination: --out, or <output_dir>/<command><suffix>.<format>."""
    if config.out:
        path = Path(config.out)
        return path.with_name(f"{path.stem}{suffix}{path.suffix}") if suffix else path
    return Path(get_settings().output_dir) / f"{config.command}{suffix}.{config.format}"


def save(
    config: RunConfig,
    columns: List[str],
    records: List[Dict[str, Any]],
    failures: List[str],
    suffix: str = "",
) -> Path:
    path = write_report(
        output_path(config, suffix),
        config.format,
        config.command,
        columns,
        records,
        config=config.model_dump(),
        failures=failures,
    )
    print_info(f"Wrote {len(records)} rows to {path}")
    return path


def exit_with_error(command: str, error: Exception) -> NoReturn:
    """Report a computation or configuration failure and exit with code 2."""
    logger.error(f"{command} failed: {error}")
    print_error(f"{command} failed: {error}")
    sys.exit(2)


def finish(command: str, failures: List[str]) -> None:
    """Exit 1 listing failed checks, or report success."""
    if failures:
        logger.warning(f"{command}: {len(failures)} check(s) failed")
        print_error(f"{len(failures)} check(s) failed:")
        for failure in failures:
            console.print(f"  - {failure}")
        sys.exit(1)
    print_success(f"{command}: all checks passed")


def triple_columns(triple: FunctionalTriple) -> Dict[str, Optional[float]]:
    return {
        "I": triple.i_val,
        "Q": triple.q_val,
        "D": triple.d_val,
        "defect": triple.defect,
        "ratio": triple.ratio,
    }


def relative_error(got: float, expected: float) -> float:
    if expected == 0:
        return abs(got)
    return abs(got - expected) / abs(expected)


def coefficient_rows(
    family: str,
    closed: ClosedFormExpansion,
    fitted: Dict[str, ExpansionRecord],
    slope: float,
    tolerance: float,
) -> Tuple[List[Dict[str, Any]], List[str]]:
    """Fitted coefficients next to closed forms, with per-row verdicts.

    Zero closed forms are compared in absolute terms against the slope tolerance.
    """
    comparisons: List[Tuple[str, int, float, float, Optional[float], float]] = []
    for name in ("i", "q", "d"):
        for power in (2, 3):
            comparisons.append(
                (
                    name,
                    power,
                    closed.records[name].coefficient(power),
                    fitted[name].coefficient(power),
                    fitted[name].residual,
                    tolerance,
                )
            )
    if "defect" in fitted:
        comparisons.append(
            (
                "defect",
                5,
                closed.defect.coefficient(5),
                fitted["defect"].coefficient(5),
                fitted["defect"].residual,
                tolerance,
            )
        )
    comparisons.append(("slope", 1, float(closed.slope), slope, None, SLOPE_REL_TOL))

    rows, failures = [], []
    for name, power, expected, got, residual, tol in comparisons:
        error = relative_error(got, expected)
        limit = SLOPE_ABS_TOL if expected == 0 else tol
        passed = error <= limit
        rows.append(
            {
                "family": family,
                "quantity": name,
                "power": power,
                "closed_form": expected,
                "fitted": got,
                "error": error,
                "tolerance": limit,
                "residual": residual,
                "status": "pass" if passed else "fail",
            }
        )
        if not passed:
            failures.append(
                f"{family} {name} eps^{power}: fitted {got:.6g} vs {expected:.6g} "
                f"(error {error:.2e} > {limit:.0e})"
            )
    return rows, failures


COEFFICIENT_COLUMNS = [
    "family",
    "quantity",
    "power",
    "closed_form",
    "fitted",
    "error",
    "tolerance",
    "residual",
    "status",
]


def simplex_expansion(d: int) -> ClosedFormExpansion:
    coeffs = simplex_closed_form_coeffs(d)
    return closed_form_expansion(
        f"simplex-{d}",
        (coeffs.s_d, coeffs.alpha),
        (coeffs.s_d, coeffs.gamma),
        (coeffs.s_d, coeffs.delta),
    )


def family_evaluator(family: str, config: RunConfig) -> Callable[[float], FunctionalTriple]:
    """Map eps to the triple of the named periodic family."""
    if family == "torus":
        grid = PeriodicGrid.square(config.grid)
        block = get_settings().block_rows
        return lambda eps: torus_functionals(
            TorusExpFamily(eps=eps), grid, workers=config.workers, block=block
        )
    if family == "circle":
        line = PeriodicGrid.line(config.grid)
        return lambda eps: circle_functionals(CircleExpFamily(eps=eps), line)
    if family == "simplex":
        return lambda eps: simplex_functionals(
            SimplexExpFamily.of_dimension(eps, config.dim),
            config.nodes,
            budget=get_settings().simplex_budget,
            workers=config.workers,
        )
    raise ValueError(f"Unknown family '{family}' (expected torus, circle or simplex)")


# =============================================================================
# TABLE1 COMMAND
# =============================================================================


def table1(
    eps: Optional[List[float]] = typer.Option(None, "--eps", help="[REPEATABLE] Perturbation size"),
    radius: Optional[List[float]] = typer.Option(None, "--radius", help="[REPEATABLE] Envelope radius R"),
    grid: Optional[int] = typer.Option(None, "--grid", help="Nodes per angle axis"),
    modes: Optional[int] = typer.Option(None, "--modes", help="Fourier truncation M"),
    dim: Optional[int] = typer.Option(
        None, "--dim", help="Lift rows to this dimension (>= 3) with a broad Gaussian block"
    ),
    sigma: Optional[List[float]] = typer.Option(
        None, "--sigma", help="[REPEATABLE] Width of the adjoined Gaussian block"
    ),
    out: Optional[str] = typer.Option(None, "--out", "-o", help="Output file"),
    fmt: Optional[str] = typer.Option(None, "--format", help="Output format: csv or json"),
    workers: Optional[int] = typer.Option(
        None, "--workers", help="Rows computed concurrently (-1: all cores)"
    ),
    config_file: Optional[Path] = typer.Option(None, "--config", help="JSON run configuration"),
):
    """
    Defect table of the Euclidean hexagonal family.

    Computes I, Q, D, the defect I*D - Q^2 and the ratio I*D/Q^2 for every
    (eps, R) and compares rows with published reference values where available.
    With --dim d >= 3 every row is also multiplied by N(0, sigma^2 I_{d-2}) and a
    sibling *_product report checks that the ratio approaches the row's ratio
    as sigma grows.
    """
    try:
        config = build_run_config(
            "table1",
            config_file,
            dict(
                eps=eps,
                radius=radius,
                grid=grid,
                modes=modes,
                dim=dim,
                sigmas=sigma,
                out=out,
                format=fmt,
                workers=workers,
            ),
        )
        if config.dim < 2:
            raise ValueError(f"table1 rows are two-dimensional; --dim must be >= 2, got {config.dim}")
        quad_grid = PeriodicGrid.square(config.grid)
        points = [(r, e) for r in config.radius for e in config.eps]
        with show_progress("table1") as progress:
            progress.add_task(description="Computing Euclidean functionals...", total=None)
            comparisons = parallel_map(
                lambda point: compare_to_reference(
                    defect_report(point[1], point[0], quad_grid, config.modes)
                ),
                points,
                config.workers,
            )

        records, failures = [], []
        product_records: List[Dict[str, Any]] = []
        for (r, e), comparison in zip(points, comparisons):
            report, reference = comparison.report, comparison.reference
            records.append(
                {
                    "eps": report.eps,
                    "radius": report.radius,
                    "I": report.i_val,
                    "Q": report.q_val,
                    "D": report.d_val,
                    "defect": report.defect,
                    "ratio": report.ratio,
                    "ref_I": reference.i_val if reference else None,
                    "ref_Q": reference.q_val if reference else None,
                    "ref_D": reference.d_val if reference else None,
                    "ref_defect": reference.defect if reference else None,
                    "ref_ratio": reference.ratio if reference else None,
                    "status": ("pass" if comparison.passed else "fail")
                    if comparison.checks
                    else "n/a",
                }
            )
            failures.extend(
                f"eps={e} R={r}: {name}" for name, ok in comparison.checks.items() if not ok
            )
            if config.dim > 2:
                base = FunctionalTriple(i_val=report.i_val, q_val=report.q_val, d_val=report.d_val)
                extension = gaussian_extension(base, config.dim - 2, config.sigmas)
                approaches = approaches_base_ratio(base, extension)
                for s, triple in extension:
                    product_records.append(
                        {
                            "d": config.dim,
                            "eps": e,
                            "radius": r,
                            "sigma": s,
                            **triple_columns(triple),
                            "base_ratio": base.ratio,
                            "status": "pass" if approaches else "fail",
                        }
                    )
                if not approaches and len(extension) > 1:
                    failures.append(f"eps={e} R={r}: d={config.dim} ratio does not approach {base.ratio}")

        unchecked = [f"eps={r['eps']} R={r['radius']}" for r in records if r["status"] == "n/a"]
        if unchecked:
            print_warning(f"No reference values for {', '.join(unchecked)}")
        columns = list(records[0].keys())
        print_records(
            "Euclidean defect table",
            ["eps", "radius", "I", "Q", "D", "defect", "ratio", "status"],
            records,
        )
        save(config, columns, records, failures)
        if product_records:
            product_columns = ["d", "eps", "radius", "sigma", "I", "Q", "D", "defect", "ratio"]
            product_columns += ["base_ratio", "status"]
            print_records(
                f"Products with N(0, sigma^2 I_{config.dim - 2})",
                ["d", "eps", "radius", "sigma", "defect", "ratio", "status"],
                product_records,
            )
            save(config, product_columns, product_records, failures, suffix="_product")
    except SERVICE_ERRORS as e:
        exit_with_error("table1", e)
    finish("table1", failures)


# =============================================================================
# AVERAGES COMMAND
# =============================================================================


def averages(
    grid: Optional[int] = typer.Option(None, "--grid", help="Nodes per angle axis"),
    out: Optional[str] = typer.Option(None, "--out", "-o", help="Output file"),
    fmt: Optional[str] = typer.Option(None, "--format", help="Output format: csv or json"),
    workers: Optional[int] = typer.Option(
        None, "--workers", help="Averages computed concurrently (-1: all cores)"
    ),
    config_file: Optional[Path] = typer.Option(None, "--config", help="JSON run configuration"),
):
    """
    Haar averages of the hexagonal field against their closed forms.
    """
    try:
        config = build_run_config(
            "averages", config_file, dict(grid=grid, out=out, format=fmt, workers=workers)
        )
        table = hexagonal_average_table(PeriodicGrid.square(config.grid), workers=config.workers)
        deltas = table.deltas()
        records = [
            {
                "name": name,
                "value": value,
                "closed_form": str(table.closed_forms[name]),
                "delta": deltas[name],
                "status": "pass" if deltas[name] <= AVERAGE_TOL else "fail",
            }
            for name, value in table.values.items()
        ]
        failures = [
            f"{r['name']}: delta {r['delta']:.2e} > {AVERAGE_TOL:.0e}"
            for r in records
            if r["status"] == "fail"
        ]
        columns = ["name", "value", "closed_form", "delta", "status"]
        print_records(f"Hexagonal averages ({config.grid}x{config.grid})", columns, records)
        save(config, columns, records, failures)
    except SERVICE_ERRORS as e:
        exit_with_error("averages", e)
    finish("averages", failures)


# =============================================================================
# EXPAND COMMAND
# =============================================================================


def expand(
    family: str = typer.Option("torus", "--family", help="torus, circle or simplex"),
    eps: Optional[List[float]] = typer.Option(None, "--eps", help="[REPEATABLE] Fit window value"),
    dim: Optional[int] = typer.Option(None, "--dim", help="Simplex dimension"),
    grid: Optional[int] = typer.Option(None, "--grid", help="Nodes per angle axis"),
    nodes: Optional[int] = typer.Option(None, "--nodes", help="Nodes per simplex angle"),
    out: Optional[str] = typer.Option(None, "--out", "-o", help="Output file"),
    fmt: Optional[str] = typer.Option(None, "--format", help="Output format: csv or json"),
    workers: Optional[int] = typer.Option(None, "--workers", help="Quadrature workers (-1: all cores)"),
    config_file: Optional[Path] = typer.Option(None, "--config", help="JSON run configuration"),
):
    """
    Fitted series coefficients next to their closed forms.

    Fits the eps^2 and eps^3 coefficients of I, Q, D, the eps^5 coefficient of
    the defect and the quotient slope over the eps window.
    """
    try:
        config = build_run_config(
            "expand",
            config_file,
            dict(eps=eps, dim=dim, grid=grid, nodes=nodes, out=out, format=fmt, workers=workers),
        )
        if family == "torus":
            closed, tolerance = closed_form_torus(), TORUS_COEFF_TOL
        elif family == "circle":
            closed, tolerance = closed_form_circle(), TORUS_COEFF_TOL
        else:
            closed, tolerance = simplex_expansion(config.dim), SIMPLEX_COEFF_TOL
        evaluator = family_evaluator(family, config)

        with show_progress("expand") as progress:
            progress.add_task(description=f"Fitting {family} coefficients...", total=None)
            fitted = fit_coefficients(evaluator, (2, 3), config.eps, family=closed.family)
            if family != "circle":
                fitted.update(
                    fit_coefficients(
                        evaluator, (5, 6), config.eps, quantities=("defect",), family=closed.family
                    )
                )
            slope = quotient_slope(evaluator, config.eps)

        records, failures = coefficient_rows(closed.family, closed, fitted, slope, tolerance)
        print_records(
            f"Series coefficients ({closed.family})",
            ["quantity", "power", "closed_form", "fitted", "error", "status"],
            records,
        )
        save(config, COEFFICIENT_COLUMNS, records, failures)
    except SERVICE_ERRORS as e:
        exit_with_error("expand", e)
    finish("expand", failures)


# =============================================================================
# SIMPLEX COMMAND
# =============================================================================


def simplex(
    dim: Optional[int] = typer.Option(None, "--dim", help="Simplex dimension d (2..6)"),
    eps: Optional[List[float]] = typer.Option(None, "--eps", help="[REPEATABLE] Perturbation size"),
    nodes: Optional[int] = typer.Option(None, "--nodes", help="Nodes per simplex angle"),
    radius: Optional[List[float]] = typer.Option(
        None, "--radius", help="[REPEATABLE] Envelope radius for Euclidean rows"
    ),
    euclidean: bool = typer.Option(False, "--euclidean", help="Add Euclidean rows (d <= 3)"),
    fit: bool = typer.Option(True, "--fit/--no-fit", help="Fit coefficients against closed forms"),
    out: Optional[str] = typer.Option(None, "--out", "-o", help="Output file"),
    fmt: Optional[str] = typer.Option(None, "--format", help="Output format: csv or json"),
    workers: Optional[int] = typer.Option(None, "--workers", help="Quadrature workers (-1: all cores)"),
    config_file: Optional[Path] = typer.Option(None, "--config", help="JSON run configuration"),
):
    """
    Functionals of the simplex family and its series coefficients.

    Writes the functionals table and, with --fit, a sibling *_coefficients
    report comparing fitted coefficients with the closed forms.
    """
    try:
        config = build_run_config(
            "simplex",
            config_file,
            dict(dim=dim, eps=eps, nodes=nodes, radius=radius, out=out, format=fmt, workers=workers),
        )
        evaluator = family_evaluator("simplex", config)
        records: List[Dict[str, Any]] = []
        failures: List[str] = []
        with show_progress("simplex") as progress:
            progress.add_task(description=f"Simplex d={config.dim}...", total=None)
            for e in config.eps:
                records.append({"d": config.dim, "eps": e, "radius": None, **triple_columns(evaluator(e))})
            if euclidean:
                for r in config.radius:
                    for e in config.eps:
                        triple = simplex_euclidean_functionals(e, r, config.dim, config.nodes)
                        records.append({"d": config.dim, "eps": e, "radius": r, **triple_columns(triple)})

            coefficient_records: List[Dict[str, Any]] = []
            if fit:
                closed = simplex_expansion(config.dim)
                fitted = fit_coefficients(evaluator, (2, 3), config.eps, family=closed.family)
                fitted.update(
                    fit_coefficients(
                        evaluator, (5, 6), config.eps, quantities=("defect",), family=closed.family
                    )
                )
                slope = quotient_slope(evaluator, config.eps)
                coefficient_records, failures = coefficient_rows(
                    closed.family, closed, fitted, slope, SIMPLEX_COEFF_TOL
                )

        columns = ["d", "eps", "radius", "I", "Q", "D", "defect", "ratio"]
        print_records(f"Simplex functionals (d={config.dim})", columns, records)
        save(config, columns, records, failures)
        if coefficient_records:
            print_records(
                f"Simplex coefficients (d={config.dim})",
                ["quantity", "power", "closed_form", "fitted", "error", "status"],
                coefficient_records,
            )
            save(config, COEFFICIENT_COLUMNS, coefficient_records, failures, suffix="_coefficients")
    except SERVICE_ERRORS as e:
        exit_with_error("simplex", e)
    finish("simplex", failures)


# =============================================================================
# FLOW COMMAND
# =============================================================================


def flow(
    eps: Optional[float] = typer.Option(None, "--eps", help="Perturbation size"),
    times: Optional[List[float]] = typer.Option(None, "--times", help="[REPEATABLE] Evaluation time"),
    dt: Optional[float] = typer.Option(None, "--dt", help="Finite-difference step"),
    grid: Optional[int] = typer.Option(None, "--grid", help="Nodes per angle axis"),
    modes: Optional[int] = typer.Option(None, "--modes", help="Fourier truncation M"),
    out: Optional[str] = typer.Option(None, "--out", "-o", help="Output file"),
    fmt: Optional[str] = typer.Option(None, "--format", help="Output format: csv or json"),
    workers: Optional[int] = typer.Option(
        None, "--workers", help="Times checked concurrently (-1: all cores)"
    ),
    config_file: Optional[Path] = typer.Option(None, "--config", help="JSON run configuration"),
):
    """
    Heat-flow profile of the torus family with identity residuals.

    Checks I' = -Q and I'' = D by central differences (with their convergence
    order under dt halving), negativity of Phi = I D - Q^2, monotone decay of I
    and the semigroup property of the spectral evolution.
    """
    try:
        config = build_run_config(
            "flow",
            config_file,
            dict(
                eps=[eps] if eps is not None else None,
                times=times,
                dt=dt,
                grid=grid,
                modes=modes,
                out=out,
                format=fmt,
                workers=workers,
            ),
        )
        family = TorusExpFamily(eps=config.eps[0])
        quad_grid = PeriodicGrid.square(config.grid)
        with show_progress("flow") as progress:
            progress.add_task(description="Evolving under the heat semigroup...", total=None)
            report = verify_identities(
                family, config.times, config.dt, quad_grid, config.modes, workers=config.workers
            )

            t1 = config.times[0]
            t2 = config.times[-1] - t1 if len(config.times) > 1 else t1
            composed = evolve_further(evolve(family, t1, quad_grid, config.modes), t2)
            direct = evolve(family, t1 + t2, quad_grid, config.modes)
            semigroup_gap = float(np.max(np.abs(composed.table.coeffs - direct.table.coeffs)))

        profile = FlowProfile(
            times=[c.t for c in report.checks],
            triples=[c.triple for c in report.checks],
            phi_defect=[c.triple.defect for c in report.checks],
        )
        records = []
        for row, check in zip(profile.rows(), report.checks):
            row.update(
                dI_dt=check.first_difference,
                d2I_dt2=check.second_difference,
                residual_first=check.residual_first,
                residual_second=check.residual_second,
                order_first=check.order_first,
                order_second=check.order_second,
            )
            records.append(row)

        checks: Dict[str, bool] = {}
        low, high = FLOW_ORDER_RANGE
        for check, phi in zip(report.checks, profile.phi_defect):
            checks[f"Phi(t={check.t}) < 0"] = phi < 0
            checks[f"|I' + Q| at t={check.t}"] = check.residual_first <= FLOW_RESIDUAL_TOL
            checks[f"|I'' - D| at t={check.t}"] = check.residual_second <= FLOW_RESIDUAL_TOL
            if check.residual_first > 1e-12:
                checks[f"order of I' at t={check.t}"] = low <= check.order_first <= high
            if check.residual_second > 1e-12:
                checks[f"order of I'' at t={check.t}"] = low <= check.order_second <= high
        i_values = [tr.i_val for tr in profile.triples]
        checks["I decreasing"] = all(b < a for a, b in zip(i_values, i_values[1:]))
        checks["semigroup"] = semigroup_gap <= SEMIGROUP_TOL

        columns = list(records[0].keys())
        print_records(f"Heat flow (eps={family.eps})", ["t", "I", "Q", "D", "defect", "ratio"], records)
        print_checks(checks)
        failures = [name for name, ok in checks.items() if not ok]
        save(config, columns, records, failures)
    except SERVICE_ERRORS as e:
        exit_with_error("flow", e)
    finish("flow", failures)


# =============================================================================
# MIXTURE COMMAND
# =============================================================================


def mixture(
    eta: Optional[float] = typer.Option(None, "--eta", help="Bump mass in (0, 1)"),
    scale: Optional[float] = typer.Option(None, "--scale", help="Bump scale r"),
    separations: Optional[List[float]] = typer.Option(
        None, "--separation", help="[REPEATABLE] Separation L"
    ),
    nodes: Optional[int] = typer.Option(None, "--nodes", help="Quadrature nodes per window"),
    dichotomy: bool = typer.Option(False, "--dichotomy", help="Add the eta = r^3 sweep"),
    out: Optional[str] = typer.Option(None, "--out", "-o", help="Output file"),
    fmt: Optional[str] = typer.Option(None, "--format", help="Output format: csv or json"),
    workers: Optional[int] = typer.Option(
        None, "--workers", help="Separations computed concurrently (-1: all cores)"
    ),
    config_file: Optional[Path] = typer.Option(None, "--config", help="JSON run configuration"),
):
    """
    Separated Gaussian mixtures against the additivity prediction.

    Deviation from (1 - eta) T[h] + eta T[g_r] must decrease along the
    separation sweep and fall below 1e-6 once L >= 25.
    """
    try:
        config = build_run_config(
            "mixture",
            config_file,
            dict(
                eta=eta,
                scale=scale,
                separations=separations,
                nodes=nodes,
                out=out,
                format=fmt,
                workers=workers,
            ),
        )
        records: List[Dict[str, Any]] = []
        deviations: List[float] = []
        with show_progress("mixture") as progress:
            progress.add_task(description="Integrating mixtures...", total=None)

            def evaluate(L: float) -> Tuple[FunctionalTriple, FunctionalTriple]:
                spec = MixtureSpec(r=config.scale, eta=config.eta, separation=L)
                return (
                    mixture_functionals(spec, config.nodes),
                    additivity_prediction(spec, config.nodes),
                )

            results = parallel_map(evaluate, config.separations, config.workers)
            for L, (triple, expected) in zip(config.separations, results):
                deviation = max(
                    abs(triple.i_val - expected.i_val),
                    abs(triple.q_val - expected.q_val),
                    abs(triple.d_val - expected.d_val),
                )
                deviations.append(deviation)
                records.append(
                    {"L": L, "r": config.scale, "eta": config.eta, **triple_columns(triple), "deviation": deviation}
                )
            if dichotomy:
                for r, w, triple in dichotomy_sweep(
                    DICHOTOMY_SCALES, separation=max(config.separations), nodes=config.nodes
                ):
                    records.append(
                        {"L": max(config.separations), "r": r, "eta": w, **triple_columns(triple), "deviation": None}
                    )

        failures = []
        sweep = list(zip(config.separations, deviations))
        for (L_a, dev_a), (L_b, dev_b) in zip(sweep, sweep[1:]):
            if L_b > L_a and dev_b > max(dev_a, MIXTURE_NOISE_FLOOR):
                failures.append(f"deviation grew from {dev_a:.2e} (L={L_a}) to {dev_b:.2e} (L={L_b})")
        for L, dev in zip(config.separations, deviations):
            if L >= 25 and dev >= MIXTURE_ADDITIVITY_TOL:
                failures.append(f"L={L}: deviation {dev:.2e} >= {MIXTURE_ADDITIVITY_TOL:.0e}")

        columns = ["L", "r", "eta", "I", "Q", "D", "defect", "ratio", "deviation"]
        print_records("Separated mixtures", columns, records)
        save(config, columns, records, failures)
    except SERVICE_ERRORS as e:
        exit_with_error("mixture", e)
    finish("mixture", failures)


# =============================================================================
# THETA-SCAN COMMAND
# =============================================================================


def theta_scan(
    eps: Optional[List[float]] = typer.Option(None, "--eps", help="[REPEATABLE] Perturbation size"),
    dim: Optional[int] = typer.Option(None, "--dim", help="Also scan the simplex family in this dimension (>= 3)"),
    grid: Optional[int] = typer.Option(None, "--grid", help="Nodes per angle axis"),
    nodes: Optional[int] = typer.Option(None, "--nodes", help="Nodes per simplex angle"),
    out: Optional[str] = typer.Option(None, "--out", "-o", help="Output file"),
    fmt: Optional[str] = typer.Option(None, "--format", help="Output format: csv or json"),
    workers: Optional[int] = typer.Option(None, "--workers", help="Quadrature workers (-1: all cores)"),
    config_file: Optional[Path] = typer.Option(None, "--config", help="JSON run configuration"),
):
    """
    Ratio scans I*D/Q^2 over eps for the circle, torus and simplex families.

    The smallest observed ratio per dimension bounds the sharp constant from
    above. Circle ratios must stay at or above 1 and torus ratios at or above 1/2.
    """
    try:
        config = build_run_config(
            "theta-scan",
            config_file,
            dict(eps=eps, dim=dim, grid=grid, nodes=nodes, out=out, format=fmt, workers=workers),
        )
        families = [("circle", 1), ("torus", 2)]
        if config.dim >= 3:
            families.append(("simplex", config.dim))

        records, failures = [], []
        minima: Dict[str, float] = {}
        with show_progress("theta-scan") as progress:
            progress.add_task(description="Scanning ratios...", total=None)
            for name, d in families:
                evaluator = family_evaluator(name, config)
                for e in config.eps:
                    triple = evaluator(e)
                    records.append({"family": name, "d": d, "eps": e, **triple_columns(triple)})
                    if triple.ratio is None:
                        continue
                    minima[name] = min(minima.get(name, float("inf")), triple.ratio)
                    if name == "circle" and triple.ratio < 1.0 - CIRCLE_RATIO_TOL:
                        failures.append(f"circle eps={e}: ratio {triple.ratio:.12f} < 1")
                    if name == "torus" and triple.ratio < 0.5:
                        failures.append(f"torus eps={e}: ratio {triple.ratio:.12f} < 1/2")

        columns = ["family", "d", "eps", "I", "Q", "D", "defect", "ratio"]
        print_records("Ratio scan", columns, records)
        for name, d in families:
            if name in minima:
                print_info(f"{name} (d={d}): smallest ratio {minima[name]:.9f}")
        save(config, columns, records, failures)
    except SERVICE_ERRORS as e:
        exit_with_error("theta-scan", e)
    finish("theta-scan", failures)
