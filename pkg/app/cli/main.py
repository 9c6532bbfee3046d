"""Main CLI entry point for FisherFlow.

This module sets up the Typer application and registers all commands.
"""

import logging
import typer
from typing import Optional

from app.cli.utils import console
from app.cli import commands
from app.config import Settings, get_settings


__version__ = "0.1.0"

# Create the main Typer app
app = typer.Typer(
    name="fisherflow",
    help="FisherFlow - Fisher-information functionals along the heat flow",
    add_completion=True,
    rich_markup_mode="rich",
    no_args_is_help=True,
)


def configure_logging(settings: Settings, verbose: bool = False) -> None:
    """Configure logging with a console handler and an optional file handler.

    Args:
        settings: Application settings (log level and log file)
        verbose: Force DEBUG level
    """
    handlers = [logging.StreamHandler()]
    if settings.log_file:
        handlers.append(logging.FileHandler(settings.log_file))

    level = logging.DEBUG if verbose else getattr(logging, settings.log_level.upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=handlers,
    )


def version_callback(value: bool):
    """Show version information."""
    if value:
        console.print(f"[cyan]FisherFlow[/cyan] version [bold]{__version__}[/bold]")
        console.print("Fisher-information functionals along the heat flow")
        raise typer.Exit()


@app.callback()
def main(
    version: Optional[bool] = typer.Option(
        None,
        "--version",
        "-v",
        help="Show version information",
        callback=version_callback,
        is_eager=True,
    ),
    verbose: bool = typer.Option(
        False,
        "--verbose",
        help="Enable verbose output",
    ),
):
    """
    FisherFlow - Fisher-information functionals along the heat flow.

    Computes I, Q, D and the log-convexity defect I*D - Q^2 for periodic,
    Euclidean, simplex, product and mixture densities.
    """
    configure_logging(get_settings(), verbose)
    if verbose:
        console.print("[dim]Verbose mode enabled[/dim]")


# Register commands
app.command(name="table1")(commands.table1)
app.command(name="averages")(commands.averages)
app.command(name="expand")(commands.expand)
app.command(name="simplex")(commands.simplex)
app.command(name="flow")(commands.flow)
app.command(name="mixture")(commands.mixture)
app.command(name="theta-scan")(commands.theta_scan)


def run():
    """Run the CLI application."""
    app()


if __name__ == "__main__":
    run()
