"""CLI utility functions for FisherFlow.

This module provides helper functions for pretty printing and for writing reports.
"""

import csv
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from rich.console import Console
from rich.progress import Progress, SpinnerColumn, TextColumn
from rich.table import Table
from rich import box


console = Console()


def print_success(message: str) -> None:
    """Print a success message in green.

    Args:
        message: The success message to display
    """
    console.print(f"[green]:heavy_check_mark: {message}[/green]")


def print_error(message: str) -> None:
    """Print an error message in red.

    Args:
        message: The error message to display
    """
    console.print(f"[red]:x: {message}[/red]")


def print_warning(message: str) -> None:
    """Print a warning message in yellow.

    Args:
        message: The warning message to display
    """
    console.print(f"[yellow]:warning: {message}[/yellow]")


def print_info(message: str) -> None:
    """Print an info message in blue.

    Args:
        message: The info message to display
    """
    console.print(f"[blue]:information: {message}[/blue]")


def format_value(value: Any) -> str:
    """Serialize a report cell: floats with 17 significant digits, None as empty.

    Args:
        value: Cell value

    Returns:
        String representation used in CSV files
    """
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def format_short(value: Any) -> str:
    """Compact representation for console tables."""
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def print_table(
    title: str,
    columns: List[Dict[str, str]],
    rows: List[List[Any]],
    show_header: bool = True,
) -> None:
    """Print a formatted table.

    Args:
        title: The table title
        columns: List of column definitions with 'name' and optional 'style'
        rows: List of row data
        show_header: Whether to show the header row
    """
    table = Table(
        title=title,
        show_header=show_header,
        header_style="bold magenta",
        box=box.ROUNDED,
        title_style="bold cyan",
    )

    for col in columns:
        table.add_column(
            col["name"],
            style=col.get("style", ""),
            no_wrap=col.get("no_wrap", False),
        )

    for row in rows:
        table.add_row(*[format_short(cell) for cell in row])

    console.print(table)


def print_records(title: str, columns: Sequence[str], records: List[Dict[str, Any]]) -> None:
    """Print report rows as a table with the given column order."""
    if not records:
        print_info("No rows to display.")
        return
    print_table(
        title,
        [{"name": name, "style": "cyan" if i == 0 else ""} for i, name in enumerate(columns)],
        [[record.get(name) for name in columns] for record in records],
    )


def print_checks(checks: Dict[str, bool]) -> None:
    """Print a PASS/FAIL summary of named tolerance checks.

    Args:
        checks: Mapping of check name to verdict
    """
    table = Table(box=box.ROUNDED, show_header=True, header_style="bold magenta")
    table.add_column("Check", style="cyan")
    table.add_column("Status", justify="center")

    for check, passed in checks.items():
        status = "[green]:heavy_check_mark: PASS[/green]" if passed else "[red]:x: FAIL[/red]"
        table.add_row(check, status)

    console.print(table)


def write_csv(path: Path, columns: Sequence[str], records: List[Dict[str, Any]]) -> None:
    """Write rows to CSV with a mandatory header row.

    Args:
        path: Destination file
        columns: Column order
        records: Rows keyed by column name
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(columns)
        for record in records:
            writer.writerow([format_value(record.get(name)) for name in columns])


def write_json(path: Path, payload: Dict[str, Any]) -> None:
    """Write a JSON report whose float cells use the CSV 17-digit text.

    Args:
        path: Destination file
        payload: Report content
    """

    def convert(value: Any) -> Any:
        if isinstance(value, dict):
            return {str(k): convert(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [convert(v) for v in value]
        if isinstance(value, float):
            return float(format_value(value))
        return value

    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(convert(payload), indent=2) + "\n", encoding="utf-8")


def write_report(
    path: Path,
    fmt: str,
    command: str,
    columns: Sequence[str],
    records: List[Dict[str, Any]],
    config: Optional[Dict[str, Any]] = None,
    failures: Optional[List[str]] = None,
) -> Path:
    """Write a command report in the requested format.

    Args:
        path: Destination file
        fmt: 'csv' or 'json'
        command: Command name stored in JSON reports
        columns: Column order
        records: Rows keyed by column name
        config: Run configuration stored in JSON reports
        failures: Failed checks stored in JSON reports

    Returns:
        The written path
    """
    if fmt == "json":
        write_json(
            path,
            {
                "command": command,
                "config": config or {},
                "columns": list(columns),
                "rows": [{name: record.get(name) for name in columns} for record in records],
                "failures": failures or [],
            },
        )
    else:
        write_csv(path, columns, records)
    return path


def show_progress(description: str):
    """Create a progress context manager for long operations.

    Args:
        description: Description of the operation

    Returns:
        Progress context manager
    """
    return Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        console=console,
        transient=True,
    )
