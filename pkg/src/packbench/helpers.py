"""CLI helpers: bin-size parsing, result rendering and durable file writes."""

from __future__ import annotations

import json
import os
import re
import tempfile
from enum import StrEnum
from pathlib import Path
from typing import TYPE_CHECKING, Any

import typer
import yaml
from rich.console import Console
from rich.table import Table

from packbench.bin import BinDims


if TYPE_CHECKING:
    from collections.abc import Sequence


console = Console()

_BIN_PATTERN = re.compile(r"^\s*(\d+)\s*[xX]\s*(\d+)\s*[xX]\s*(\d+)\s*$")
_METRIC_TEMPLATES = {"uti": "{:.1%}", "sta": "{:.3f}", "num": "{:.1f}"}


class OutputFormat(StrEnum):
    """How commands print summary rows and configs."""

    TABLE = "table"
    JSON = "json"
    YAML = "yaml"


def metric_text(column: str, value: Any) -> str:
    """Display text for one summary value.

    Uti is shown as a percentage and Num with one decimal, the precision
    results are reported at; Sta keeps three decimals.

    Args:
        column: Summary column name.
        value: Raw value; ``None`` for a failed cell.

    Returns:
        Text for a table cell.
    """
    if value is None:
        return "-"
    template = _METRIC_TEMPLATES.get(column)
    return template.format(value) if template is not None else str(value)


def results_table(rows: Sequence[dict[str, Any]], title: str | None = None) -> Table:
    """Build a Method/Env/Uti/Sta/Num/Count table from summary rows.

    Args:
        rows: Summary rows; a row with a non-empty ``error`` is shown as failed.
        title: Optional table title.

    Returns:
        Renderable table.
    """
    table = Table(title=title)
    table.add_column("Method", style="cyan")
    table.add_column("Env")
    table.add_column("Uti", justify="right")
    table.add_column("Sta", justify="right")
    table.add_column("Num", justify="right")
    table.add_column("Count", justify="right", style="dim")

    for row in rows:
        if row.get("error"):
            table.add_row(row["method"], row["env"], "[red]failed[/red]", "-", "-", f"[red]{row['error']}[/red]")
            continue
        metrics = (metric_text(column, row.get(column)) for column in ("uti", "sta", "num"))
        table.add_row(row["method"], row["env"], *metrics, str(row["count"]))
    return table


def dump_text(data: list[dict[str, Any]] | dict[str, Any], format: OutputFormat) -> str:
    """Serialize rows or a config for JSON or YAML output.

    Args:
        data: Summary rows or a config dump.
        format: JSON or YAML.

    Returns:
        Serialized text.

    Raises:
        ValueError: For the table format, which has no text dump.
    """
    if format == OutputFormat.JSON:
        return json.dumps(data, indent=2, default=str)
    if format == OutputFormat.YAML:
        return yaml.dump(data, default_flow_style=False, sort_keys=False)
    raise ValueError(f"{format} output is rendered, not dumped")


def output_results(
    data: list[dict[str, Any]] | dict[str, Any],
    format: OutputFormat,
    title: str | None = None,
) -> None:
    """Print summary rows as a results table or as JSON/YAML.

    Args:
        data: One summary row or a list of them; raw metric values are kept in dumps.
        format: Output format.
        title: Table title.
    """
    if format == OutputFormat.TABLE:
        console.print(results_table([data] if isinstance(data, dict) else data, title))
    else:
        typer.echo(dump_text(data, format))


def parse_bin_dims(text: str) -> BinDims:
    """Parse a bin size written as ``LxWxH``.

    Args:
        text: Size such as ``10x10x10``.

    Returns:
        Parsed bin dimensions.

    Raises:
        ValueError: If the text is not three positive integers joined by ``x``.
    """
    match = _BIN_PATTERN.match(text)
    if match is None:
        raise ValueError(f"Invalid bin size: {text!r}. Expected 'LxWxH', e.g. '10x10x10'.")

    length, width, height = (int(group) for group in match.groups())
    if min(length, width, height) < 1:
        raise ValueError(f"Invalid bin size: {text!r}. Every dimension must be positive.")

    return BinDims(length, width, height)


def bin_dims_option(text: str) -> BinDims:
    """Typer parser for ``--bin`` options.

    Args:
        text: Size such as ``10x10x10``.

    Returns:
        Parsed bin dimensions.

    Raises:
        typer.BadParameter: If the text is not a valid bin size.
    """
    try:
        return parse_bin_dims(text)
    except ValueError as e:
        raise typer.BadParameter(str(e)) from e


def _fsync_directory(directory: Path) -> None:
    """Flush a directory's metadata so a rename is durable on crash.

    Silently ignores platforms where the syscall is not supported.

    Args:
        directory: Directory whose metadata should be flushed.
    """
    try:
        dir_fd = os.open(str(directory), os.O_RDONLY | os.O_DIRECTORY)
    except OSError:
        return

    try:
        os.fsync(dir_fd)
    except OSError:
        pass
    finally:
        os.close(dir_fd)


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Atomically replace ``path`` with ``data``.

    Writes to a sibling tempfile, fsyncs it, renames it over the destination
    and fsyncs the parent directory. Readers never observe a partial file, so
    an interrupted training run leaves the previous checkpoint intact.

    Args:
        path: Destination file.
        data: Bytes to write.
    """
    path.parent.mkdir(parents=True, exist_ok=True)

    fd, tmp_path = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=str(path.parent))
    try:
        with os.fdopen(fd, "wb") as tmp_handle:
            tmp_handle.write(data)
            tmp_handle.flush()
            os.fsync(tmp_handle.fileno())
        os.replace(tmp_path, path)
    except Exception:
        try:
            os.unlink(tmp_path)
        except OSError:
            pass
        raise

    _fsync_directory(path.parent)


def atomic_write_text(path: Path, text: str) -> None:
    """Atomically replace ``path`` with UTF-8 ``text``.

    Args:
        path: Destination file.
        text: Text to write.
    """
    atomic_write_bytes(path, text.encode("utf-8"))
