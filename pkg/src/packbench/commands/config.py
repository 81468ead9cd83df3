"""Training configuration commands."""

from __future__ import annotations

from pathlib import Path
from typing import Annotated, Any

import typer
from rich import print
from rich.table import Table

from packbench.commands.completions import completion_presets
from packbench.config import (
    DEFAULT_PRESET,
    PRESETS,
    load_train_config,
    preset_config,
    resolve_config_path,
    save_config,
)
from packbench.helpers import OutputFormat, dump_text


app = typer.Typer(help="Inspect and create training configs")

PresetOption = Annotated[
    str,
    typer.Option(help="Base preset: smoke, desk or large", autocompletion=completion_presets),
]


def _check_preset(preset: str) -> None:
    """Reject unknown preset names as a usage error.

    Args:
        preset: Preset name.

    Raises:
        typer.BadParameter: If the preset does not exist.
    """
    if preset not in PRESETS:
        raise typer.BadParameter(f"Unknown preset '{preset}'. Available presets: {', '.join(PRESETS)}")


def _print_config_table(data: dict[str, Any]) -> None:
    """Print a flattened config as a two-column table.

    Args:
        data: Config dump; the nested policy section is shown as ``policy.<field>``.
    """
    table = Table(show_header=True)
    table.add_column("Field", style="cyan")
    table.add_column("Value")
    for key, value in data.items():
        if isinstance(value, dict):
            for sub_key, sub_value in value.items():
                table.add_row(f"{key}.{sub_key}", str(sub_value))
        else:
            table.add_row(key, str(value))
    print(table)


@app.command()
def show(
    config: Annotated[Path | None, typer.Option("--config", help="YAML config file")] = None,
    preset: PresetOption = DEFAULT_PRESET,
    output: Annotated[OutputFormat, typer.Option("--output", help="Output format")] = OutputFormat.TABLE,
):
    """Show the resolved training config and where it came from."""
    _check_preset(preset)
    source = resolve_config_path(config)
    resolved = load_train_config(config, preset)
    data = resolved.model_dump(mode="json")
    if output != OutputFormat.TABLE:
        typer.echo(dump_text(data, output))
        return

    origin = f"{source} over preset '{preset}'" if source is not None else f"preset '{preset}'"
    print(f"[bold]Source:[/bold] {origin}")
    _print_config_table(data)


@app.command()
def init(
    path: Annotated[Path, typer.Argument(help="Destination YAML file")],
    preset: PresetOption = DEFAULT_PRESET,
    force: Annotated[bool, typer.Option("--force", "-f", help="Overwrite an existing file")] = False,
):
    """Write a preset to a YAML file for editing.

    Raises:
        typer.Exit: If the file exists and --force was not given.
    """
    _check_preset(preset)
    if path.exists() and not force:
        print(f"[red]✗[/red] {path} already exists (use --force to overwrite)")
        raise typer.Exit(1)

    save_config(preset_config(preset), path)
    print(f"[green]✓[/green] Wrote preset '{preset}' to {path}")
