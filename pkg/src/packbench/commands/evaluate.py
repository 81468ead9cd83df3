"""Evaluation commands: single-policy eval, benchmark tables and scene export."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated

import typer
from rich.console import Console

from packbench.bench import (
    BenchCell,
    bench_table,
    cell_rows,
    evaluate,
    export_scenes as write_scenes,
    resolve_env,
    write_instances_csv,
    write_summary_csv,
)
from packbench.bin import BinDims
from packbench.commands.completions import completion_env_specs, completion_policy_specs
from packbench.dataset import DEFAULT_SEQUENCE_LENGTH
from packbench.helpers import OutputFormat, bin_dims_option, output_results
from packbench.placement import DEFAULT_EMS_CAPACITY


console = Console()

PolicyOption = Annotated[
    str,
    typer.Option(
        "--policy",
        "-p",
        help="online_bph, best_fit, heightmap_min, random, ckpt:PATH or a plugin",
        autocompletion=completion_policy_specs,
    ),
]
EnvOption = Annotated[
    str,
    typer.Option(
        "--dataset",
        "-d",
        help="Dataset file or bin-K (a Bin-10 set scaled by K/10)",
        autocompletion=completion_env_specs,
    ),
]
CountOption = Annotated[int, typer.Option(min=1, help="Instances for bin-K environments")]
SeedOption = Annotated[int, typer.Option(help="Seed for generated environments and stochastic policies")]
EmsCapOption = Annotated[int, typer.Option(min=1, help="EMS capacity N")]
WorkersOption = Annotated[int, typer.Option(min=1, help="Worker processes")]
LengthOption = Annotated[int, typer.Option(min=1, help="Items per generated sequence")]
OutputOption = Annotated[OutputFormat, typer.Option("--output", help="Output format")]
BinOption = Annotated[
    str | None,
    typer.Option("--bin", help="Scale the dataset onto this bin size LxWxH (an integer multiple of its bin)"),
]


def _bin(text: str | None) -> BinDims | None:
    return bin_dims_option(text) if text is not None else None


def eval_policy(
    policy: PolicyOption,
    dataset: EnvOption = "bin-10",
    bin: BinOption = None,
    count: CountOption = 1000,
    seed: SeedOption = 42,
    ems_cap: EmsCapOption = DEFAULT_EMS_CAPACITY,
    workers: WorkersOption = 1,
    length: LengthOption = DEFAULT_SEQUENCE_LENGTH,
    out: Annotated[Path | None, typer.Option("--out", "-o", "--report", help="Write the summary row as CSV")] = None,
    instances: Annotated[Path | None, typer.Option(help="Write per-instance utilization as CSV")] = None,
    scenes: Annotated[Path | None, typer.Option(help="Write one JSON scene dump per instance here")] = None,
    output: OutputOption = OutputFormat.TABLE,
):
    """Evaluate one policy greedily on every instance of a dataset."""
    env_name, data = resolve_env(dataset, count, seed, length, _bin(bin))
    result = evaluate(policy, env_name, data, ems_cap, seed, workers)
    cells = [BenchCell(result.method, env_name, result)]

    output_results(result.to_row(), output)
    if output == OutputFormat.TABLE:
        console.print(f"[dim]{result.count} instances in {result.wall_time:.1f}s[/dim]")

    if out is not None:
        write_summary_csv(cells, out)
        console.print(f"[green]✓[/green] Summary written to {out}")
    if instances is not None:
        write_instances_csv(result, instances)
        console.print(f"[green]✓[/green] Per-instance results written to {instances}")
    if scenes is not None:
        paths = write_scenes(result, data.dims, scenes)
        console.print(f"[green]✓[/green] {len(paths)} scenes written to {scenes}")


def bench(
    method: Annotated[
        list[str],
        typer.Option("--method", "-m", help="Policy spec; repeat for several", autocompletion=completion_policy_specs),
    ],
    env: Annotated[
        list[str],
        typer.Option("--env", "-e", help="Environment spec; repeat for several", autocompletion=completion_env_specs),
    ],
    bin: BinOption = None,
    count: CountOption = 1000,
    seed: SeedOption = 42,
    ems_cap: EmsCapOption = DEFAULT_EMS_CAPACITY,
    workers: WorkersOption = 1,
    length: LengthOption = DEFAULT_SEQUENCE_LENGTH,
    out: Annotated[Path | None, typer.Option("--out", "-o", help="Write the table as CSV")] = None,
    output: OutputOption = OutputFormat.TABLE,
):
    """Evaluate every method on every environment and print a Uti/Sta/Num table.

    Failed cells are shown in the table and the CSV; the command then exits 1.

    Raises:
        typer.Exit: If any cell failed.
    """
    cells = bench_table(method, env, count, seed, ems_cap, workers, length, _bin(bin))
    output_results(cell_rows(cells), output)

    if out is not None:
        write_summary_csv(cells, out)
        console.print(f"[green]✓[/green] Table written to {out}")

    failed = [cell for cell in cells if cell.result is None]
    if failed:
        for cell in failed:
            message = f"{cell.method} on {cell.env}: {cell.error}"
            typer.echo(json.dumps({"error": "bench_cell_failed", "message": message}), err=True)
        raise typer.Exit(1)


def export_scenes(
    policy: PolicyOption,
    out: Annotated[Path, typer.Option("--out", "-o", help="Destination directory")],
    dataset: EnvOption = "bin-10",
    bin: BinOption = None,
    count: CountOption = 10,
    seed: SeedOption = 42,
    ems_cap: EmsCapOption = DEFAULT_EMS_CAPACITY,
    workers: WorkersOption = 1,
    length: LengthOption = DEFAULT_SEQUENCE_LENGTH,
):
    """Pack every instance and write one replayable JSON scene per instance."""
    env_name, data = resolve_env(dataset, count, seed, length, _bin(bin))
    result = evaluate(policy, env_name, data, ems_cap, seed, workers)
    paths = write_scenes(result, data.dims, out)
    console.print(f"[green]✓[/green] {len(paths)} scenes for {result.method} on {env_name} written to {out}")
