"""Dataset commands: generate, rescale and split RS evaluation sets."""

from __future__ import annotations

from pathlib import Path
from typing import Annotated

import typer
from rich.console import Console

from packbench.bench import run_split
from packbench.dataset import (
    DEFAULT_SEQUENCE_LENGTH,
    generate_dataset,
    load_dataset,
    load_types,
    rescale_dataset,
    write_dataset,
)
from packbench.helpers import bin_dims_option


console = Console()


def gen_dataset(
    out: Annotated[Path, typer.Option("--out", "-o", help="Destination JSONL file")],
    bin: Annotated[str, typer.Option("--bin", help="Bin size LxWxH")] = "10x10x10",
    count: Annotated[int, typer.Option(min=1, help="Number of item sequences")] = 1000,
    seed: Annotated[int, typer.Option(help="Generator seed")] = 42,
    length: Annotated[int, typer.Option(min=1, help="Items per sequence")] = DEFAULT_SEQUENCE_LENGTH,
    item_types: Annotated[
        Path | None, typer.Option("--item-types", help="Restrict sampling to a type list (e.g. types-sub.json)")
    ] = None,
    scale_from: Annotated[
        Path | None,
        typer.Option("--scale-from", help="Scale an existing dataset to --bin instead of sampling"),
    ] = None,
):
    """Generate an RS evaluation dataset.

    With --scale-from, the source dataset's bin and items are multiplied by the
    integer factor between its bin and --bin, so Bin-30 instances are exactly the
    Bin-10 instances times three.

    Raises:
        DomainError: If --bin is not an integer multiple of the source bin.
    """  # noqa: DOC502
    dims = bin_dims_option(bin)

    if scale_from is not None:
        dataset = rescale_dataset(load_dataset(scale_from), dims)
    else:
        types = load_types(item_types) if item_types is not None else None
        dataset = generate_dataset(dims, count, seed, length, types)

    write_dataset(dataset, out)
    console.print(f"[green]✓[/green] Wrote {len(dataset)} sequences for a {dims} bin to {out}")


def split_dataset(
    out: Annotated[Path, typer.Option("--out", "-o", help="Destination directory")],
    exclude: Annotated[int, typer.Option(help="Number of item types to hold out")] = 25,
    bin: Annotated[str, typer.Option("--bin", help="Bin size LxWxH")] = "10x10x10",
    count: Annotated[int, typer.Option(min=1, help="Sequences per evaluation set")] = 1000,
    seed: Annotated[int, typer.Option(help="Split and generator seed")] = 42,
    length: Annotated[int, typer.Option(min=1, help="Items per sequence")] = DEFAULT_SEQUENCE_LENGTH,
):
    """Split the item types into seen and held-out sets for the unseen-item experiment.

    Writes types-sub.json and types-exc.json (use the former with
    'packbench train --item-types') plus the rs, rs_sub and rs_exc evaluation sets.
    """
    outputs = run_split(bin_dims_option(bin), exclude, count, seed, out, length)
    console.print(f"[green]✓[/green] Split item types into {outputs.types_sub.name} and {outputs.types_exc.name}")
    for path in (outputs.rs, outputs.rs_sub, outputs.rs_exc):
        console.print(f"  {path}")
