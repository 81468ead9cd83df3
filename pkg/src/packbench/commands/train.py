"""Training command: resolve the config, run PPO and report the artefacts."""

from __future__ import annotations

from pathlib import Path
from typing import Annotated, Any

import typer
from rich.console import Console
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn, TimeElapsedColumn

from packbench.commands.completions import completion_presets
from packbench.config import DEFAULT_PRESET, PRESETS, Ablation, apply_overrides, load_train_config
from packbench.env import RewardMode
from packbench.helpers import bin_dims_option
from packbench.ppo import UpdateMetrics
from packbench.ppo import train as run_training


console = Console()

_PANEL = "Training hyperparameters"
_NETWORK = "Network"


def train(
    config: Annotated[Path | None, typer.Option("--config", help="YAML config file")] = None,
    preset: Annotated[
        str, typer.Option(help="Base preset: smoke, desk or large", autocompletion=completion_presets)
    ] = DEFAULT_PRESET,
    out: Annotated[Path | None, typer.Option("--out", "-o", help="Output directory for artefacts")] = None,
    bin: Annotated[str | None, typer.Option("--bin", help="Bin size LxWxH")] = None,
    ems_cap: Annotated[int | None, typer.Option(help="EMS capacity N")] = None,
    reward_mode: Annotated[RewardMode | None, typer.Option(help="Reward shaping")] = None,
    item_types: Annotated[Path | None, typer.Option(help="Restrict training items to a type list")] = None,
    seed: Annotated[int | None, typer.Option(help="Run seed")] = None,
    n_envs: Annotated[int | None, typer.Option(rich_help_panel=_PANEL)] = None,
    steps_per_update: Annotated[int | None, typer.Option(rich_help_panel=_PANEL)] = None,
    batch_size: Annotated[int | None, typer.Option(rich_help_panel=_PANEL)] = None,
    epochs: Annotated[int | None, typer.Option(rich_help_panel=_PANEL)] = None,
    steps_per_epoch: Annotated[int | None, typer.Option(rich_help_panel=_PANEL)] = None,
    lr: Annotated[float | None, typer.Option(rich_help_panel=_PANEL, help="Initial learning rate")] = None,
    gamma: Annotated[float | None, typer.Option(rich_help_panel=_PANEL)] = None,
    gae_lambda: Annotated[float | None, typer.Option(rich_help_panel=_PANEL)] = None,
    clip_eps: Annotated[float | None, typer.Option(rich_help_panel=_PANEL)] = None,
    value_coef: Annotated[float | None, typer.Option(rich_help_panel=_PANEL)] = None,
    entropy_coef: Annotated[float | None, typer.Option(rich_help_panel=_PANEL)] = None,
    ppo_epochs: Annotated[int | None, typer.Option(rich_help_panel=_PANEL)] = None,
    max_grad_norm: Annotated[float | None, typer.Option(rich_help_panel=_PANEL)] = None,
    norm_adv: Annotated[bool | None, typer.Option("--norm-adv/--no-norm-adv", rich_help_panel=_PANEL)] = None,
    checkpoint_every: Annotated[int | None, typer.Option(rich_help_panel=_PANEL, help="Updates per checkpoint")] = None,
    embed_dim: Annotated[int | None, typer.Option(rich_help_panel=_NETWORK)] = None,
    blocks: Annotated[int | None, typer.Option(rich_help_panel=_NETWORK)] = None,
    heads: Annotated[int | None, typer.Option(rich_help_panel=_NETWORK)] = None,
    ablation: Annotated[Ablation | None, typer.Option(rich_help_panel=_NETWORK)] = None,
    leaky_slope: Annotated[float | None, typer.Option(rich_help_panel=_NETWORK)] = None,
    ln_eps: Annotated[float | None, typer.Option(rich_help_panel=_NETWORK)] = None,
):
    """Train the packing policy with PPO.

    The output directory receives config.yaml, metrics.csv, periodic
    checkpoint-<update>.ckpt files and final.ckpt.

    Raises:
        typer.BadParameter: If the preset does not exist.
    """
    if preset not in PRESETS:
        raise typer.BadParameter(f"Unknown preset '{preset}'. Available presets: {', '.join(PRESETS)}")
    if bin is not None:
        bin_dims_option(bin)

    overrides: dict[str, Any] = {
        "out_dir": out,
        "bin": bin,
        "ems_cap": ems_cap,
        "reward_mode": reward_mode,
        "item_types": item_types,
        "seed": seed,
        "n_envs": n_envs,
        "steps_per_update": steps_per_update,
        "batch_size": batch_size,
        "epochs": epochs,
        "steps_per_epoch": steps_per_epoch,
        "lr": lr,
        "gamma": gamma,
        "gae_lambda": gae_lambda,
        "clip_eps": clip_eps,
        "value_coef": value_coef,
        "entropy_coef": entropy_coef,
        "ppo_epochs": ppo_epochs,
        "max_grad_norm": max_grad_norm,
        "norm_adv": norm_adv,
        "checkpoint_every": checkpoint_every,
        "policy": {
            key: value
            for key, value in {
                "embed_dim": embed_dim,
                "blocks": blocks,
                "heads": heads,
                "ablation": ablation,
                "leaky_slope": leaky_slope,
                "ln_eps": ln_eps,
            }.items()
            if value is not None
        },
    }
    resolved = apply_overrides(load_train_config(config, preset), overrides)

    console.print(
        f"[bold]Training[/bold] {resolved.policy.ablation} policy on a {resolved.bin} bin: "
        f"{resolved.n_envs} envs, {resolved.total_steps:,} steps -> {resolved.out_dir}"
    )

    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TextColumn("{task.completed:,.0f}/{task.total:,.0f} steps"),
        TimeElapsedColumn(),
        console=console,
        transient=True,
    ) as progress:
        task = progress.add_task("Training", total=resolved.total_steps)

        def on_update(metrics: UpdateMetrics) -> None:
            uti = "-" if metrics.mean_utilization is None else f"{100 * metrics.mean_utilization:.1f}%"
            progress.update(
                task,
                completed=min(metrics.env_steps, resolved.total_steps),
                description=f"Update {metrics.update} (Uti {uti})",
            )

        result = run_training(resolved, on_update)

    console.print(f"[green]✓[/green] Finished {result.updates} updates")
    console.print(f"  Checkpoint: {result.final_checkpoint}")
    console.print(f"  Metrics:    {result.metrics_path}")
