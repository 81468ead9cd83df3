"""CLI auto-completion functions for policy, environment and preset arguments."""

from __future__ import annotations

from pathlib import Path

import click

from packbench.config import PRESETS
from packbench.heuristics import HeuristicKind
from packbench.plugins import policy_plugins


_NAMED_ENVS = ("bin-10", "bin-20", "bin-30", "bin-50", "bin-100")


def _matching_files(incomplete: str, suffix: str):
    """Yield files under the typed directory whose names end with ``suffix``.

    Args:
        incomplete: Partial path typed so far.
        suffix: File suffix to keep.

    Yields:
        Matching paths as strings.
    """
    typed = Path(incomplete)
    directory = typed if incomplete.endswith("/") else typed.parent
    try:
        entries = sorted(directory.iterdir())
    except OSError:
        return

    for entry in entries:
        candidate = str(entry) if str(directory) != "." else entry.name
        if entry.suffix == suffix and candidate.startswith(incomplete):
            yield candidate


def completion_policy_specs(ctx: click.Context, incomplete: str):
    """Complete policy specifications: built-ins, plugins and checkpoint files.

    Args:
        ctx: Active Click context (unused).
        incomplete: Partial input to complete.

    Yields:
        Policy specifications matching the incomplete input.
    """
    names = [kind.value for kind in HeuristicKind]
    try:
        names.extend(sorted(policy_plugins()))
    except Exception:
        pass

    for name in names:
        if name.startswith(incomplete.lower()):
            yield name

    prefix = "ckpt:" if incomplete.startswith("ckpt:") else ""
    for path in _matching_files(incomplete.removeprefix(prefix), ".ckpt"):
        yield f"{prefix}{path}"


def completion_env_specs(ctx: click.Context, incomplete: str):
    """Complete environment specifications: ``bin-K`` names and dataset files.

    Args:
        ctx: Active Click context (unused).
        incomplete: Partial input to complete.

    Yields:
        Environment specifications matching the incomplete input.
    """
    for name in _NAMED_ENVS:
        if name.startswith(incomplete.lower()):
            yield name

    yield from _matching_files(incomplete, ".jsonl")


def completion_presets(ctx: click.Context, incomplete: str):
    """Complete training preset names.

    Args:
        ctx: Active Click context (unused).
        incomplete: Partial input to complete.

    Yields:
        Preset names matching the incomplete input.
    """
    for name in PRESETS:
        if name.startswith(incomplete.lower()):
            yield name
