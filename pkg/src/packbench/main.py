"""CLI entry point with Typer application setup and command routing."""

from __future__ import annotations

import json
import logging
import os
from importlib.metadata import PackageNotFoundError
from importlib.metadata import version as get_version
from typing import Annotated, Any, NoReturn

import click
import typer
from pydantic import ValidationError
from rich.console import Console
from rich.logging import RichHandler
from rich.markup import escape
from typer.core import TyperGroup

from packbench.commands import config, dataset, evaluate, train
from packbench.config import CONFIG_PATH, MalformedConfigError
from packbench.errors import CheckpointError, DatasetError, PackbenchError, TrainingAborted, UnknownPolicyError


console = Console(stderr=True)

LOG_LEVEL_ENV_VAR = "PACKBENCH_LOG_LEVEL"

_USAGE_ERRORS = (MalformedConfigError, UnknownPolicyError, DatasetError, CheckpointError)


def _fail(kind: str, message: str, code: int, error: BaseException) -> NoReturn:
    """Print a friendly message plus one JSON error line and exit.

    Args:
        kind: Machine-readable error kind.
        message: Human-readable description.
        code: Exit code.
        error: Exception being reported.

    Raises:
        typer.Exit: Always, with ``code``.
    """
    console.print(f"[red]Error:[/red] {escape(message)}", highlight=False)
    console.print(json.dumps({"error": kind, "message": message}), markup=False, highlight=False, soft_wrap=True)
    raise typer.Exit(code) from error


def _handle_packbench_error(error: PackbenchError) -> NoReturn:
    """Report a packbench error; usage and file problems exit 2, domain failures exit 1.

    Args:
        error: Error to surface.
    """  # noqa: DOC501
    message = str(error)
    if isinstance(error, TrainingAborted):
        resume = error.checkpoint if error.checkpoint is not None else "none"
        message = f"{message} (last good checkpoint: {resume})"
    _fail(error.kind, message, 2 if isinstance(error, _USAGE_ERRORS) else 1, error)


def _handle_validation_error(error: ValidationError) -> NoReturn:
    """Report a Pydantic validation error, e.g. an out-of-range CLI override.

    Args:
        error: Pydantic validation error raised while building a model.
    """  # noqa: DOC501
    _fail("validation_error", str(error), 2, error)


def _handle_os_error(error: OSError) -> NoReturn:
    """Report a file I/O error with the actual failing path.

    Args:
        error: Underlying OS error raised during a file operation.
    """  # noqa: DOC501
    failing_path = getattr(error, "filename", None) or str(CONFIG_PATH)
    if failing_path in (str(CONFIG_PATH), str(CONFIG_PATH.parent)):
        console.print(
            "[dim]Check file permissions and that the directory exists. "
            "You can set XDG_CONFIG_HOME to override the default config location.[/dim]"
        )
    _fail("io_error", f"could not access {failing_path}: {error.strerror or error}", 2, error)


class ErrorHandlingGroup(TyperGroup):
    """Click Group subclass that catches unhandled CLI-level exceptions.

    Translates packbench errors, malformed config files, Pydantic validation
    errors and file-system I/O failures into a red message plus a JSON error
    line on stderr instead of raw Python tracebacks.
    """

    def invoke(self, ctx: click.Context) -> Any:
        """Invoke the command group with global exception handling.

        Args:
            ctx: Click context.

        Returns:
            Command result.
        """
        try:
            return super().invoke(ctx)
        except PackbenchError as e:
            _handle_packbench_error(e)
        except ValidationError as e:
            _handle_validation_error(e)
        except OSError as e:
            _handle_os_error(e)


app = typer.Typer(cls=ErrorHandlingGroup, pretty_exceptions_enable=False, no_args_is_help=True)


def _version_callback(value: bool) -> None:
    """Print version and exit if --version flag is provided.

    Args:
        value: True if --version flag was provided.

    Raises:
        typer.Exit: Always exits after displaying version.
    """
    if value:
        try:
            package_version = get_version("packbench")
        except PackageNotFoundError:
            package_version = "unknown"
        typer.echo(f"packbench {package_version}")
        raise typer.Exit()


def configure_logging(verbose: int) -> None:
    """Route packbench logs through a rich handler on stderr.

    Args:
        verbose: Count of ``-v`` flags; 0 is WARNING, 1 INFO, 2 or more DEBUG.
    """
    level_name = os.getenv(LOG_LEVEL_ENV_VAR)
    if level_name:
        level = logging.getLevelNamesMapping().get(level_name.upper(), logging.WARNING)
    else:
        level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(verbose, 2)]

    logger = logging.getLogger("packbench")
    logger.handlers.clear()
    logger.addHandler(RichHandler(console=console, show_path=False, rich_tracebacks=False))
    logger.setLevel(level)
    logger.propagate = False


@app.callback()
def main(
    version: Annotated[
        bool | None,
        typer.Option(
            "--version",
            "-V",
            help="Show version and exit",
            callback=_version_callback,
            is_eager=True,
        ),
    ] = None,
    verbose: Annotated[
        int,
        typer.Option("--verbose", "-v", count=True, help="Increase log verbosity (-v info, -vv debug)"),
    ] = 0,
):
    """Packbench - online 3D bin packing: environments, heuristics, PPO training and benchmarks.

    Logging:
      - --verbose/-v raises the level from WARNING to INFO, -vv to DEBUG
      - PACKBENCH_LOG_LEVEL overrides the level by name (e.g. DEBUG)

    Training config precedence:
      1. --config PATH
      2. PACKBENCH_CONFIG environment variable
      3. ~/.config/packbench/config.yaml (respects XDG_CONFIG_HOME)
      4. --preset (default: desk)
      Individual flags such as --lr override the resolved file.
    """
    configure_logging(verbose)


app.command("gen-dataset")(dataset.gen_dataset)
app.command("split-dataset")(dataset.split_dataset)
app.command("train")(train.train)
app.command("eval")(evaluate.eval_policy)
app.command("bench")(evaluate.bench)
app.command("export-scenes")(evaluate.export_scenes)
app.add_typer(config.app, name="config")

if __name__ == "__main__":  # pragma: no cover
    app()
