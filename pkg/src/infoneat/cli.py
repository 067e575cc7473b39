"""Command-line interface: ``infoneat synth|train|attack|report|crossval``."""

from __future__ import annotations

import sys
from collections.abc import Callable
from pathlib import Path
from typing import Any, TypeVar

import click
from loguru import logger
from rich.console import Console
from rich.table import Table

from . import __version__
from .builder import PipelineBuilder
from .commands import (
    CommandResult,
    cmd_attack,
    cmd_crossval,
    cmd_report,
    cmd_synth,
    cmd_train,
)
from .config import RunConfig
from .exceptions import InfoNeatError, ValidationError
from .installers import install_config_file

console = Console()
err_console = Console(stderr=True)

F = TypeVar("F", bound=Callable[..., Any])

LOG_FORMAT = "<green>{time:HH:mm:ss}</green> | <level>{level: <8}</level> | {message}"


def configure_logging(verbose: bool) -> None:
    logger.remove()
    logger.add(
        sys.stderr,
        level="DEBUG" if verbose else "INFO",
        format=LOG_FORMAT,
    )


def pipeline_options(func: F) -> F:
    """Options shared by every subcommand."""
    options = [
        click.option(
            "--config",
            "config_path",
            type=click.Path(exists=True, dir_okay=False, path_type=Path),
            help="TOML run configuration",
        ),
        click.option("--seed", type=int, help="Master seed (overrides the config)"),
        click.option(
            "--out", type=click.Path(file_okay=False, path_type=Path), help="Output dir"
        ),
        click.option("--workers", type=int, help="Concurrent sub-model trainings"),
        click.option(
            "--dataset", type=click.Path(path_type=Path), help="Training trace file"
        ),
        click.option("--model", type=click.Path(path_type=Path), help="Model file"),
        click.option("--verbose", "-v", is_flag=True, help="Debug logging"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def build_config(
    config_path: Path | None,
    seed: int | None,
    out: Path | None,
    workers: int | None,
    dataset: Path | None,
    model: Path | None,
) -> RunConfig:
    """Config file first, then command-line flags on top."""
    builder = PipelineBuilder()
    if config_path is not None:
        builder.install(install_config_file(config_path))
    if seed is not None:
        builder.with_seed(seed)
    if workers is not None:
        builder.with_workers(workers)
    builder.with_paths(out=out, dataset=dataset, model=model)
    return builder.build()


def execute(
    command: Callable[[RunConfig], CommandResult],
    title: str,
    config_path: Path | None,
    seed: int | None,
    out: Path | None,
    workers: int | None,
    dataset: Path | None,
    model: Path | None,
    verbose: bool,
) -> None:
    """Run a pipeline command; library and I/O errors become exit status 1."""
    configure_logging(verbose)
    try:
        config = build_config(config_path, seed, out, workers, dataset, model)
        result = command(config)
    except ValidationError as exc:
        for message in exc.errors:
            err_console.print(f"[red]error:[/red] {message}")
        sys.exit(1)
    except (InfoNeatError, OSError) as exc:
        err_console.print(f"[red]error:[/red] {exc}")
        sys.exit(1)
    show_result(title, result)


def show_result(title: str, result: CommandResult) -> None:
    table = Table(title=title)
    table.add_column("Item", style="cyan")
    table.add_column("Value")
    for key, value in result.summary.items():
        table.add_row(key, _display(value))
    for path in result.written:
        table.add_row("wrote", str(path))
    console.print(table)


def _display(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.4g}"
    if isinstance(value, dict):
        return ", ".join(
            f"{k}: {'F' if v is None else v}" for k, v in sorted(value.items())
        )
    return "-" if value is None else str(value)


@click.group()
@click.version_option(__version__, prog_name="infoneat")
def cli() -> None:
    """Neuroevolution with CMI-guided selection for profiled side-channel attacks."""


@cli.command()
@pipeline_options
def synth(**options: Any) -> None:
    """Generate synthetic training and attack trace sets."""
    execute(cmd_synth, "synth", **options)


@cli.command()
@pipeline_options
def train(**options: Any) -> None:
    """Evolve one sub-model per class and fit the stacking meta-learner."""
    execute(cmd_train, "train", **options)


@cli.command()
@pipeline_options
def attack(**options: Any) -> None:
    """Compute the key-rank curve and T_GE table on the attack set."""
    execute(cmd_attack, "attack", **options)


@cli.command()
@pipeline_options
def report(**options: Any) -> None:
    """Write report.md and report.json for the trained model."""
    execute(cmd_report, "report", **options)


@cli.command()
@pipeline_options
def crossval(**options: Any) -> None:
    """k-fold training and evaluation on the dataset."""
    execute(cmd_crossval, "crossval", **options)


def main() -> None:
    cli()


if __name__ == "__main__":
    main()
