from __future__ import annotations

from collections.abc import Callable, Mapping
from pathlib import Path
from typing import TYPE_CHECKING, Any

from ..config import SECTIONS, read_toml
from ..exceptions import ValidationError

if TYPE_CHECKING:
    from ..builder import PipelineBuilder


def install_config_mapping(
    mapping: Mapping[str, Any],
) -> Callable[[PipelineBuilder], None]:
    """Create an installer that applies already-parsed settings.

    Args:
        mapping: Top-level ``seed``/``workers`` plus per-section tables

    Returns:
        Installer function applying the settings

    Raises:
        ValidationError: When the installer runs and finds unknown top-level
            keys or a section that is not a table
    """

    def installer(builder: PipelineBuilder) -> None:
        errors: list[str] = []
        for key, value in mapping.items():
            if key == "seed":
                builder.with_seed(value)
            elif key == "workers":
                builder.with_workers(value)
            elif key in SECTIONS:
                if not isinstance(value, Mapping):
                    errors.append(f"[{key}] must be a table")
                    continue
                getattr(builder, f"with_{key}")(**value)
            else:
                errors.append(f"Unknown key {key}")
        if errors:
            raise ValidationError(errors)

    return installer


def install_config_file(path: str | Path) -> Callable[[PipelineBuilder], None]:
    """Create an installer that reads a TOML run configuration.

    Section keys are checked later by :meth:`PipelineBuilder.build`, so
    command-line overrides applied after this installer still win.

    Args:
        path: TOML file to read

    Returns:
        Installer function for the file's settings

    Example:
        builder.install(install_config_file("run.toml"))
    """

    def installer(builder: PipelineBuilder) -> None:
        install_config_mapping(read_toml(path))(builder)

    return installer
