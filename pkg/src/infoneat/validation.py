from __future__ import annotations

from typing import TYPE_CHECKING

from .data import SynthSpec

if TYPE_CHECKING:
    from .config import RunConfig


def validate_synth(spec: SynthSpec) -> list[str]:
    """Validate a synthetic-data recipe.

    Args:
        spec: The recipe to check

    Returns:
        List of validation error messages
    """
    return spec.validate()


def validate_run_config(config: RunConfig) -> list[str]:
    """Validate every section of a run configuration.

    Args:
        config: The configuration to check

    Returns:
        List of validation error messages
    """
    errors: list[str] = []
    if config.seed is not None and not 0 <= config.seed < 2**63:
        errors.append("seed must be a non-negative 64-bit integer")
    if config.workers < 1:
        errors.append("workers must be at least 1")
    errors.extend(config.evolution.validate())
    errors.extend(validate_synth(config.synth))
    errors.extend(config.stacking.validate())
    errors.extend(config.evaluation.validate())
    errors.extend(config.paths.validate())

    hd_table = config.evaluation.hd_table
    if hd_table is not None:
        size = len(hd_table)
        if any(len(row) != size for row in hd_table):
            errors.append("evaluation.hd_table must be square")
    return errors
