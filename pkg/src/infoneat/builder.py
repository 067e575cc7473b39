from __future__ import annotations

from collections.abc import Callable
from dataclasses import replace
from pathlib import Path
from typing import Any

from .config import (
    EvaluationSettings,
    PathSettings,
    RunConfig,
    apply_section,
)
from .data import SynthSpec
from .ensemble import StackingConfig
from .evolution import EvolutionConfig
from .exceptions import ValidationError
from .validation import validate_run_config


class PipelineBuilder:
    """Entry point for assembling a :class:`RunConfig`.

    Overrides accumulate in call order; later calls win. Nothing is
    validated until :meth:`build`.

    Example:
        from infoneat import PipelineBuilder
        from infoneat.installers import install_config_file

        config = (
            PipelineBuilder()
            .install(install_config_file("run.toml"))
            .with_seed(7)
            .with_evolution(max_generations=20)
            .build()
        )
    """

    def __init__(self) -> None:
        self._seed: int | None = None
        self._workers = 1
        self._paths: dict[str, Any] = {}
        self._evolution: dict[str, Any] = {}
        self._synth: dict[str, Any] = {}
        self._stacking: dict[str, Any] = {}
        self._evaluation: dict[str, Any] = {}
        self._validation_enabled = True

    def install(self, installer: Callable[[PipelineBuilder], None]) -> PipelineBuilder:
        """Apply an installer function to configure the builder.

        Args:
            installer: Function that configures the builder

        Returns:
            Self for method chaining

        Example:
            def install_small_run(builder: PipelineBuilder) -> None:
                builder.with_evolution(population_size=8, max_generations=5)

            builder.install(install_small_run)
        """
        installer(self)
        return self

    def with_seed(self, seed: int | None) -> PipelineBuilder:
        """Set the master seed every random stream is derived from.

        Args:
            seed: Master seed, or None to leave it unset

        Returns:
            Self for method chaining
        """
        self._seed = seed
        return self

    def with_workers(self, workers: int) -> PipelineBuilder:
        """Set how many sub-models may train concurrently."""
        self._workers = workers
        return self

    def with_paths(self, **paths: str | Path | int | None) -> PipelineBuilder:
        """Override dataset, attack, model, out or ascad_byte.

        ``None`` values are ignored so unset command-line flags can be passed
        through unchanged.
        """
        self._paths.update({k: v for k, v in paths.items() if v is not None})
        return self

    def with_evolution(self, **overrides: Any) -> PipelineBuilder:
        self._evolution.update(overrides)
        return self

    def with_synth(self, **overrides: Any) -> PipelineBuilder:
        self._synth.update(overrides)
        return self

    def with_stacking(self, **overrides: Any) -> PipelineBuilder:
        self._stacking.update(overrides)
        return self

    def with_evaluation(self, **overrides: Any) -> PipelineBuilder:
        self._evaluation.update(overrides)
        return self

    def with_validation(self, enabled: bool) -> PipelineBuilder:
        """Enable or disable validation at build time.

        Args:
            enabled: Whether :meth:`build` validates the configuration

        Returns:
            Self for method chaining
        """
        self._validation_enabled = enabled
        return self

    def build(self) -> RunConfig:
        """Build the run configuration.

        Returns:
            The assembled configuration

        Raises:
            ValidationError: If validation is enabled and any setting is
                unknown or out of range
        """
        errors: list[str] = []
        config = RunConfig(
            seed=self._seed,
            workers=self._workers,
            evolution=apply_section(
                EvolutionConfig(), "evolution", self._evolution, errors
            ),
            synth=apply_section(SynthSpec(), "synth", self._synth, errors),
            stacking=apply_section(
                StackingConfig(), "stacking", self._stacking, errors
            ),
            evaluation=apply_section(
                EvaluationSettings(), "evaluation", self._evaluation, errors
            ),
            paths=apply_section(PathSettings(), "paths", self._paths, errors),
        )
        if self._validation_enabled:
            errors.extend(validate_run_config(config))
            if errors:
                raise ValidationError(errors)
        return replace(config, paths=config.paths.resolved())
