"""Run configuration: typed sections, TOML parsing and the config fingerprint.

A config file has top-level ``seed`` and ``workers`` plus the sections
``[evolution]``, ``[synth]``, ``[stacking]``, ``[evaluation]`` and ``[paths]``.
Every key is optional; defaults are the published settings.

Example:
    seed = 7
    workers = 4

    [evolution]
    max_generations = 20

    [synth]
    n_classes = 16
    noise_sigma = 0.08
"""

from __future__ import annotations

import hashlib
import json
import sys
from collections.abc import Mapping
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .data import SynthSpec
from .ensemble import StackingConfig
from .evaluation import DEFAULT_REPETITIONS, DEFAULT_THRESHOLDS, LeakageKind
from .evolution import EvolutionConfig
from .exceptions import FormatError, ValidationError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULT_TRACE_COUNTS = (1, 5, 10, 20, 50, 100, 200)


@dataclass(frozen=True)
class EvaluationSettings:
    trace_counts: tuple[int, ...] = DEFAULT_TRACE_COUNTS
    repetitions: int = DEFAULT_REPETITIONS
    thresholds: tuple[int, ...] = DEFAULT_THRESHOLDS
    leakage: str = LeakageKind.SYNTHETIC_ID.value
    hd_table: tuple[tuple[int, ...], ...] | None = None
    folds: int = 5
    attack_traces: int = 1000

    @classmethod
    def keys(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def validate(self) -> list[str]:
        errors: list[str] = []
        if not self.trace_counts or min(self.trace_counts) < 1:
            errors.append("evaluation.trace_counts must be positive integers")
        if self.repetitions < 1:
            errors.append("evaluation.repetitions must be at least 1")
        if any(t < 0 for t in self.thresholds):
            errors.append("evaluation.thresholds must be non-negative")
        if self.leakage not in {k.value for k in LeakageKind}:
            errors.append(f"evaluation.leakage unknown: {self.leakage!r}")
        if self.folds < 2:
            errors.append("evaluation.folds must be at least 2")
        if self.attack_traces < max(self.trace_counts, default=1):
            errors.append("evaluation.attack_traces must cover the largest trace count")
        return errors


@dataclass(frozen=True)
class PathSettings:
    dataset: Path | None = None
    attack: Path | None = None
    model: Path | None = None
    out: Path = Path("out")
    ascad_byte: int = 2

    @classmethod
    def keys(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def validate(self) -> list[str]:
        if not 0 <= self.ascad_byte < 16:
            return ["paths.ascad_byte must be in [0, 16)"]
        return []

    def resolved(self) -> PathSettings:
        """Fill in default file names under ``out``."""
        return replace(
            self,
            dataset=self.dataset or self.out / "train.traces",
            attack=self.attack or self.out / "attack.traces",
            model=self.model or self.out / "model.json",
        )


@dataclass(frozen=True)
class RunConfig:
    """Everything one pipeline run depends on."""

    seed: int | None = None
    workers: int = 1
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)
    stacking: StackingConfig = field(default_factory=StackingConfig)
    evaluation: EvaluationSettings = field(default_factory=EvaluationSettings)
    paths: PathSettings = field(default_factory=PathSettings)

    def require_seed(self) -> int:
        if self.seed is None:
            raise ValidationError(["seed is required for this command"])
        return self.seed

    def training_record(self) -> dict[str, Any]:
        """Settings that determine a trained model, as plain JSON values."""
        return {
            "seed": self.seed,
            "evolution": self.evolution.as_dict(),
            "stacking": {k: getattr(self.stacking, k) for k in StackingConfig.keys()},
        }

    def fingerprint(self) -> str:
        canonical = json.dumps(self.training_record(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


SECTIONS = ("evolution", "synth", "stacking", "evaluation", "paths")

_TUPLE_KEYS = {"informative_indices", "trace_counts", "thresholds", "sbox"}
_PATH_KEYS = {"dataset", "attack", "model", "out"}


def _coerce(key: str, value: Any) -> Any:
    if key in _TUPLE_KEYS and isinstance(value, list):
        return tuple(value)
    if key == "hd_table" and isinstance(value, list):
        return tuple(tuple(row) for row in value)
    if key in _PATH_KEYS and isinstance(value, str):
        return Path(value)
    return value


def apply_section(
    current: Any, section: str, overrides: Mapping[str, Any], errors: list[str]
) -> Any:
    """Return ``current`` with ``overrides`` applied; unknown keys go to ``errors``."""
    known = {f.name for f in fields(current)}
    accepted: dict[str, Any] = {}
    for key, value in overrides.items():
        if key not in known:
            errors.append(f"Unknown key {section}.{key}")
            continue
        accepted[key] = _coerce(key, value)
    return replace(current, **accepted) if accepted else current


def read_toml(path: str | Path) -> dict[str, Any]:
    """Parse a TOML config file.

    Raises:
        FileNotFoundError: If ``path`` does not exist
        FormatError: If the file is not valid TOML
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise FormatError(f"Invalid config file {path}: {exc}") from exc
