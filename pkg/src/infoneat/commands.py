"""Pipeline commands behind the CLI.

Every command takes a built :class:`RunConfig`, writes its artifacts under
``paths.out`` (or the explicit paths), reloads each artifact to check it, and
returns a :class:`CommandResult`. Randomness comes only from ``config.seed``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any
from xml.etree import ElementTree

from loguru import logger

from .config import RunConfig
from .criteria import StopReason
from .data import (
    TraceFormat,
    TraceSet,
    load_traceset,
    save_traceset,
    synth_traces,
)
from .ensemble import kfold_train, train_stacked
from .evaluation import (
    LeakageKind,
    LeakageModelSpec,
    RankCurve,
    average_rank,
    tge_metrics,
    tge_table_csv,
)
from .exceptions import FormatError
from .report import build_report, plot_rank_curve, render_markdown
from .sbox import AES_SBOX
from .seeding import derive_rng
from .serialization import dumps, load_model, save_model

RANK_CURVE_FILE = "rank_curve.csv"
RANK_PLOT_FILE = "rank_curve.svg"
TGE_FILE = "tge.csv"
FOLDS_FILE = "folds.csv"
REPORT_MD_FILE = "report.md"
REPORT_JSON_FILE = "report.json"
FOLD_COLUMNS = (
    "fold",
    "n_train",
    "n_test",
    "accuracy",
    "log_loss",
    "mean_rank_at_max",
    "tge0",
)


@dataclass(frozen=True)
class CommandResult:
    """Files a command wrote plus a few headline numbers for display."""

    written: tuple[Path, ...]
    summary: dict[str, Any] = field(default_factory=dict)


def trace_file_name(class_id: int) -> str:
    return f"trace_class_{class_id}.csv"


def _out_dir(config: RunConfig) -> Path:
    out = config.paths.out
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_path(path: Path | None, what: str) -> Path:
    if path is None:
        raise FileNotFoundError(f"No {what} path configured")
    if not path.exists():
        raise FileNotFoundError(f"{what.capitalize()} not found: {path}")
    return path


def load_input(config: RunConfig, path: Path | None, role: str) -> TraceSet:
    """Load the training (``role="dataset"``) or attack set.

    ASCAD files hold both sets; the group is picked by role.
    """
    source = _require_path(path, role)
    kind = TraceFormat.from_path(source)
    if kind is TraceFormat.ASCAD:
        group = "Profiling_traces" if role == "dataset" else "Attack_traces"
        return load_traceset(
            source, kind, group=group, byte=config.paths.ascad_byte
        )
    return load_traceset(
        source, kind, n_classes=config.synth.n_classes, key=config.synth.key
    )


def leakage_model(config: RunConfig) -> LeakageModelSpec:
    """Leakage model named by ``evaluation.leakage``."""
    kind = LeakageKind(config.evaluation.leakage)
    if kind is LeakageKind.SYNTHETIC_ID:
        return LeakageModelSpec.identity(config.synth.table, kind)
    if kind is LeakageKind.SBOX_ID:
        return LeakageModelSpec.identity(AES_SBOX, kind)
    return LeakageModelSpec.hamming_distance(AES_SBOX, config.evaluation.hd_table)


def cmd_synth(config: RunConfig) -> CommandResult:
    """Write a class-balanced training set and a uniform-plaintext attack set.

    Raises:
        ValidationError: If no seed is configured
        OSError: If a file cannot be written
    """
    seed = config.require_seed()
    train = synth_traces(config.synth, None, derive_rng(seed, "synth", 0), seed)
    attack = synth_traces(
        config.synth,
        config.evaluation.attack_traces,
        derive_rng(seed, "synth", 1),
        seed,
    )
    _out_dir(config)
    written = []
    outputs = ((train, config.paths.dataset), (attack, config.paths.attack))
    for trace_set, path in outputs:
        assert path is not None
        path.parent.mkdir(parents=True, exist_ok=True)
        target = save_traceset(trace_set, path, TraceFormat.from_path(path))
        reloaded = load_input(config, target, "dataset")
        restored = reloaded.with_traces(reloaded.traces, **asdict(trace_set.meta))
        if not restored.equals(trace_set):
            raise FormatError(f"Reloaded trace set differs from {path}")
        written.append(target)
    logger.info("Wrote {} training and {} attack traces", train.n, attack.n)
    return CommandResult(
        tuple(written),
        {
            "train_traces": train.n,
            "attack_traces": attack.n,
            "classes": train.n_classes,
        },
    )


def cmd_train(config: RunConfig) -> CommandResult:
    """Train the stacked model and write it with one training trace per class.

    Raises:
        ValidationError: If no seed is configured
        FileNotFoundError: If the dataset does not exist
    """
    seed = config.require_seed()
    trace_set = load_input(config, config.paths.dataset, "dataset")
    model = train_stacked(
        trace_set,
        config.evolution,
        config.stacking,
        seed,
        workers=config.workers,
        fingerprint=config.fingerprint(),
    )
    out = _out_dir(config)
    model_path = config.paths.model
    assert model_path is not None
    model_path.parent.mkdir(parents=True, exist_ok=True)
    written = [save_model(model, model_path)]
    load_model(model_path)
    for sub in model.sub_models:
        written.append(sub.trace.write_csv(out / trace_file_name(sub.class_id)))

    stopped_early = sum(
        1
        for sub in model.sub_models
        if sub.stop_reason not in (None, StopReason.MAX_GENERATIONS)
    )
    return CommandResult(
        tuple(written),
        {
            "sub_models": model.n_classes,
            "stopped_early": stopped_early,
            "mean_generations": sum(len(s.trace) for s in model.sub_models)
            / model.n_classes,
        },
    )


def cmd_attack(config: RunConfig) -> CommandResult:
    """Attack the configured set and write the rank curve, its plot and T_GE.

    Raises:
        ValidationError: If no seed is configured
        FileNotFoundError: If the model or attack set does not exist
        SizeError: If the attack set is smaller than the largest trace count
    """
    seed = config.require_seed()
    model = load_model(_require_path(config.paths.model, "model"))
    attack_set = load_input(config, config.paths.attack, "attack set")
    evaluation = config.evaluation
    curve = average_rank(
        model,
        attack_set,
        leakage_model(config),
        evaluation.trace_counts,
        evaluation.repetitions,
        seed,
    )
    tge = tge_metrics(curve, evaluation.thresholds)

    out = _out_dir(config)
    curve_path = out / RANK_CURVE_FILE
    curve_path.write_text(curve.to_csv(), encoding="utf-8")
    RankCurve.from_csv(curve_path.read_text(encoding="utf-8"))
    plot_path = plot_rank_curve(curve, out / RANK_PLOT_FILE)
    try:
        ElementTree.parse(plot_path)
    except ElementTree.ParseError as exc:
        raise FormatError(f"Rank plot is not well-formed SVG: {exc}") from exc
    tge_path = out / TGE_FILE
    tge_path.write_text(tge_table_csv(tge), encoding="utf-8")

    logger.info(
        "Average rank {:.3f} with {} traces", curve.final_rank, curve.trace_counts[-1]
    )
    return CommandResult(
        (curve_path, plot_path, tge_path),
        {"final_rank": curve.final_rank, "tge": tge},
    )


def cmd_report(config: RunConfig) -> CommandResult:
    """Write report.md and report.json from the model and any attack output."""
    model = load_model(_require_path(config.paths.model, "model"))
    out = _out_dir(config)
    curve = None
    tge = None
    curve_path = out / RANK_CURVE_FILE
    if curve_path.exists():
        curve = RankCurve.from_csv(
            curve_path.read_text(encoding="utf-8"), config.evaluation.repetitions
        )
        tge = tge_metrics(curve, config.evaluation.thresholds)

    report = build_report(model, curve, tge)
    json_path = out / REPORT_JSON_FILE
    json_path.write_text(dumps(report), encoding="utf-8")
    md_path = out / REPORT_MD_FILE
    md_path.write_text(render_markdown(report), encoding="utf-8")
    return CommandResult(
        (md_path, json_path),
        {
            "sub_models": report["n_classes"],
            "trainable_parameters": report["total_trainable_parameters"],
            "attack": bool(report["attack"]),
        },
    )


def _csv_value(value: Any) -> Any:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return value


def folds_csv(rows: list[dict[str, Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(FOLD_COLUMNS)
    for row in rows:
        writer.writerow([_csv_value(row[c]) for c in FOLD_COLUMNS])
    return buffer.getvalue()


def cmd_crossval(config: RunConfig) -> CommandResult:
    """k-fold train/evaluate on the dataset and write the per-fold summary."""
    seed = config.require_seed()
    trace_set = load_input(config, config.paths.dataset, "dataset")
    evaluation = config.evaluation
    result = kfold_train(
        trace_set,
        evaluation.folds,
        config.evolution,
        config.stacking,
        seed,
        workers=config.workers,
        leakage=leakage_model(config) if trace_set.fixed_key else None,
        trace_counts=evaluation.trace_counts,
        repetitions=evaluation.repetitions,
        fingerprint=config.fingerprint(),
    )
    path = _out_dir(config) / FOLDS_FILE
    path.write_text(folds_csv([f.as_row() for f in result.folds]), encoding="utf-8")
    return CommandResult(
        (path,),
        {"folds": len(result.folds), "mean_final_rank": result.mean_final_rank},
    )
