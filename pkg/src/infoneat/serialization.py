"""Versioned JSON records for genomes and stacked models.

Floats are written with ``repr`` (shortest round-trip form) and keys are
sorted, so saving the same model twice yields identical bytes.
"""

from __future__ import annotations

import json
from collections.abc import Mapping
from pathlib import Path
from typing import Any

import numpy as np

from .criteria import StopReason, TraceRow, TrainingTrace
from .data import FeatureScaler
from .ensemble import MetaWeights, StackedModel, SubModel
from .exceptions import FormatError, InfoNeatError
from .network import Activation, ConnectionGene, Genome, NodeGene, NodeKind

GENOME_FORMAT = "infoneat-genome"
MODEL_FORMAT = "infoneat-stacked-model"
VERSION = 1


def _check_header(record: Mapping[str, Any], expected: str) -> None:
    if not isinstance(record, Mapping):
        raise FormatError("Record must be a JSON object")
    if record.get("format") != expected:
        raise FormatError(f"Expected format {expected!r}, got {record.get('format')!r}")
    if record.get("version") != VERSION:
        raise FormatError(f"Unsupported {expected} version {record.get('version')!r}")


def genome_to_record(genome: Genome) -> dict[str, Any]:
    return {
        "format": GENOME_FORMAT,
        "version": VERSION,
        "key": genome.key,
        "fitness": genome.fitness,
        "generation_born": genome.generation_born,
        "nodes": [
            {
                "id": n.id,
                "kind": n.kind.value,
                "bias": n.bias,
                "activation": n.activation.value,
            }
            for n in genome.nodes
        ],
        "connections": [
            {
                "innovation": c.innovation,
                "from": c.from_node,
                "to": c.to_node,
                "weight": c.weight,
                "enabled": c.enabled,
            }
            for c in genome.connections
        ],
    }


def genome_from_record(record: Mapping[str, Any]) -> Genome:
    """Rebuild a genome, re-validating its structure.

    Raises:
        FormatError: On an unknown format/version or missing fields
    """
    _check_header(record, GENOME_FORMAT)
    try:
        nodes = tuple(
            NodeGene(
                int(n["id"]),
                NodeKind(n["kind"]),
                float(n["bias"]),
                Activation(n["activation"]),
            )
            for n in record["nodes"]
        )
        connections = tuple(
            ConnectionGene(
                int(c["innovation"]),
                int(c["from"]),
                int(c["to"]),
                float(c["weight"]),
                bool(c["enabled"]),
            )
            for c in record["connections"]
        )
        fitness = record.get("fitness")
        return Genome(
            key=int(record["key"]),
            nodes=nodes,
            connections=connections,
            fitness=None if fitness is None else float(fitness),
            generation_born=int(record.get("generation_born", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"Malformed genome record: {exc!r}") from exc
    except InfoNeatError as exc:
        raise FormatError(f"Invalid genome record: {exc}") from exc


def _trace_to_record(trace: TrainingTrace) -> list[list[Any]]:
    return [
        [r.generation, r.best_loss, r.last_layer_cmi, r.n_species] for r in trace.rows
    ]


def _trace_from_record(rows: list[list[Any]]) -> TrainingTrace:
    return TrainingTrace(
        tuple(
            TraceRow(
                int(g),
                float(loss),
                None if cmi is None else float(cmi),
                None if species is None else int(species),
            )
            for g, loss, cmi, species in rows
        )
    )


def model_to_record(model: StackedModel) -> dict[str, Any]:
    return {
        "format": MODEL_FORMAT,
        "version": VERSION,
        "n_classes": model.n_classes,
        "feature_spec": model.feature_spec,
        "config_fingerprint": model.config_fingerprint,
        "sub_models": [
            {
                "class_id": s.class_id,
                "stop_reason": None if s.stop_reason is None else s.stop_reason.value,
                "genome": genome_to_record(s.genome),
                "trace": _trace_to_record(s.trace),
            }
            for s in model.sub_models
        ],
        "meta": {
            "coef": [[float(v) for v in row] for row in model.meta.coef],
            "intercept": [float(v) for v in model.meta.intercept],
            "loss_history": list(model.meta.loss_history),
        },
        "scaler": None if model.scaler is None else model.scaler.to_record(),
    }


def model_from_record(record: Mapping[str, Any]) -> StackedModel:
    """Rebuild a stacked model from its JSON record.

    Raises:
        FormatError: On an unknown format/version or inconsistent content
    """
    _check_header(record, MODEL_FORMAT)
    try:
        sub_models = tuple(
            SubModel(
                int(s["class_id"]),
                genome_from_record(s["genome"]),
                _trace_from_record(s["trace"]),
                None if s["stop_reason"] is None else StopReason(s["stop_reason"]),
            )
            for s in record["sub_models"]
        )
        meta = MetaWeights(
            np.asarray(record["meta"]["coef"], dtype=np.float64),
            np.asarray(record["meta"]["intercept"], dtype=np.float64),
            tuple(float(v) for v in record["meta"].get("loss_history", ())),
        )
        scaler_record = record.get("scaler")
        scaler = None
        if scaler_record is not None:
            scaler = FeatureScaler.from_record(scaler_record)
        model = StackedModel(
            sub_models,
            meta,
            scaler,
            str(record.get("config_fingerprint", "")),
            str(record["feature_spec"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"Malformed model record: {exc!r}") from exc
    except FormatError:
        raise
    except InfoNeatError as exc:
        raise FormatError(f"Invalid model record: {exc}") from exc
    if model.n_classes != record.get("n_classes"):
        raise FormatError("n_classes does not match the number of sub-models")
    return model


def dumps(record: Mapping[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, indent=1, allow_nan=False) + "\n"


def loads(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"Invalid JSON: {exc.msg}", exc.pos) from exc


def save_genome(genome: Genome, path: str | Path) -> Path:
    target = Path(path)
    target.write_text(dumps(genome_to_record(genome)), encoding="utf-8")
    return target


def load_genome(path: str | Path) -> Genome:
    return genome_from_record(loads(Path(path).read_text(encoding="utf-8")))


def save_model(model: StackedModel, path: str | Path) -> Path:
    target = Path(path)
    target.write_text(dumps(model_to_record(model)), encoding="utf-8")
    return target


def load_model(path: str | Path) -> StackedModel:
    return model_from_record(loads(Path(path).read_text(encoding="utf-8")))
