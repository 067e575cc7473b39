"""Rank-curve plots and the consolidated run report."""

from __future__ import annotations

import math
from collections.abc import Mapping
from pathlib import Path
from typing import Any

import matplotlib
from matplotlib.figure import Figure

from .ensemble import StackedModel
from .evaluation import RankCurve
from .network import describe

SVG_SALT = "infoneat"
SUB_MODEL_COLUMNS = (
    "class_id",
    "nodes",
    "hidden_nodes",
    "enabled_connections",
    "depth",
    "trainable_parameters",
    "generations",
    "final_species",
    "stop_reason",
)


def plot_rank_curve(curve: RankCurve, path: str | Path) -> Path:
    """Write the average/median/min rank curve as a byte-stable SVG."""
    target = Path(path)
    figure = Figure(figsize=(6.4, 4.0))
    ax = figure.add_subplot()
    counts = curve.trace_counts
    ax.plot(counts, curve.avg_rank, marker="o", markersize=3, label="average")
    ax.plot(counts, curve.median_rank, linestyle="--", label="median")
    ax.plot(counts, curve.min_rank, linestyle=":", label="minimum")
    ax.set_xlabel("Number of attack traces")
    ax.set_ylabel("Rank of the correct key")
    ax.set_title(f"Key rank over {curve.n_repetitions} attacks")
    ax.set_ylim(bottom=0)
    ax.grid(True, alpha=0.3)
    ax.legend()
    figure.tight_layout()
    with matplotlib.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "none"}):
        figure.savefig(target, format="svg", metadata={"Date": None})
    return target


def sub_model_rows(model: StackedModel) -> list[dict[str, Any]]:
    rows = []
    for sub in model.sub_models:
        summary = describe(sub.genome)
        last = sub.trace.rows[-1] if sub.trace.rows else None
        reason = None if sub.stop_reason is None else sub.stop_reason.value
        rows.append(
            {
                "class_id": sub.class_id,
                "nodes": summary.nodes,
                "hidden_nodes": summary.hidden_nodes,
                "enabled_connections": summary.enabled_connections,
                "depth": summary.depth,
                "trainable_parameters": summary.trainable_parameters,
                "generations": len(sub.trace),
                "final_species": None if last is None else last.n_species,
                "stop_reason": reason,
            }
        )
    return rows


def build_report(
    model: StackedModel,
    curve: RankCurve | None = None,
    tge: Mapping[int, int | None] | None = None,
) -> dict[str, Any]:
    """Merge model statistics and attack results into one JSON-ready record.

    Totals are sums over sub-models; ``meta_parameters`` counts the
    meta-learner's weights and intercepts separately. The ``attack`` section
    is empty until an attack has been run.
    """
    rows = sub_model_rows(model)
    summed = ("nodes", "hidden_nodes", "enabled_connections", "trainable_parameters")
    totals = {key: sum(row[key] for row in rows) for key in summed}
    totals["generations"] = sum(row["generations"] for row in rows)
    meta_parameters = int(model.meta.coef.size + model.meta.intercept.size)

    stop_reasons: dict[str, int] = {}
    for row in rows:
        reason = row["stop_reason"] or "none"
        stop_reasons[reason] = stop_reasons.get(reason, 0) + 1

    attack: dict[str, Any] = {}
    if curve is not None:
        attack = {
            "n_repetitions": curve.n_repetitions,
            "trace_counts": [int(c) for c in curve.trace_counts],
            "avg_rank": [float(v) for v in curve.avg_rank],
            "min_rank": [float(v) for v in curve.min_rank],
            "median_rank": [float(v) for v in curve.median_rank],
            "final_rank": curve.final_rank,
            "tge": {str(k): v for k, v in sorted((tge or {}).items())},
        }

    return {
        "n_classes": model.n_classes,
        "config_fingerprint": model.config_fingerprint,
        "feature_spec": model.feature_spec,
        "sub_models": rows,
        "totals": totals,
        "meta_parameters": meta_parameters,
        "total_trainable_parameters": totals["trainable_parameters"] + meta_parameters,
        "mean_generations": math.fsum(r["generations"] for r in rows) / len(rows),
        "stop_reasons": dict(sorted(stop_reasons.items())),
        "meta_final_loss": (
            model.meta.loss_history[-1] if model.meta.loss_history else None
        ),
        "attack": attack,
    }


def _cell(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4g}"
    return str(value)


def _table(columns: tuple[str, ...], rows: list[dict[str, Any]]) -> list[str]:
    lines = ["| " + " | ".join(columns) + " |", "|" + "---|" * len(columns)]
    for row in rows:
        lines.append("| " + " | ".join(_cell(row[c]) for c in columns) + " |")
    return lines


def render_markdown(report: Mapping[str, Any]) -> str:
    totals = report["totals"]
    lines = [
        "# infoneat run report",
        "",
        f"- classes: {report['n_classes']}",
        f"- config fingerprint: `{report['config_fingerprint']}`",
        f"- mean generations: {report['mean_generations']:.2f}",
        f"- trainable parameters: {report['total_trainable_parameters']} "
        f"({totals['trainable_parameters']} in sub-models, "
        f"{report['meta_parameters']} in the meta-learner)",
        "- stop reasons: "
        + ", ".join(f"{k} {v}" for k, v in report["stop_reasons"].items()),
        "",
        "## Sub-models",
        "",
        *_table(SUB_MODEL_COLUMNS, report["sub_models"]),
        "",
        "## Totals",
        "",
        *_table(tuple(totals), [totals]),
        "",
        "## Attack",
        "",
    ]
    attack = report["attack"]
    if not attack:
        lines.append("No attack results yet.")
    else:
        lines.append(
            f"Average rank {attack['final_rank']:.3g} with "
            f"{attack['trace_counts'][-1]} traces over "
            f"{attack['n_repetitions']} attacks."
        )
        lines.append("")
        tge_rows = [
            {"threshold": k, "n_traces": "F" if v is None else v}
            for k, v in attack["tge"].items()
        ]
        lines.extend(_table(("threshold", "n_traces"), tge_rows))
    return "\n".join(lines) + "\n"

