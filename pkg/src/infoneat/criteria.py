"""Genome selection and stopping guided by layer-wise conditional mutual information.

Loss decides first. CMI ``I(new layer; labels | previous layer)`` only breaks
ties among loss minimizers, and stops evolution once the information a new
generation adds about the labels starts to grow again.
"""

from __future__ import annotations

import csv
import io
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path

import numpy as np
from loguru import logger
from numpy.typing import ArrayLike, NDArray

from .entropy import (
    DEFAULT_ALPHA,
    GAUSSIAN_KERNEL,
    GramMatrix,
    KernelSpec,
    activation_gram,
    cmi,
    label_gram,
)
from .evolution import (
    Batch,
    EvolutionConfig,
    Population,
    evolve_generation,
    initial_population,
    rank_key,
    reached_threshold,
)
from .exceptions import FormatError, InputError
from .network import Genome, forward_collect

TRACE_COLUMNS = ("generation", "best_loss", "last_layer_cmi")


class StopReason(str, Enum):
    LOSS_DEGRADED = "loss_degraded"
    CMI_INCREASED = "cmi_increased"
    MAX_GENERATIONS = "max_generations"
    FITNESS_THRESHOLD = "fitness_threshold"


@dataclass(frozen=True)
class ReferenceBatch:
    """Fixed sample on which every CMI of one run is measured."""

    traces: NDArray[np.float64]
    labels: NDArray[np.int64]
    n_classes: int
    kernel: KernelSpec = GAUSSIAN_KERNEL
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self) -> None:
        if self.traces.shape[0] != self.labels.shape[0]:
            raise InputError(
                f"{self.traces.shape[0]} traces but {self.labels.shape[0]} labels"
            )

    @cached_property
    def label_gram(self) -> GramMatrix:
        return label_gram(self.labels, self.n_classes)

    def __len__(self) -> int:
        return int(self.labels.shape[0])


def reference_batch(
    traces: ArrayLike,
    labels: ArrayLike,
    n_classes: int,
    size: int,
    rng: np.random.Generator,
    kernel: KernelSpec = GAUSSIAN_KERNEL,
    alpha: float = DEFAULT_ALPHA,
) -> ReferenceBatch:
    """Draw a class-balanced subset of at most ``size`` samples."""
    x = np.asarray(traces, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    classes = np.unique(y)
    per_class = max(1, size // max(len(classes), 1))
    picked: list[int] = []
    for c in classes:
        idx = np.flatnonzero(y == c)
        take = min(per_class, idx.size)
        picked.extend(int(i) for i in rng.choice(idx, size=take, replace=False))
    rows = np.sort(np.asarray(picked, dtype=np.int64))
    return ReferenceBatch(x[rows], y[rows], n_classes, kernel, alpha)


def layer_grams(
    genome: Genome, reference: ReferenceBatch
) -> tuple[tuple[GramMatrix, ...], ...]:
    """Per-unit Gram matrices of each hidden layer and of the output layer.

    The output layer is the last entry, so index ``-1`` is layer ℓ.
    """
    activations = forward_collect(genome, reference.traces)
    return tuple(
        tuple(activation_gram(group, reference.kernel)) for group in activations.groups
    )


def layer_cmi(
    new: Sequence[GramMatrix],
    previous: Sequence[GramMatrix],
    reference: ReferenceBatch,
) -> float:
    """I(new; labels | previous) on the reference batch."""
    return cmi(new, reference.label_gram, previous, reference.alpha)


@dataclass(frozen=True)
class GenerationSnapshot:
    """Best genome of one generation with its layer Gram matrices."""

    generation: int
    best_genome: Genome
    layer_grams: tuple[tuple[GramMatrix, ...], ...] = field(repr=False)
    best_loss: float
    last_layer_cmi: float | None = None

    @property
    def depth(self) -> int:
        return len(self.layer_grams)


def make_snapshot(
    genome: Genome,
    generation: int,
    reference: ReferenceBatch,
    previous: GenerationSnapshot | None = None,
) -> GenerationSnapshot:
    grams = layer_grams(genome, reference)
    last_cmi = None
    if previous is not None:
        last_cmi = layer_cmi(grams[-1], previous.layer_grams[-1], reference)
    if genome.fitness is None:
        raise InputError(f"Genome {genome.key} has not been evaluated")
    return GenerationSnapshot(generation, genome, grams, genome.fitness, last_cmi)


@dataclass(frozen=True)
class StopDecision:
    stopped: bool
    reason: StopReason | None = None
    final_genome: Genome | None = None
    trigger: Genome | None = None
    cmi_current: float | None = None
    cmi_next: float | None = None

    def __post_init__(self) -> None:
        if self.stopped and self.final_genome is None:
            raise InputError("A stop decision must carry the final genome")


CONTINUE = StopDecision(stopped=False)


@dataclass(frozen=True)
class Selection:
    """Outcome of :func:`select_best_genome_traced`.

    ``layers`` lists the layer indices examined, output layer first.
    """

    genome: Genome
    layers: tuple[int, ...] = ()
    cmi_values: Mapping[int, Mapping[int, float]] = field(default_factory=dict)


def select_best_genome_traced(
    candidates: Sequence[Genome],
    parents: Mapping[int, Genome | None] | Callable[[Genome], Genome | None],
    reference: ReferenceBatch,
) -> Selection:
    """Pick the loss minimizer, breaking exact ties with layer-wise CMI.

    Layers are compared from the output layer (ℓ) downwards; at each layer
    only the genomes with the smallest CMI stay in contention. Remaining ties
    go to the lowest genome key.

    Args:
        candidates: Evaluated genomes of generation t
        parents: Generation t-1 counterpart of each candidate, by key or callable
        reference: Fixed batch the CMI is measured on
    """
    if not candidates:
        raise InputError("No candidates to select from")
    best_loss = min(rank_key(g)[0] for g in candidates)
    tied = sorted(
        (g for g in candidates if g.fitness == best_loss), key=lambda g: g.key
    )
    if len(tied) == 1:
        return Selection(tied[0])

    def parent(genome: Genome) -> Genome | None:
        if callable(parents):
            return parents(genome)
        return parents.get(genome.key)

    lineage = {g.key: parent(g) for g in tied}
    if any(p is None for p in lineage.values()):
        logger.debug("Tie among {} genomes without lineage; lowest key wins", len(tied))
        return Selection(tied[0])

    grams = {g.key: layer_grams(g, reference) for g in tied}
    parent_grams = {
        key: layer_grams(p, reference) for key, p in lineage.items() if p is not None
    }
    n_layers = min(
        min(len(v) for v in grams.values()),
        min(len(v) for v in parent_grams.values()),
    )

    examined: list[int] = []
    values: dict[int, dict[int, float]] = {}
    contenders = tied
    for offset in range(n_layers):
        layer = n_layers - offset
        examined.append(layer)
        scores = {
            g.key: layer_cmi(
                grams[g.key][-1 - offset],
                parent_grams[g.key][-1 - offset],
                reference,
            )
            for g in contenders
        }
        values[layer] = scores
        lowest = min(scores.values())
        contenders = [g for g in contenders if scores[g.key] == lowest]
        if len(contenders) == 1:
            break

    return Selection(contenders[0], tuple(examined), values)


def select_best_genome(
    candidates: Sequence[Genome],
    parents: Mapping[int, Genome | None] | Callable[[Genome], Genome | None],
    reference: ReferenceBatch,
) -> Genome:
    """Loss minimizer of ``candidates``; see :func:`select_best_genome_traced`."""
    return select_best_genome_traced(candidates, parents, reference).genome


def should_stop(
    current: GenerationSnapshot,
    previous: GenerationSnapshot | None,
    offspring: Iterable[Genome],
    reference: ReferenceBatch,
) -> StopDecision:
    """Decide whether generation t's best genome is final.

    Stops when any offspring has a strictly larger loss than the current best,
    or when its last-layer CMI conditioned on the current best exceeds the
    current best's own CMI against generation t-1.
    """
    if previous is None or current.generation < 2:
        return CONTINUE

    cmi_current = current.last_layer_cmi
    if cmi_current is None:
        cmi_current = layer_cmi(
            current.layer_grams[-1], previous.layer_grams[-1], reference
        )

    for child in sorted(offspring, key=lambda g: g.key):
        loss = rank_key(child)[0]
        if current.best_loss < loss:
            return StopDecision(
                True,
                StopReason.LOSS_DEGRADED,
                current.best_genome,
                trigger=child,
                cmi_current=cmi_current,
            )
        child_grams = layer_grams(child, reference)
        cmi_next = layer_cmi(child_grams[-1], current.layer_grams[-1], reference)
        if cmi_current < cmi_next:
            return StopDecision(
                True,
                StopReason.CMI_INCREASED,
                current.best_genome,
                trigger=child,
                cmi_current=cmi_current,
                cmi_next=cmi_next,
            )
    return StopDecision(False, cmi_current=cmi_current)


@dataclass(frozen=True)
class TraceRow:
    generation: int
    best_loss: float
    last_layer_cmi: float | None = None
    n_species: int | None = None


@dataclass(frozen=True)
class TrainingTrace:
    """Per-generation (loss, last-layer CMI) series of one evolution run."""

    rows: tuple[TraceRow, ...] = ()

    def __len__(self) -> int:
        return len(self.rows)

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for row in self.rows:
            cmi_text = "" if row.last_layer_cmi is None else repr(row.last_layer_cmi)
            writer.writerow([row.generation, repr(row.best_loss), cmi_text])
        return buffer.getvalue()

    def write_csv(self, path: str | Path) -> Path:
        target = Path(path)
        target.write_text(self.to_csv(), encoding="utf-8")
        return target

    @classmethod
    def from_csv(cls, text: str) -> TrainingTrace:
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or tuple(header) != TRACE_COLUMNS:
            raise FormatError(f"Unexpected training trace header {header!r}", 0)
        rows = []
        for line, record in enumerate(reader, start=2):
            if len(record) != len(TRACE_COLUMNS):
                raise FormatError("Malformed training trace row", line)
            try:
                rows.append(
                    TraceRow(
                        int(record[0]),
                        float(record[1]),
                        float(record[2]) if record[2] else None,
                    )
                )
            except ValueError as exc:
                raise FormatError(f"Malformed training trace row: {exc}", line) from exc
        return cls(tuple(rows))


def training_trace(
    snapshots: Iterable[GenerationSnapshot],
    species_counts: Mapping[int, int] | None = None,
) -> TrainingTrace:
    """Tabulate snapshots as one row per generation."""
    counts = species_counts or {}
    return TrainingTrace(
        tuple(
            TraceRow(
                s.generation, s.best_loss, s.last_layer_cmi, counts.get(s.generation)
            )
            for s in snapshots
        )
    )


@dataclass(frozen=True)
class EvolutionResult:
    genome: Genome
    decision: StopDecision
    trace: TrainingTrace

    @property
    def generations(self) -> int:
        return len(self.trace)


def evolve_with_criteria(
    traces: ArrayLike,
    labels: ArrayLike,
    n_classes: int,
    config: EvolutionConfig,
    rng: np.random.Generator,
) -> EvolutionResult:
    """Run NEAT until fitness, CMI or the generation budget says stop.

    Fitness is measured on all of ``traces``; CMI on a fixed balanced subset
    of ``config.batch_size`` samples drawn once at the start.
    """
    x = np.asarray(traces, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise InputError("Traces and labels disagree in shape")
    if np.unique(y).size < 2:
        raise InputError("Evolution needs at least two classes in the training set")

    batch = Batch.from_labels(x, y, n_classes)
    reference = reference_batch(
        x, y, n_classes, config.batch_size, rng, config.kernel_spec, config.alpha
    )

    population = initial_population(x.shape[1], n_classes, batch, config, rng)
    best = select_best_genome(population.genomes, population.parent_of, reference)
    snapshots = [make_snapshot(best, population.generation, reference)]
    species_counts = {population.generation: len(population.species)}

    decision = CONTINUE
    while True:
        current = snapshots[-1]
        if reached_threshold(population, config):
            decision = StopDecision(
                True, StopReason.FITNESS_THRESHOLD, current.best_genome
            )
            break
        if population.generation >= config.max_generations:
            decision = StopDecision(
                True, StopReason.MAX_GENERATIONS, current.best_genome
            )
            break

        population = evolve_generation(population, batch, config, rng, champion=best)
        species_counts[population.generation] = len(population.species)

        if current.generation >= config.min_generations:
            previous = snapshots[-2] if len(snapshots) > 1 else None
            polled = elite_offspring(population, current.best_genome)
            decision = should_stop(current, previous, polled, reference)
            if decision.stopped:
                break

        best = select_best_genome(population.genomes, population.parent_of, reference)
        snapshots.append(make_snapshot(best, population.generation, reference, current))

    trace = training_trace(snapshots, species_counts)
    final = decision.final_genome
    assert final is not None
    logger.info(
        "Evolution stopped after {} generations ({}), best loss {:.5f}",
        len(trace),
        decision.reason.value if decision.reason else "continue",
        rank_key(final)[0],
    )
    return EvolutionResult(final, decision, trace)


def elite_offspring(population: Population, elite: Genome) -> list[Genome]:
    """Genomes of ``population`` bred from ``elite`` as mutation or crossover parent.

    Carried-over elites, the elite itself included, are never offspring.
    """
    return list(population.descendants_of(elite))

