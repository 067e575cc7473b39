"""NEAT population loop: fitness, speciation, selection, crossover, mutation.

Genomes are immutable values. Reproduction is the only phase that touches the
run's :class:`~infoneat.innovation.InnovationRegistry`, and it runs in a
single thread; fitness evaluation only reads the shared batch.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, fields
from typing import Any

import numpy as np
from loguru import logger
from numpy.typing import ArrayLike, NDArray

from .entropy import DEFAULT_ALPHA, KernelKind, KernelSpec
from .exceptions import InputError
from .innovation import InnovationRegistry
from .network import (
    ConnectionGene,
    Genome,
    InitSpec,
    NodeGene,
    NodeKind,
    new_minimal,
    predict_batch,
)

LOG_EPSILON = 1e-12


@dataclass(frozen=True)
class EvolutionConfig:
    """Parameters of one InfoNEAT run. Defaults follow the published setup."""

    population_size: int = 16
    compatibility_threshold: float = 1.8
    n_hidden: int = 10
    fitness_threshold: float = 0.0
    conn_add_prob: float = 0.8
    node_add_prob: float = 1.0
    max_generations: int = 30
    weight_mutate_rate: float = 0.8
    bias_mutate_rate: float = 0.7
    mutate_power: float = 0.1
    weight_limit: float = 3.0
    crossover_rate: float = 0.75
    disjoint_coefficient: float = 1.0
    weight_coefficient: float = 0.5
    tournament_size: int = 3
    batch_size: int = 150
    target_species: int = 4
    threshold_step: float = 0.1
    min_threshold: float = 0.1
    stagnation_limit: int = 15
    elitism: int = 1
    min_generations: int = 2
    init_mean: float = 0.0
    init_variation: float | None = None
    init_clamp: float = 3.0
    alpha: float = DEFAULT_ALPHA
    cmi_kernel: str = "gaussian"
    cmi_bandwidth: float | None = None

    @property
    def init_spec(self) -> InitSpec:
        return InitSpec(self.init_mean, self.init_variation, self.init_clamp)

    @property
    def kernel_spec(self) -> KernelSpec:
        return KernelSpec(KernelKind(self.cmi_kernel), self.cmi_bandwidth)

    @classmethod
    def keys(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def as_dict(self) -> dict[str, Any]:
        return {name: getattr(self, name) for name in self.keys()}

    def validate(self) -> list[str]:
        """Return a list of problems; empty when the config is usable."""
        errors: list[str] = []
        for name in (
            "conn_add_prob",
            "node_add_prob",
            "weight_mutate_rate",
            "bias_mutate_rate",
            "crossover_rate",
        ):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                errors.append(f"evolution.{name} must be in [0, 1], got {value}")
        if self.population_size < 2:
            errors.append("evolution.population_size must be at least 2")
        if self.max_generations < 1:
            errors.append("evolution.max_generations must be at least 1")
        if self.min_generations < 2:
            errors.append("evolution.min_generations must be at least 2")
        if self.n_hidden < 0:
            errors.append("evolution.n_hidden must be non-negative")
        if self.compatibility_threshold <= 0:
            errors.append("evolution.compatibility_threshold must be positive")
        if self.tournament_size < 1:
            errors.append("evolution.tournament_size must be at least 1")
        if self.elitism < 1:
            errors.append("evolution.elitism must be at least 1")
        if self.batch_size < 2:
            errors.append("evolution.batch_size must be at least 2")
        if self.weight_limit <= 0 or self.mutate_power < 0:
            errors.append("evolution.weight_limit/mutate_power out of range")
        if self.alpha <= 0 or self.alpha == 1.0:
            errors.append("evolution.alpha must be positive and not 1")
        if self.cmi_kernel not in {k.value for k in KernelKind}:
            errors.append(f"evolution.cmi_kernel unknown: {self.cmi_kernel!r}")
        if self.cmi_bandwidth is not None and self.cmi_bandwidth <= 0:
            errors.append("evolution.cmi_bandwidth must be positive")
        return errors


@dataclass(frozen=True)
class Batch:
    """Traces with one-hot targets used for fitness evaluation."""

    traces: NDArray[np.float64]
    targets: NDArray[np.float64]

    @classmethod
    def from_labels(cls, traces: ArrayLike, labels: ArrayLike, n_classes: int) -> Batch:
        y = np.asarray(labels, dtype=np.int64)
        return cls(
            traces=np.asarray(traces, dtype=np.float64),
            targets=np.eye(n_classes, dtype=np.float64)[y],
        )

    @property
    def labels(self) -> NDArray[np.int64]:
        return np.argmax(self.targets, axis=1)

    def __len__(self) -> int:
        return int(self.traces.shape[0])


def cross_entropy(
    probabilities: NDArray[np.float64], targets: NDArray[np.float64]
) -> float:
    """Mean categorical cross-entropy with probabilities clipped to [ε, 1-ε]."""
    clipped = np.clip(probabilities, LOG_EPSILON, 1.0 - LOG_EPSILON)
    return float(-np.mean(np.sum(targets * np.log(clipped), axis=1)))


def log_loss(genome: Genome, batch: Batch) -> float:
    """Fitness of ``genome`` on ``batch``; lower is better."""
    if batch.targets.shape[1] != genome.n_outputs:
        raise InputError(
            f"Targets have width {batch.targets.shape[1]}, "
            f"genome has {genome.n_outputs} outputs"
        )
    return cross_entropy(predict_batch(genome, batch.traces), batch.targets)


def evaluate(genomes: Sequence[Genome], batch: Batch) -> list[Genome]:
    """Attach fitness to every genome that does not have one yet."""
    return [
        g if g.fitness is not None else g.with_fitness(log_loss(g, batch))
        for g in genomes
    ]


def _loss(genome: Genome) -> float:
    if genome.fitness is None:
        raise InputError(f"Genome {genome.key} has not been evaluated")
    return genome.fitness


def rank_key(genome: Genome) -> tuple[float, int]:
    """Sort key: lowest loss first, lowest genome id on ties."""
    return (_loss(genome), genome.key)


def genomic_distance(g1: Genome, g2: Genome, config: EvolutionConfig) -> float:
    """Compatibility distance between two genomes.

    c1 * disjoint / |union of innovations| + c2 * mean |Δw| over matching genes.
    """
    w1 = {c.innovation: c.weight for c in g1.connections}
    w2 = {c.innovation: c.weight for c in g2.connections}
    union = w1.keys() | w2.keys()
    if not union:
        return 0.0
    matching = sorted(w1.keys() & w2.keys())
    disjoint = len(union) - len(matching)
    distance = config.disjoint_coefficient * disjoint / len(union)
    if matching:
        gaps = [abs(w1[i] - w2[i]) for i in matching]
        distance += config.weight_coefficient * math.fsum(gaps) / len(gaps)
    return distance


@dataclass(frozen=True)
class Species:
    id: int
    representative: Genome
    members: tuple[Genome, ...]

    @property
    def best(self) -> Genome:
        return min(self.members, key=rank_key)

    @property
    def mean_loss(self) -> float:
        return math.fsum(_loss(g) for g in self.members) / len(self.members)


def speciate(
    genomes: Sequence[Genome],
    threshold: float,
    representatives: Mapping[int, Genome],
    config: EvolutionConfig,
    next_species_id: int = 0,
) -> list[Species]:
    """Greedily assign genomes to the first species within ``threshold``.

    Existing species are tried in id order through their representatives;
    a genome matching none founds a new species and becomes its representative.
    Species left without members are dropped.
    """
    if not threshold > 0:
        raise InputError(f"Compatibility threshold must be positive, got {threshold}")
    reps = {sid: representatives[sid] for sid in sorted(representatives)}
    members: dict[int, list[Genome]] = {sid: [] for sid in reps}
    new_id = max([next_species_id, *(sid + 1 for sid in reps)])

    for genome in genomes:
        for sid, rep in reps.items():
            if genomic_distance(genome, rep, config) < threshold:
                members[sid].append(genome)
                break
        else:
            reps[new_id] = genome
            members[new_id] = [genome]
            new_id += 1

    return [
        Species(sid, reps[sid], tuple(members[sid])) for sid in reps if members[sid]
    ]


def tournament_select(
    species: Species | Sequence[Genome],
    tournament_size: int,
    rng: np.random.Generator,
) -> Genome:
    """Fittest genome of a uniformly drawn subset of the species."""
    members = species.members if isinstance(species, Species) else tuple(species)
    if not members:
        raise InputError("Cannot select from an empty species")
    size = min(max(tournament_size, 1), len(members))
    picked = rng.choice(len(members), size=size, replace=False)
    return min((members[i] for i in sorted(picked)), key=rank_key)


def _reaches(graph: Mapping[int, set[int]], start: int, goal: int) -> bool:
    stack = [start]
    seen = {start}
    while stack:
        node = stack.pop()
        if node == goal:
            return True
        for succ in graph.get(node, ()):
            if succ not in seen:
                seen.add(succ)
                stack.append(succ)
    return False


def crossover(
    parent_a: Genome,
    parent_b: Genome,
    rng: np.random.Generator,
    key: int | None = None,
) -> Genome:
    """Recombine two parents aligned by innovation number.

    Matching genes come from either parent with equal probability; disjoint
    genes of both parents are appended afterwards. Any gene that would close a
    cycle among enabled connections is skipped.
    """
    if (parent_a.input_ids, parent_a.output_ids) != (
        parent_b.input_ids,
        parent_b.output_ids,
    ):
        raise InputError("Parents do not share the same input/output interface")

    genes_a = {c.innovation: c for c in parent_a.connections}
    genes_b = {c.innovation: c for c in parent_b.connections}
    candidates = [
        genes_a[i] if rng.random() < 0.5 else genes_b[i]
        for i in sorted(genes_a.keys() & genes_b.keys())
    ]
    candidates += [genes_a[i] for i in sorted(genes_a.keys() - genes_b.keys())]
    candidates += [genes_b[i] for i in sorted(genes_b.keys() - genes_a.keys())]

    graph: dict[int, set[int]] = {}
    pairs: set[tuple[int, int]] = set()
    kept: list[ConnectionGene] = []
    for gene in candidates:
        pair = (gene.from_node, gene.to_node)
        if pair in pairs:
            continue
        if gene.enabled:
            if _reaches(graph, gene.to_node, gene.from_node):
                continue
            graph.setdefault(gene.from_node, set()).add(gene.to_node)
        pairs.add(pair)
        kept.append(gene)

    nodes_a, nodes_b = parent_a.node_map, parent_b.node_map
    needed = set(parent_a.input_ids) | set(parent_a.output_ids)
    for gene in kept:
        needed.update((gene.from_node, gene.to_node))
    nodes: list[NodeGene] = []
    for node_id in sorted(needed):
        if node_id in nodes_a and node_id in nodes_b:
            nodes.append(nodes_a[node_id] if rng.random() < 0.5 else nodes_b[node_id])
        else:
            nodes.append(nodes_a.get(node_id) or nodes_b[node_id])

    return Genome(
        key=parent_a.key if key is None else key,
        nodes=tuple(nodes),
        connections=tuple(kept),
        generation_born=parent_a.generation_born,
    )


def _perturb(value: float, config: EvolutionConfig, rng: np.random.Generator) -> float:
    shifted = value + rng.normal(0.0, config.mutate_power)
    return float(np.clip(shifted, -config.weight_limit, config.weight_limit))


def _add_connection(
    genome: Genome,
    connections: dict[int, ConnectionGene],
    config: EvolutionConfig,
    registry: InnovationRegistry,
    rng: np.random.Generator,
) -> bool:
    layer_of = genome.layers.layer_of
    existing = {(c.from_node, c.to_node) for c in connections.values()}
    kinds = {n.id: n.kind for n in genome.nodes}
    candidates = [
        (src, dst)
        for src in sorted(kinds)
        if kinds[src] is not NodeKind.OUTPUT
        for dst in sorted(kinds)
        if kinds[dst] is not NodeKind.INPUT
        and layer_of[src] < layer_of[dst]
        and (src, dst) not in existing
    ]
    if not candidates:
        logger.debug("Genome {}: no legal connection to add", genome.key)
        return False
    src, dst = candidates[int(rng.integers(len(candidates)))]
    weight = float(
        np.clip(
            rng.normal(0.0, config.mutate_power),
            -config.weight_limit,
            config.weight_limit,
        )
    )
    innovation = registry.connection(src, dst)
    connections[innovation] = ConnectionGene(innovation, src, dst, weight)
    return True


def _add_node(
    genome: Genome,
    nodes: dict[int, NodeGene],
    connections: dict[int, ConnectionGene],
    registry: InnovationRegistry,
    rng: np.random.Generator,
) -> bool:
    enabled = [connections[i] for i in sorted(connections) if connections[i].enabled]
    if not enabled:
        logger.debug("Genome {}: no enabled connection to split", genome.key)
        return False
    old = enabled[int(rng.integers(len(enabled)))]
    node_id = registry.split_node(old.innovation, nodes.keys())
    nodes[node_id] = NodeGene(node_id, NodeKind.HIDDEN)

    incoming = registry.connection(old.from_node, node_id)
    outgoing = registry.connection(node_id, old.to_node)
    connections[old.innovation] = ConnectionGene(
        old.innovation, old.from_node, old.to_node, old.weight, enabled=False
    )
    connections[incoming] = ConnectionGene(incoming, old.from_node, node_id, 1.0)
    connections[outgoing] = ConnectionGene(outgoing, node_id, old.to_node, old.weight)
    return True


def mutate(
    genome: Genome,
    config: EvolutionConfig,
    registry: InnovationRegistry,
    rng: np.random.Generator,
) -> Genome:
    """Structural and parametric mutation; returns ``genome`` itself if unchanged.

    With probability P_c a connection is added between a layer-increasing pair
    of unconnected nodes, with probability P_n an enabled connection is split.
    Each weight (P_w) and each non-input bias (P_b) is then perturbed.
    """
    nodes = dict(genome.node_map)
    connections = {c.innovation: c for c in genome.connections}
    changed = False

    if rng.random() < config.conn_add_prob:
        changed |= _add_connection(genome, connections, config, registry, rng)
    if rng.random() < config.node_add_prob:
        changed |= _add_node(genome, nodes, connections, registry, rng)

    for innovation in sorted(connections):
        if rng.random() < config.weight_mutate_rate:
            conn = connections[innovation]
            connections[innovation] = ConnectionGene(
                conn.innovation,
                conn.from_node,
                conn.to_node,
                _perturb(conn.weight, config, rng),
                conn.enabled,
            )
            changed = True

    for node_id in sorted(nodes):
        node = nodes[node_id]
        if node.kind is NodeKind.INPUT:
            continue
        if rng.random() < config.bias_mutate_rate:
            nodes[node_id] = NodeGene(
                node.id, node.kind, _perturb(node.bias, config, rng), node.activation
            )
            changed = True

    if not changed:
        return genome
    return Genome(
        key=genome.key,
        nodes=tuple(nodes.values()),
        connections=tuple(connections.values()),
        generation_born=genome.generation_born,
    )


@dataclass(frozen=True)
class Population:
    """One generation of genomes partitioned into species."""

    species: tuple[Species, ...]
    generation: int
    registry: InnovationRegistry = field(compare=False)
    compatibility_threshold: float
    next_genome_key: int
    next_species_id: int
    stagnation: Mapping[int, tuple[float, int]] = field(default_factory=dict)
    lineage: Mapping[int, Genome] = field(default_factory=dict)
    previous_best: Genome | None = None
    # parent keys of every genome bred for this generation; elites have none
    origins: Mapping[int, tuple[int, ...]] = field(default_factory=dict)

    @property
    def genomes(self) -> tuple[Genome, ...]:
        return tuple(g for s in self.species for g in s.members)

    @property
    def best(self) -> Genome:
        return min(self.genomes, key=rank_key)

    def species_of(self, genome: Genome) -> Species:
        for species in self.species:
            if any(m.key == genome.key for m in species.members):
                return species
        raise InputError(
            f"Genome {genome.key} is not part of generation {self.generation}"
        )

    def parent_of(self, genome: Genome) -> Genome | None:
        """Previous-generation elite of the genome's species (its lineage)."""
        species = self.species_of(genome)
        return self.lineage.get(species.id, self.previous_best)

    def descendants_of(self, genome: Genome) -> tuple[Genome, ...]:
        """Genomes bred this generation with ``genome`` as a parent, by key."""
        return tuple(
            g
            for g in sorted(self.genomes, key=lambda g: g.key)
            if genome.key in self.origins.get(g.key, ())
        )


def reached_threshold(population: Population, config: EvolutionConfig) -> bool:
    return _loss(population.best) <= config.fitness_threshold


def initial_population(
    n_inputs: int,
    n_outputs: int,
    batch: Batch,
    config: EvolutionConfig,
    rng: np.random.Generator,
) -> Population:
    """Generation 1: random genomes with ``n_hidden`` hidden nodes, evaluated."""
    registry = InnovationRegistry()
    genomes = [
        new_minimal(
            n_inputs, n_outputs, config.n_hidden, config.init_spec, rng, registry, key
        ).with_key(key, generation_born=1)
        for key in range(config.population_size)
    ]
    genomes = evaluate(genomes, batch)
    species = speciate(genomes, config.compatibility_threshold, {}, config)
    logger.debug(
        "Initial population: {} genomes in {} species",
        len(genomes),
        len(species),
    )
    return Population(
        species=tuple(species),
        generation=1,
        registry=registry,
        compatibility_threshold=config.compatibility_threshold,
        next_genome_key=config.population_size,
        next_species_id=max(s.id for s in species) + 1,
    )


def _allocate(species: Sequence[Species], slots: int) -> dict[int, int]:
    """Offspring per species, proportional to inverse mean loss."""
    if slots <= 0 or not species:
        return {s.id: 0 for s in species}
    weights = np.array([1.0 / (s.mean_loss + LOG_EPSILON) for s in species])
    raw = slots * weights / weights.sum()
    counts = np.floor(raw).astype(int)
    remainder = slots - int(counts.sum())
    order = sorted(
        range(len(species)), key=lambda i: (-(raw[i] - counts[i]), species[i].id)
    )
    for i in order[:remainder]:
        counts[i] += 1
    return {s.id: int(c) for s, c in zip(species, counts)}


def _elites(species: Species, elitism: int, champion: Genome | None) -> list[Genome]:
    ranked = sorted(species.members, key=rank_key)
    if champion is not None and any(m.key == champion.key for m in ranked):
        ranked = [champion] + [m for m in ranked if m.key != champion.key]
    return ranked[: min(elitism, len(ranked))]


def evolve_generation(
    population: Population,
    batch: Batch,
    config: EvolutionConfig,
    rng: np.random.Generator,
    champion: Genome | None = None,
) -> Population:
    """Produce and evaluate the next generation.

    Every species keeps its ``elitism`` best genomes unmodified (``champion``
    first, when it belongs to the species). Species that have not improved for
    ``stagnation_limit`` generations are dropped unless they hold the
    population best. The compatibility threshold moves by ``threshold_step``
    toward ``target_species`` before the offspring are speciated, so every
    member lies within the stored threshold of its representative.
    """
    generation = population.generation
    species = [
        Species(s.id, s.representative, tuple(evaluate(s.members, batch)))
        for s in population.species
    ]
    all_members = [g for s in species for g in s.members]
    best = champion if champion is not None else min(all_members, key=rank_key)

    stagnation = dict(population.stagnation)
    for s in species:
        loss = _loss(s.best)
        previous = stagnation.get(s.id)
        if previous is None or loss < previous[0]:
            stagnation[s.id] = (loss, generation)

    survivors = [
        s
        for s in species
        if generation - stagnation[s.id][1] < config.stagnation_limit
        or any(m.key == best.key for m in s.members)
    ]
    dropped = len(species) - len(survivors)
    if dropped:
        logger.debug("Generation {}: removed {} stagnant species", generation, dropped)

    max_species = max(1, config.population_size // config.elitism)
    if len(survivors) > max_species:
        keep = sorted(survivors, key=lambda s: rank_key(s.best))[:max_species]
        keep_ids = {s.id for s in keep}
        if not any(m.key == best.key for s in keep for m in s.members):
            keep_ids.discard(keep[-1].id)
            keep_ids.add(population.species_of(best).id)
        survivors = [s for s in survivors if s.id in keep_ids]

    elites = {s.id: _elites(s, config.elitism, champion) for s in survivors}
    slots = config.population_size - sum(len(e) for e in elites.values())
    allocation = _allocate(survivors, slots)

    registry = population.registry
    registry.new_generation()
    key = population.next_genome_key
    offspring: list[Genome] = []
    origins: dict[int, tuple[int, ...]] = {}
    for s in survivors:
        offspring.extend(elites[s.id])
        for _ in range(allocation[s.id]):
            parent = tournament_select(s, config.tournament_size, rng)
            if len(s.members) > 1 and rng.random() < config.crossover_rate:
                other = tournament_select(s, config.tournament_size, rng)
                child = crossover(parent, other, rng)
                origins[key] = tuple(sorted({parent.key, other.key}))
            else:
                child = parent
                origins[key] = (parent.key,)
            child = mutate(child, config, registry, rng).with_key(key, generation + 1)
            offspring.append(child)
            key += 1

    threshold = population.compatibility_threshold
    if len(survivors) < config.target_species:
        threshold = max(config.min_threshold, threshold - config.threshold_step)
    elif len(survivors) > config.target_species:
        threshold += config.threshold_step

    offspring = evaluate(offspring, batch)
    representatives = {sid: group[0] for sid, group in elites.items()}
    new_species = speciate(
        offspring, threshold, representatives, config, population.next_species_id
    )

    logger.debug(
        "Generation {} -> {}: {} genomes, {} species, threshold {:.2f}",
        generation,
        generation + 1,
        len(offspring),
        len(new_species),
        threshold,
    )
    return Population(
        species=tuple(new_species),
        generation=generation + 1,
        registry=registry,
        compatibility_threshold=threshold,
        next_genome_key=key,
        next_species_id=max(
            [population.next_species_id, *(s.id + 1 for s in new_species)]
        ),
        stagnation={sid: v for sid, v in stagnation.items() if sid in elites},
        lineage=representatives,
        previous_best=best,
        origins=origins,
    )
