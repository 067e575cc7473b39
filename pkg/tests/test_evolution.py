"""Tests for the NEAT population loop."""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import binomtest

from infoneat import EvolutionConfig, InputError, TraceSet
from infoneat.evolution import (
    Batch,
    crossover,
    evaluate,
    evolve_generation,
    genomic_distance,
    initial_population,
    log_loss,
    mutate,
    rank_key,
    speciate,
    tournament_select,
)
from infoneat.innovation import InnovationRegistry
from infoneat.network import Genome, InitSpec, NodeKind, new_minimal

from .conftest import make_genome

STRUCTURAL_ONLY = EvolutionConfig(
    conn_add_prob=0.0,
    node_add_prob=1.0,
    weight_mutate_rate=0.0,
    bias_mutate_rate=0.0,
)


@pytest.fixture
def batch(small_set: TraceSet) -> Batch:
    return Batch.from_labels(small_set.traces, small_set.labels, small_set.n_classes)


def check_acyclic(genome: Genome) -> None:
    assert len(genome.order) == len(genome.nodes)


class TestFitness:
    """Cross-entropy fitness."""

    def test_uniform_output_costs_log_m(self, batch: Batch) -> None:
        edges = [(0, 6 + c, 0.0) for c in range(4)]
        genome = make_genome(6, 4, edges)

        assert log_loss(genome, batch) == pytest.approx(math.log(4))

    def test_width_mismatch_is_rejected(self, batch: Batch) -> None:
        genome = make_genome(6, 2, [(0, 6, 1.0)])

        with pytest.raises(InputError):
            log_loss(genome, batch)

    def test_evaluate_keeps_existing_fitness(self, batch: Batch) -> None:
        genome = make_genome(6, 4, [(0, 6, 1.0)]).with_fitness(0.25)

        assert evaluate([genome], batch)[0].fitness == 0.25

    def test_rank_key_breaks_ties_by_key(self) -> None:
        a = make_genome(1, 2, [(0, 1, 1.0)], key=3).with_fitness(1.0)
        b = make_genome(1, 2, [(0, 1, 1.0)], key=2).with_fitness(1.0)

        assert min([a, b], key=rank_key).key == 2

    def test_unevaluated_genome_cannot_be_ranked(self) -> None:
        with pytest.raises(InputError):
            rank_key(make_genome(1, 2, [(0, 1, 1.0)]))


class TestDistance:
    """Compatibility distance and speciation."""

    def test_identical_genomes_are_at_distance_zero(self) -> None:
        genome = make_genome(2, 2, [(0, 2, 1.0), (1, 3, -1.0)])

        assert genomic_distance(genome, genome, EvolutionConfig()) == 0.0

    def test_fully_disjoint_genomes_are_at_the_disjoint_coefficient(self) -> None:
        a = make_genome(2, 2, [(0, 2, 1.0)])
        b = Genome(
            key=1,
            nodes=a.nodes,
            connections=(replace(a.connections[0], innovation=7),),
        )

        assert genomic_distance(a, b, EvolutionConfig()) == pytest.approx(1.0)

    def test_weight_term_uses_mean_difference(self) -> None:
        a = make_genome(2, 2, [(0, 2, 1.0), (1, 3, 1.0)])
        b = make_genome(2, 2, [(0, 2, 2.0), (1, 3, 1.0)])

        assert genomic_distance(a, b, EvolutionConfig()) == pytest.approx(0.25)

    def test_distance_is_symmetric(self, rng: np.random.Generator) -> None:
        registry = InnovationRegistry()
        a = new_minimal(4, 3, 2, InitSpec(), rng, registry)
        b = mutate(a, EvolutionConfig(), registry, rng)
        config = EvolutionConfig()

        assert genomic_distance(a, b, config) == genomic_distance(b, a, config)

    def test_speciate_partitions_genomes(self, rng: np.random.Generator) -> None:
        registry = InnovationRegistry()
        genomes = [
            new_minimal(4, 3, 2, InitSpec(), rng, registry, key=k) for k in range(8)
        ]

        species = speciate(genomes, 0.3, {}, EvolutionConfig())

        keys = sorted(g.key for s in species for g in s.members)
        assert keys == list(range(8))
        assert [s.id for s in species] == sorted(s.id for s in species)

    def test_speciate_reuses_representatives(self) -> None:
        rep = make_genome(2, 2, [(0, 2, 1.0)], key=9)
        genome = make_genome(2, 2, [(0, 2, 1.1)], key=1)

        species = speciate([genome], 1.0, {5: rep}, EvolutionConfig())

        assert [s.id for s in species] == [5]
        assert species[0].members == (genome,)

    def test_speciate_rejects_non_positive_threshold(self) -> None:
        with pytest.raises(InputError):
            speciate([], 0.0, {}, EvolutionConfig())


class TestSelection:
    """Tournament selection."""

    def test_full_tournament_returns_the_best(
        self, rng: np.random.Generator
    ) -> None:
        genomes = [
            make_genome(1, 2, [(0, 1, 1.0)], key=k).with_fitness(f)
            for k, f in enumerate([0.9, 0.2, 0.5])
        ]

        assert tournament_select(genomes, 3, rng).key == 1

    def test_empty_species_is_rejected(self, rng: np.random.Generator) -> None:
        with pytest.raises(InputError):
            tournament_select([], 3, rng)


class TestMutation:
    """Structural and weight mutation."""

    def test_node_split_replaces_a_connection(
        self, rng: np.random.Generator
    ) -> None:
        genome = make_genome(1, 2, [(0, 1, 0.7)])
        registry = InnovationRegistry()
        registry.connection(0, 1)
        registry.reserve_nodes(3)

        child = mutate(genome, STRUCTURAL_ONLY, registry, rng)

        assert child.hidden_ids == (3,)
        genes = {(c.from_node, c.to_node): c for c in child.connections}
        assert genes[(0, 1)].enabled is False
        assert genes[(0, 3)].weight == 1.0
        assert genes[(3, 1)].weight == 0.7

    def test_same_split_in_one_generation_gets_same_ids(
        self, rng: np.random.Generator
    ) -> None:
        registry = InnovationRegistry()
        parent = new_minimal(1, 2, 0, InitSpec(), rng, registry)
        only_first = replace(
            parent, connections=(parent.connections[0],), fitness=None
        )

        a = mutate(only_first, STRUCTURAL_ONLY, registry, rng)
        b = mutate(only_first.with_key(1), STRUCTURAL_ONLY, registry, rng)

        assert a.hidden_ids == b.hidden_ids
        assert a.innovations == b.innovations

    def test_unchanged_genome_is_returned_as_is(
        self, rng: np.random.Generator
    ) -> None:
        genome = make_genome(1, 2, [(0, 1, 0.7)])
        idle = EvolutionConfig(
            conn_add_prob=0.0,
            node_add_prob=0.0,
            weight_mutate_rate=0.0,
            bias_mutate_rate=0.0,
        )

        assert mutate(genome, idle, InnovationRegistry(), rng) is genome

    def test_each_mutation_fires_at_its_configured_rate(self) -> None:
        rng = np.random.default_rng(31)
        registry = InnovationRegistry()
        base = new_minimal(3, 2, 2, InitSpec(), rng, registry)
        config = EvolutionConfig(
            conn_add_prob=0.3,
            node_add_prob=0.6,
            weight_mutate_rate=0.25,
            bias_mutate_rate=0.4,
            weight_limit=100.0,
        )
        weights = {c.innovation: c.weight for c in base.connections}
        biases = {n.id: n.bias for n in base.nodes if n.kind is not NodeKind.INPUT}
        trials = 2000
        added_nodes = added_connections = moved_weights = moved_biases = 0

        for _ in range(trials):
            child = mutate(base, config, registry, rng)
            split = len(child.hidden_ids) - len(base.hidden_ids)
            added_nodes += split
            added_connections += (
                len(child.connections) - len(base.connections) - 2 * split
            )
            genes = {c.innovation: c.weight for c in child.connections}
            moved_weights += sum(genes[i] != w for i, w in weights.items())
            node_biases = {n.id: n.bias for n in child.nodes}
            moved_biases += sum(node_biases[i] != b for i, b in biases.items())

        observed = [
            (added_connections, trials, 0.3),
            (added_nodes, trials, 0.6),
            (moved_weights, trials * len(weights), 0.25),
            (moved_biases, trials * len(biases), 0.4),
        ]
        for hits, n, p in observed:
            assert binomtest(hits, n, p).pvalue > 1e-4, (hits, n, p)

    def test_weights_stay_within_the_limit(self, rng: np.random.Generator) -> None:
        config = EvolutionConfig(mutate_power=50.0, weight_limit=2.0)
        registry = InnovationRegistry()
        genome = new_minimal(3, 2, 2, InitSpec(), rng, registry)

        for _ in range(20):
            genome = mutate(genome, config, registry, rng)

        assert all(abs(c.weight) <= 2.0 for c in genome.connections)
        assert all(abs(n.bias) <= 2.0 for n in genome.nodes)


class TestCrossover:
    """Recombination aligned by innovation number."""

    def test_child_genes_come_from_the_parents(
        self, rng: np.random.Generator
    ) -> None:
        registry = InnovationRegistry()
        base = new_minimal(3, 2, 2, InitSpec(), rng, registry)
        a = mutate(base, EvolutionConfig(), registry, rng)
        b = mutate(base.with_key(1), EvolutionConfig(), registry, rng)

        child = crossover(a, b, rng, key=5)

        assert child.key == 5
        assert child.innovations <= a.innovations | b.innovations
        check_acyclic(child)

    def test_interface_mismatch_is_rejected(self, rng: np.random.Generator) -> None:
        a = make_genome(2, 2, [(0, 2, 1.0)])
        b = make_genome(1, 3, [(0, 1, 1.0)])

        with pytest.raises(InputError):
            crossover(a, b, rng)

    def test_gene_closing_a_cycle_is_skipped(self, rng: np.random.Generator) -> None:
        # a: 0 -> 3 -> 4 -> 1 ; b: 0 -> 4 -> 3 -> 1 (different innovations)
        a = make_genome(1, 2, [(0, 3, 1.0), (3, 4, 1.0), (4, 1, 1.0)], hidden=[3, 4])
        b_edges = [(0, 4, 1.0), (4, 3, 1.0), (3, 1, 1.0)]
        b = make_genome(1, 2, b_edges, hidden=[3, 4], key=1)
        b = replace(
            b,
            connections=tuple(
                replace(c, innovation=c.innovation + 10) for c in b.connections
            ),
        )

        child = crossover(a, b, rng)

        check_acyclic(child)
        assert 11 not in child.innovations


class TestPopulation:
    """Whole-generation reproduction."""

    def test_initial_population(
        self, batch: Batch, tiny_evolution: EvolutionConfig, rng: np.random.Generator
    ) -> None:
        population = initial_population(6, 4, batch, tiny_evolution, rng)

        assert population.generation == 1
        assert len(population.genomes) == tiny_evolution.population_size
        assert all(g.fitness is not None for g in population.genomes)

    def test_generation_keeps_size_and_elite(
        self, batch: Batch, tiny_evolution: EvolutionConfig, rng: np.random.Generator
    ) -> None:
        population = initial_population(6, 4, batch, tiny_evolution, rng)
        best = population.best

        following = evolve_generation(population, batch, tiny_evolution, rng)

        assert following.generation == 2
        assert len(following.genomes) == tiny_evolution.population_size
        assert best in following.genomes
        assert following.best.fitness <= best.fitness

    def test_champion_survives(
        self, batch: Batch, tiny_evolution: EvolutionConfig, rng: np.random.Generator
    ) -> None:
        population = initial_population(6, 4, batch, tiny_evolution, rng)
        champion = max(population.genomes, key=rank_key)

        following = evolve_generation(
            population, batch, tiny_evolution, rng, champion=champion
        )

        assert champion in following.genomes
        assert following.previous_best == champion

    def test_descendants_are_newly_bred_under_wider_elitism(
        self, batch: Batch, tiny_evolution: EvolutionConfig
    ) -> None:
        config = replace(tiny_evolution, population_size=12, elitism=2)
        rng = np.random.default_rng(11)
        population = initial_population(6, 4, batch, config, rng)
        polled = 0

        for _ in range(5):
            champion = population.best
            following = evolve_generation(
                population, batch, config, rng, champion=champion
            )
            carried = {g.key for g in following.genomes} & {
                g.key for g in population.genomes
            }
            for child in following.descendants_of(champion):
                assert child.key >= population.next_genome_key
                assert child.key not in carried
                assert child.generation_born == following.generation
                assert champion.key in following.origins[child.key]
                polled += 1
            assert champion.key in carried
            population = following

        assert polled > 0

    def test_same_seed_same_history(
        self, batch: Batch, tiny_evolution: EvolutionConfig
    ) -> None:
        def run() -> list[tuple[int, float | None]]:
            rng = np.random.default_rng(99)
            population = initial_population(6, 4, batch, tiny_evolution, rng)
            for _ in range(3):
                population = evolve_generation(population, batch, tiny_evolution, rng)
            return [(g.key, g.fitness) for g in population.genomes]

        assert run() == run()


class TestStructuralFuzz:
    """Invariants under long random mutate/crossover sequences."""

    def test_no_cycles_and_no_innovation_collisions(self) -> None:
        rng = np.random.default_rng(2024)
        config = EvolutionConfig()

        for _ in range(1000):
            registry = InnovationRegistry()
            pool = [
                new_minimal(3, 2, 2, InitSpec(), rng, registry, key=k) for k in range(4)
            ]
            marking: dict[int, tuple[int, int]] = {}
            for step in range(10):
                if step % 3 == 0:
                    registry.new_generation()
                i, j = rng.choice(len(pool), size=2, replace=False)
                child = crossover(pool[i], pool[j], rng, key=step + 4)
                child = mutate(child, config, registry, rng)
                check_acyclic(child)
                for gene in child.connections:
                    pair = (gene.from_node, gene.to_node)
                    assert marking.setdefault(gene.innovation, pair) == pair
                pool[int(rng.integers(len(pool)))] = child

    def test_species_stay_a_partition(
        self, batch: Batch, tiny_evolution: EvolutionConfig
    ) -> None:
        rng = np.random.default_rng(7)
        population = initial_population(6, 4, batch, tiny_evolution, rng)

        for _ in range(10):
            population = evolve_generation(population, batch, tiny_evolution, rng)
            keys = [g.key for g in population.genomes]
            assert len(keys) == len(set(keys)) == tiny_evolution.population_size
            assert all(s.members for s in population.species)
            for species in population.species:
                for member in species.members:
                    distance = genomic_distance(
                        member, species.representative, tiny_evolution
                    )
                    assert distance < population.compatibility_threshold
            for genome in population.genomes:
                check_acyclic(genome)
