"""Genomes of irregular feed-forward networks and their evaluation.

Nodes are numbered ``0..f-1`` for inputs, ``f..f+m-1`` for outputs and from
``f+m`` upward for hidden nodes. Enabled connections form a DAG that may skip
layers; hidden nodes use Leaky ReLU and the output nodes share one softmax.
"""

from __future__ import annotations

import heapq
import math
from collections.abc import Mapping
from dataclasses import dataclass, replace
from enum import Enum
from functools import cached_property

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import softmax

from .exceptions import InputError, StructureError
from .innovation import InnovationRegistry

LEAKY_SLOPE = 0.01


class NodeKind(str, Enum):
    """Role of a node in the network."""

    INPUT = "input"
    HIDDEN = "hidden"
    OUTPUT = "output"


class Activation(str, Enum):
    """Activation applied to a node's pre-activation."""

    LEAKY_RELU = "leaky_relu"
    SOFTMAX_MEMBER = "softmax_member"  # normalised jointly with the other outputs


@dataclass(frozen=True)
class NodeGene:
    id: int
    kind: NodeKind
    bias: float = 0.0
    activation: Activation = Activation.LEAKY_RELU


@dataclass(frozen=True)
class ConnectionGene:
    innovation: int
    from_node: int
    to_node: int
    weight: float
    enabled: bool = True

    def __post_init__(self) -> None:
        if self.from_node == self.to_node:
            raise StructureError(
                f"Connection {self.innovation} is a self-loop", [self.from_node]
            )


@dataclass(frozen=True)
class LayerAssignment:
    """Longest-path layer of every node; ``depth`` is the deepest hidden layer."""

    layer_of: Mapping[int, int]
    depth: int
    hidden_layers: tuple[tuple[int, ...], ...] = ()


@dataclass(frozen=True)
class InitSpec:
    """Xavier-style initial weight distribution.

    ``init_variation`` of ``None`` means sqrt(2 / (fan_in + fan_out)) for each
    layer of the initial dense topology; draws beyond
    ``clamp_factor * variation`` are clamped.
    """

    init_mean: float = 0.0
    init_variation: float | None = None
    clamp_factor: float = 3.0

    def variation(self, fan_in: int, fan_out: int) -> float:
        if self.init_variation is not None:
            return self.init_variation
        return math.sqrt(2.0 / (fan_in + fan_out))

    def draw(
        self,
        rng: np.random.Generator,
        size: int,
        fan_in: int,
        fan_out: int,
    ) -> NDArray[np.float64]:
        sigma = self.variation(fan_in, fan_out)
        limit = self.clamp_factor * sigma
        values = rng.normal(self.init_mean, sigma, size=size)
        return np.clip(values, -limit, limit)


@dataclass(frozen=True)
class Genome:
    """An immutable network genome.

    Mutation and crossover build new genomes; evaluation only reads, so one
    genome may be evaluated from many workers at once.
    """

    key: int
    nodes: tuple[NodeGene, ...]
    connections: tuple[ConnectionGene, ...]
    fitness: float | None = None
    generation_born: int = 0

    def __post_init__(self) -> None:
        nodes = tuple(sorted(self.nodes, key=lambda n: n.id))
        connections = tuple(sorted(self.connections, key=lambda c: c.innovation))
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "connections", connections)

        kinds = {node.id: node.kind for node in nodes}
        if len(kinds) != len(nodes):
            raise StructureError(f"Genome {self.key} has duplicate node ids")
        if len({c.innovation for c in connections}) != len(connections):
            raise StructureError(f"Genome {self.key} has duplicate innovations")
        for conn in connections:
            missing = [n for n in (conn.from_node, conn.to_node) if n not in kinds]
            if missing:
                raise StructureError(
                    f"Connection {conn.innovation} references unknown nodes", missing
                )
            if kinds[conn.from_node] is NodeKind.OUTPUT:
                raise StructureError(
                    f"Connection {conn.innovation} leaves an output node",
                    [conn.from_node],
                )
            if kinds[conn.to_node] is NodeKind.INPUT:
                raise StructureError(
                    f"Connection {conn.innovation} enters an input node",
                    [conn.to_node],
                )

    @cached_property
    def node_map(self) -> dict[int, NodeGene]:
        return {node.id: node for node in self.nodes}

    @cached_property
    def input_ids(self) -> tuple[int, ...]:
        return tuple(n.id for n in self.nodes if n.kind is NodeKind.INPUT)

    @cached_property
    def output_ids(self) -> tuple[int, ...]:
        return tuple(n.id for n in self.nodes if n.kind is NodeKind.OUTPUT)

    @cached_property
    def hidden_ids(self) -> tuple[int, ...]:
        return tuple(n.id for n in self.nodes if n.kind is NodeKind.HIDDEN)

    @property
    def n_inputs(self) -> int:
        return len(self.input_ids)

    @property
    def n_outputs(self) -> int:
        return len(self.output_ids)

    @cached_property
    def innovations(self) -> frozenset[int]:
        return frozenset(c.innovation for c in self.connections)

    @cached_property
    def incoming(self) -> dict[int, tuple[tuple[int, float], ...]]:
        """Enabled (source, weight) pairs per target node, by innovation."""
        table: dict[int, list[tuple[int, float]]] = {}
        for conn in self.connections:
            if conn.enabled:
                table.setdefault(conn.to_node, []).append((conn.from_node, conn.weight))
        return {node: tuple(edges) for node, edges in table.items()}

    @cached_property
    def order(self) -> tuple[int, ...]:
        """Topological order of all nodes over enabled connections."""
        return _topological_order(self)

    @cached_property
    def layers(self) -> LayerAssignment:
        return assign_layers(self)

    def with_fitness(self, fitness: float) -> Genome:
        return replace(self, fitness=fitness)

    def with_key(self, key: int, generation_born: int | None = None) -> Genome:
        born = self.generation_born if generation_born is None else generation_born
        return replace(self, key=key, generation_born=born, fitness=None)


def _topological_order(genome: Genome) -> tuple[int, ...]:
    successors: dict[int, list[int]] = {node.id: [] for node in genome.nodes}
    in_degree = {node.id: 0 for node in genome.nodes}
    for conn in genome.connections:
        if conn.enabled:
            successors[conn.from_node].append(conn.to_node)
            in_degree[conn.to_node] += 1

    ready = [node_id for node_id, degree in in_degree.items() if degree == 0]
    heapq.heapify(ready)
    order: list[int] = []
    while ready:
        node_id = heapq.heappop(ready)
        order.append(node_id)
        for succ in successors[node_id]:
            in_degree[succ] -= 1
            if in_degree[succ] == 0:
                heapq.heappush(ready, succ)

    if len(order) != len(in_degree):
        stuck = sorted(n for n, degree in in_degree.items() if degree > 0)
        raise StructureError(f"Genome {genome.key} contains a cycle", stuck)
    return tuple(order)


def assign_layers(genome: Genome) -> LayerAssignment:
    """Place each node at the length of its longest enabled path from an input.

    Inputs sit at layer 0; a non-input node without enabled incoming edges
    sits at layer 1.

    Raises:
        StructureError: If the enabled connections contain a cycle
    """
    order = genome.order
    layer_of: dict[int, int] = {}
    for node_id in order:
        if genome.node_map[node_id].kind is NodeKind.INPUT:
            layer_of[node_id] = 0
            continue
        sources = genome.incoming.get(node_id, ())
        layer_of[node_id] = 1 + max((layer_of[src] for src, _ in sources), default=0)

    hidden = genome.hidden_ids
    depth = max((layer_of[n] for n in hidden), default=0)
    grouped: list[list[int]] = [[] for _ in range(depth)]
    for node_id in hidden:
        grouped[layer_of[node_id] - 1].append(node_id)
    return LayerAssignment(
        layer_of=layer_of,
        depth=depth,
        hidden_layers=tuple(tuple(sorted(group)) for group in grouped),
    )


@dataclass(frozen=True)
class LayerActivations:
    """Activations of a batch, grouped by hidden layer, plus the softmax output."""

    groups: tuple[NDArray[np.float64], ...]
    group_nodes: tuple[tuple[int, ...], ...]

    @property
    def hidden(self) -> tuple[NDArray[np.float64], ...]:
        return self.groups[:-1]

    @property
    def probabilities(self) -> NDArray[np.float64]:
        return self.groups[-1]


def leaky_relu(
    z: NDArray[np.float64], slope: float = LEAKY_SLOPE
) -> NDArray[np.float64]:
    return np.where(z > 0.0, z, slope * z)


def _as_batch(genome: Genome, batch: ArrayLike) -> NDArray[np.float64]:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2:
        raise InputError(f"Batch must be 2-D, got {x.ndim}-D")
    if x.shape[1] != genome.n_inputs:
        raise InputError(
            f"Expected {genome.n_inputs} features, got {x.shape[1]}"
        )
    if not np.all(np.isfinite(x)):
        raise InputError("Input contains NaN or infinite values")
    return x


def forward_collect(genome: Genome, batch: ArrayLike) -> LayerActivations:
    """Evaluate a batch and keep every hidden layer's activations.

    Raises:
        InputError: On a width mismatch or non-finite input
    """
    x = _as_batch(genome, batch)
    n = x.shape[0]
    values: dict[int, NDArray[np.float64]] = {}
    for column, node_id in enumerate(genome.input_ids):
        values[node_id] = x[:, column]

    for node_id in genome.order:
        node = genome.node_map[node_id]
        if node.kind is NodeKind.INPUT:
            continue
        z = np.full(n, node.bias, dtype=np.float64)
        for source, weight in genome.incoming.get(node_id, ()):
            z = z + weight * values[source]
        values[node_id] = leaky_relu(z) if node.kind is NodeKind.HIDDEN else z

    logits = np.column_stack([values[o] for o in genome.output_ids])
    probabilities = softmax(logits, axis=1)

    hidden_layers = genome.layers.hidden_layers
    groups = tuple(
        np.column_stack([values[node_id] for node_id in layer])
        for layer in hidden_layers
    )
    return LayerActivations(
        groups=(*groups, probabilities),
        group_nodes=(*hidden_layers, genome.output_ids),
    )


def forward(genome: Genome, inputs: ArrayLike) -> NDArray[np.float64]:
    """Class probabilities for a single input vector."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 1:
        raise InputError(f"Input must be a vector, got {x.ndim}-D")
    return forward_collect(genome, x[None, :]).probabilities[0]


def predict_batch(genome: Genome, batch: ArrayLike) -> NDArray[np.float64]:
    """Class probabilities for every row of ``batch``."""
    return forward_collect(genome, batch).probabilities


def new_minimal(
    n_inputs: int,
    n_outputs: int,
    n_hidden: int,
    init: InitSpec,
    rng: np.random.Generator,
    registry: InnovationRegistry | None = None,
    key: int = 0,
) -> Genome:
    """Create a genome with one dense hidden layer (or direct links).

    Args:
        n_inputs: Number of trace features ``f``
        n_outputs: Number of classes ``m``
        n_hidden: Hidden nodes in the single initial layer (0 for direct links)
        init: Weight distribution
        rng: Source of randomness
        registry: Innovation registry of the run; a private one if omitted
        key: Genome id
    """
    if n_inputs < 1 or n_outputs < 1 or n_hidden < 0:
        raise InputError(
            f"Invalid topology ({n_inputs} inputs, {n_outputs} outputs, "
            f"{n_hidden} hidden)"
        )
    registry = registry if registry is not None else InnovationRegistry()
    inputs = list(range(n_inputs))
    outputs = list(range(n_inputs, n_inputs + n_outputs))
    hidden = list(range(n_inputs + n_outputs, n_inputs + n_outputs + n_hidden))
    registry.reserve_nodes(n_inputs + n_outputs + n_hidden)

    if n_hidden:
        layers = [(inputs, hidden), (hidden, outputs)]
    else:
        layers = [(inputs, outputs)]

    connections: list[ConnectionGene] = []
    biases: dict[int, float] = {}
    for sources, targets in layers:
        fan_in, fan_out = len(sources), len(targets)
        weights = init.draw(rng, fan_in * fan_out, fan_in, fan_out)
        for index, (src, dst) in enumerate(
            (s, t) for s in sources for t in targets
        ):
            connections.append(
                ConnectionGene(
                    innovation=registry.connection(src, dst),
                    from_node=src,
                    to_node=dst,
                    weight=float(weights[index]),
                )
            )
        for dst, bias in zip(targets, init.draw(rng, fan_out, fan_in, fan_out)):
            biases[dst] = float(bias)

    nodes = [NodeGene(i, NodeKind.INPUT) for i in inputs]
    nodes += [
        NodeGene(o, NodeKind.OUTPUT, biases[o], Activation.SOFTMAX_MEMBER)
        for o in outputs
    ]
    nodes += [NodeGene(h, NodeKind.HIDDEN, biases[h]) for h in hidden]
    return Genome(key=key, nodes=tuple(nodes), connections=tuple(connections))


def trainable_parameters(genome: Genome) -> int:
    """Enabled connection weights plus hidden and output biases."""
    weights = sum(1 for c in genome.connections if c.enabled)
    return weights + len(genome.hidden_ids) + len(genome.output_ids)


@dataclass(frozen=True)
class GenomeSummary:
    nodes: int
    hidden_nodes: int
    connections: int
    enabled_connections: int
    depth: int
    trainable_parameters: int


def describe(genome: Genome) -> GenomeSummary:
    return GenomeSummary(
        nodes=len(genome.nodes),
        hidden_nodes=len(genome.hidden_ids),
        connections=len(genome.connections),
        enabled_connections=sum(1 for c in genome.connections if c.enabled),
        depth=genome.layers.depth,
        trainable_parameters=trainable_parameters(genome),
    )
