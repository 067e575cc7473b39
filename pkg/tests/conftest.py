"""Pytest fixtures for infoneat tests."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
import pytest

from infoneat import (
    EvolutionConfig,
    StackedModel,
    SynthSpec,
    TraceSet,
    synth_traces,
)
from infoneat.criteria import StopReason, TraceRow, TrainingTrace
from infoneat.data import FeatureScaler
from infoneat.ensemble import MetaWeights, SubModel
from infoneat.network import (
    Activation,
    ConnectionGene,
    Genome,
    NodeGene,
    NodeKind,
)


def make_genome(
    n_inputs: int,
    n_outputs: int,
    edges: Sequence[tuple[int, int, float]],
    hidden: Sequence[int] = (),
    biases: dict[int, float] | None = None,
    key: int = 0,
    disabled: Sequence[int] = (),
) -> Genome:
    """Hand-built genome; edge ``i`` gets innovation ``i``."""
    biases = biases or {}
    nodes = [NodeGene(i, NodeKind.INPUT) for i in range(n_inputs)]
    nodes += [
        NodeGene(o, NodeKind.OUTPUT, biases.get(o, 0.0), Activation.SOFTMAX_MEMBER)
        for o in range(n_inputs, n_inputs + n_outputs)
    ]
    nodes += [NodeGene(h, NodeKind.HIDDEN, biases.get(h, 0.0)) for h in hidden]
    connections = [
        ConnectionGene(i, src, dst, weight, i not in disabled)
        for i, (src, dst, weight) in enumerate(edges)
    ]
    return Genome(key=key, nodes=tuple(nodes), connections=tuple(connections))


@pytest.fixture
def rng() -> np.random.Generator:
    """A fixed-seed generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def small_spec() -> SynthSpec:
    """A small 4-class recipe with strong leakage."""
    return SynthSpec(
        n_classes=4,
        n_per_class=20,
        n_features=6,
        informative_indices=(1, 4),
        noise_sigma=0.02,
        key=1,
        sbox=(2, 0, 3, 1),
    )


@pytest.fixture
def small_set(small_spec: SynthSpec) -> TraceSet:
    """A balanced 80-trace set from ``small_spec``."""
    return synth_traces(small_spec, None, np.random.default_rng(5), seed=5)


@pytest.fixture
def tiny_evolution() -> EvolutionConfig:
    """Evolution settings small enough for unit tests."""
    return EvolutionConfig(
        population_size=6,
        n_hidden=3,
        max_generations=4,
        batch_size=20,
        target_species=2,
    )


@pytest.fixture
def hand_model(small_set: TraceSet) -> StackedModel:
    """A hand-assembled 4-class model for ``small_set``; nothing is trained."""
    sub_models = tuple(
        SubModel(
            c,
            make_genome(6, 2, [(c, 6, 0.3 * c - 0.4), (5, 7, 1.1)], key=c),
            TrainingTrace((TraceRow(1, 0.6, None, 2), TraceRow(2, 0.5, 0.01, 2))),
            StopReason.LOSS_DEGRADED,
        )
        for c in range(4)
    )
    meta = MetaWeights(
        np.arange(16, dtype=np.float64).reshape(4, 4) / 7.0,
        np.array([0.1, -0.2, 0.3, 0.0]),
        (1.3862943611198906, 1.2),
    )
    scaler = FeatureScaler.fit(small_set.traces)
    return StackedModel(sub_models, meta, scaler, "abc123")
