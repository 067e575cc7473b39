"""infoneat - neuroevolution guided by matrix-based Rényi information.

Evolves irregular-topology networks with NEAT, picks survivors and decides
when to stop using conditional mutual information between successive best
genomes, stacks one-vs-all sub-models under a logistic meta-learner, and
scores profiled side-channel attacks by key rank and guessing entropy.

Example:
    from infoneat import PipelineBuilder
    from infoneat.commands import cmd_attack, cmd_synth, cmd_train

    config = (
        PipelineBuilder()
        .with_seed(7)
        .with_evolution(max_generations=10)
        .with_paths(out="run")
        .build()
    )
    cmd_synth(config)
    cmd_train(config)
    cmd_attack(config)
"""

from .builder import PipelineBuilder
from .config import EvaluationSettings, PathSettings, RunConfig
from .criteria import StopReason, evolve_with_criteria, select_best_genome, should_stop
from .data import SynthSpec, TraceSet, load_traceset, save_traceset, synth_traces
from .ensemble import StackedModel, StackingConfig, kfold_train, predict, train_stacked
from .entropy import cmi, joint_entropy, renyi_entropy
from .evaluation import LeakageModelSpec, RankCurve, average_rank, rank, tge_metrics
from .evolution import EvolutionConfig
from .exceptions import (
    FormatError,
    InfoNeatError,
    InputError,
    NumericError,
    SizeError,
    StructureError,
    ValidationError,
)
from .network import Genome, forward

__all__ = [
    "PipelineBuilder",
    "RunConfig",
    "EvolutionConfig",
    "SynthSpec",
    "StackingConfig",
    "EvaluationSettings",
    "PathSettings",
    "Genome",
    "forward",
    "renyi_entropy",
    "joint_entropy",
    "cmi",
    "evolve_with_criteria",
    "select_best_genome",
    "should_stop",
    "StopReason",
    "TraceSet",
    "synth_traces",
    "load_traceset",
    "save_traceset",
    "StackedModel",
    "train_stacked",
    "kfold_train",
    "predict",
    "LeakageModelSpec",
    "RankCurve",
    "average_rank",
    "rank",
    "tge_metrics",
    "InfoNeatError",
    "InputError",
    "SizeError",
    "NumericError",
    "StructureError",
    "FormatError",
    "ValidationError",
]

__version__ = "0.1.0b1"
