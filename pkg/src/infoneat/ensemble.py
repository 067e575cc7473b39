"""One-vs-all sub-models stacked under a logistic-regression meta-learner.

Sub-model ``c`` is a two-output genome trained on a balanced target-vs-rest
set (output 0 is the target class). The meta-learner sees one feature per
sub-model, its target-class confidence, and is fitted only on a held-out
slice the sub-models never trained on.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, fields
from typing import Any

import numpy as np
from joblib import Parallel, delayed
from loguru import logger
from numpy.typing import ArrayLike, NDArray
from scipy.special import logsumexp, softmax

from .criteria import StopReason, TrainingTrace, evolve_with_criteria
from .data import (
    FeatureScaler,
    TraceMeta,
    TraceSet,
    kfold_split,
    scale_features,
    shuffle,
    undersample_balance,
)
from .evaluation import LeakageModelSpec, RankCurve, average_rank, tge_metrics
from .evolution import LOG_EPSILON, EvolutionConfig
from .exceptions import InputError
from .network import Genome, predict_batch
from .seeding import child_seed, derive_rng

FEATURE_SPEC = "ova-target-confidence"
TARGET, REST = 0, 1


@dataclass(frozen=True)
class StackingConfig:
    """Holdout split and meta-learner settings."""

    holdout_fraction: float = 0.1
    holdout_per_class: int | None = None
    per_class_cap: int | None = None
    reg_strength: float = 1e-4
    max_iters: int = 500
    tol: float = 1e-6

    @classmethod
    def keys(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def validate(self) -> list[str]:
        errors: list[str] = []
        if not 0.0 < self.holdout_fraction < 1.0:
            errors.append("stacking.holdout_fraction must be in (0, 1)")
        if self.holdout_per_class is not None and self.holdout_per_class < 1:
            errors.append("stacking.holdout_per_class must be positive")
        if self.per_class_cap is not None and self.per_class_cap < 1:
            errors.append("stacking.per_class_cap must be positive")
        if self.reg_strength < 0:
            errors.append("stacking.reg_strength must be non-negative")
        if self.max_iters < 0:
            errors.append("stacking.max_iters must be non-negative")
        if self.tol < 0:
            errors.append("stacking.tol must be non-negative")
        return errors


@dataclass(frozen=True)
class SubModel:
    class_id: int
    genome: Genome
    trace: TrainingTrace = TrainingTrace()
    stop_reason: StopReason | None = None

    def __post_init__(self) -> None:
        if self.genome.n_outputs != 2:
            raise InputError(
                f"Sub-model {self.class_id} must have 2 outputs, "
                f"has {self.genome.n_outputs}"
            )

    def confidence(self, traces: ArrayLike) -> NDArray[np.float64]:
        """Probability that each trace belongs to ``class_id``."""
        return predict_batch(self.genome, traces)[:, TARGET]


@dataclass(frozen=True, eq=False)
class MetaWeights:
    """Multinomial logistic regression: ``coef`` is classes x features."""

    coef: NDArray[np.float64]
    intercept: NDArray[np.float64]
    loss_history: tuple[float, ...] = ()

    @classmethod
    def zeros(cls, n_classes: int, n_features: int) -> MetaWeights:
        return cls(np.zeros((n_classes, n_features)), np.zeros(n_classes))

    def logits(self, features: NDArray[np.float64]) -> NDArray[np.float64]:
        return features @ self.coef.T + self.intercept

    def predict_proba(self, features: NDArray[np.float64]) -> NDArray[np.float64]:
        return softmax(self.logits(features), axis=1)


@dataclass(frozen=True, eq=False)
class MetaDataset:
    features: NDArray[np.float64]
    labels: NDArray[np.int64]
    n_classes: int

    def __post_init__(self) -> None:
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise InputError("Meta features and labels disagree in shape")
        if self.features.size and (self.features.min() < 0 or self.features.max() > 1):
            raise InputError("Meta features must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class StackedModel:
    """m sub-models, the meta-learner and the training-set scaler."""

    sub_models: tuple[SubModel, ...]
    meta: MetaWeights
    scaler: FeatureScaler | None = None
    config_fingerprint: str = ""
    feature_spec: str = FEATURE_SPEC

    def __post_init__(self) -> None:
        ids = [s.class_id for s in self.sub_models]
        if ids != list(range(len(ids))):
            raise InputError("Sub-models must cover classes 0..m-1 in order")
        if self.meta.coef.shape != (len(ids), len(ids)):
            raise InputError(
                f"Meta weights of shape {self.meta.coef.shape} for {len(ids)} classes"
            )

    @property
    def n_classes(self) -> int:
        return len(self.sub_models)

    @property
    def n_features(self) -> int:
        return self.sub_models[0].genome.n_inputs

    def prepare(self, traces: ArrayLike) -> NDArray[np.float64]:
        """Apply the training-set scaling (clamped) to raw traces."""
        x = np.asarray(traces, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise InputError(
                f"Expected traces with {self.n_features} features, got shape {x.shape}"
            )
        if self.scaler is None:
            return x
        scaled, outside = self.scaler.transform(x)
        if outside:
            logger.warning("Clamped {} attack feature values", outside)
        return scaled

    def meta_features(self, traces: ArrayLike) -> NDArray[np.float64]:
        x = self.prepare(traces)
        return np.column_stack([s.confidence(x) for s in self.sub_models])

    def predict_proba(self, traces: ArrayLike) -> NDArray[np.float64]:
        return self.meta.predict_proba(self.meta_features(traces))


def predict(model: StackedModel, trace: ArrayLike) -> NDArray[np.float64]:
    """Class probabilities of a single raw trace.

    Raises:
        InputError: If the trace width does not match the model
    """
    x = np.asarray(trace, dtype=np.float64)
    if x.ndim != 1:
        raise InputError(f"Trace must be a vector, got {x.ndim}-D")
    return model.predict_proba(x[None, :])[0]


def predict_proba(model: StackedModel, traces: ArrayLike) -> NDArray[np.float64]:
    return model.predict_proba(traces)


def build_ova_dataset(
    trace_set: TraceSet, class_id: int, rng: np.random.Generator
) -> TraceSet:
    """Balanced target-vs-rest set; label 0 marks the target class.

    Raises:
        InputError: If ``class_id`` has no traces or nothing else is present
    """
    positives = np.flatnonzero(trace_set.labels == class_id)
    negatives = np.flatnonzero(trace_set.labels != class_id)
    if positives.size == 0:
        raise InputError(f"Class {class_id} is absent from the trace set")
    if negatives.size == 0:
        raise InputError(f"Class {class_id} is the only class present")
    size = min(positives.size, negatives.size)
    chosen_pos = np.sort(rng.choice(positives, size=size, replace=False))
    chosen_neg = np.sort(rng.choice(negatives, size=size, replace=False))
    rows = np.concatenate([chosen_pos, chosen_neg])
    labels = np.concatenate(
        [np.full(size, TARGET, dtype=np.int64), np.full(size, REST, dtype=np.int64)]
    )
    order = rng.permutation(rows.size)
    picked = trace_set.subset(rows[order])
    return TraceSet(
        picked.traces,
        labels[order],
        picked.plaintexts,
        picked.key,
        TraceMeta(2, picked.meta.scaled, f"ova:{class_id}", picked.meta.seed),
    )


def train_sub_model(
    class_id: int,
    trace_set: TraceSet,
    config: EvolutionConfig,
    rng: np.random.Generator,
) -> SubModel:
    """Evolve the target-vs-rest genome for ``class_id``."""
    ova = build_ova_dataset(trace_set, class_id, rng)
    result = evolve_with_criteria(ova.traces, ova.labels, 2, config, rng)
    logger.info(
        "Sub-model {}: {} generations, stop {}",
        class_id,
        result.generations,
        result.decision.reason.value if result.decision.reason else "n/a",
    )
    return SubModel(class_id, result.genome, result.trace, result.decision.reason)


def build_meta_dataset(
    sub_models: Sequence[SubModel], holdout: TraceSet
) -> MetaDataset:
    """Feature column c is sub-model c's target confidence on each holdout trace."""
    features = np.column_stack([s.confidence(holdout.traces) for s in sub_models])
    return MetaDataset(features, holdout.labels.copy(), len(sub_models))


def _meta_loss(
    weights: NDArray[np.float64],
    bias: NDArray[np.float64],
    x: NDArray[np.float64],
    y: NDArray[np.int64],
    reg: float,
) -> float:
    z = x @ weights.T + bias
    nll = np.mean(logsumexp(z, axis=1) - z[np.arange(y.size), y])
    return float(nll + 0.5 * reg * np.sum(weights * weights))


def train_meta_learner(
    meta: MetaDataset,
    reg_strength: float = 1e-4,
    max_iters: int = 500,
    tol: float = 1e-6,
) -> MetaWeights:
    """Fit multinomial logistic regression by full-batch gradient descent.

    The step is the inverse of an upper bound on the curvature of the
    objective, so the loss never increases. Iteration stops once an
    iteration improves the loss by less than ``tol``. The intercept is not
    regularised.

    Raises:
        InputError: If the dataset is empty or holds a single class
    """
    x = meta.features
    y = meta.labels
    if y.size == 0:
        raise InputError("Meta dataset is empty")
    if np.unique(y).size < 2:
        raise InputError("Meta dataset must contain at least two classes")

    n, d = x.shape
    k = meta.n_classes
    weights = np.zeros((k, d))
    bias = np.zeros(k)
    onehot = np.eye(k)[y]

    augmented = np.hstack([x, np.ones((n, 1))])
    curvature = 0.5 * float(np.linalg.norm(augmented, 2)) ** 2 / n + reg_strength
    step = 1.0 / curvature

    history = [_meta_loss(weights, bias, x, y, reg_strength)]
    for _ in range(max_iters):
        residual = softmax(x @ weights.T + bias, axis=1) - onehot
        grad_w = residual.T @ x / n + reg_strength * weights
        grad_b = residual.mean(axis=0)
        weights = weights - step * grad_w
        bias = bias - step * grad_b
        history.append(_meta_loss(weights, bias, x, y, reg_strength))
        if history[-2] - history[-1] < tol:
            break

    logger.debug(
        "Meta-learner: {} iterations, loss {:.6f} -> {:.6f}",
        len(history) - 1,
        history[0],
        history[-1],
    )
    return MetaWeights(weights, bias, tuple(history))


def split_holdout(
    trace_set: TraceSet,
    fraction: float = 0.1,
    per_class: int | None = None,
) -> tuple[TraceSet, TraceSet]:
    """Move the last slice of every class into a stacking holdout.

    The slice is ``per_class`` traces when given, else ``fraction`` of the
    class (at least one trace, never the whole class).
    """
    train_rows: list[NDArray[np.int64]] = []
    holdout_rows: list[NDArray[np.int64]] = []
    for c in range(trace_set.n_classes):
        rows = np.flatnonzero(trace_set.labels == c)
        if rows.size == 0:
            continue
        size = per_class if per_class is not None else math.ceil(fraction * rows.size)
        size = min(max(size, 1), rows.size - 1)
        if size < 1:
            raise InputError(f"Class {c} has too few traces for a stacking holdout")
        train_rows.append(rows[: rows.size - size])
        holdout_rows.append(rows[rows.size - size :])
    return (
        trace_set.subset(np.sort(np.concatenate(train_rows))),
        trace_set.subset(np.sort(np.concatenate(holdout_rows))),
    )


def train_stacked(
    trace_set: TraceSet,
    evolution: EvolutionConfig,
    stacking: StackingConfig,
    seed: int,
    workers: int = 1,
    fingerprint: str = "",
) -> StackedModel:
    """Full training pipeline: scale, shuffle, split, evolve m sub-models, stack.

    Sub-model c draws from its own generator derived from ``seed``, so the
    result does not depend on ``workers``.
    """
    scaled, scaler = scale_features(trace_set)
    shuffled = shuffle(scaled, derive_rng(seed, "shuffle"))
    train_part, holdout = split_holdout(
        shuffled, stacking.holdout_fraction, stacking.holdout_per_class
    )
    if stacking.per_class_cap is not None:
        train_part = undersample_balance(train_part, stacking.per_class_cap)

    m = trace_set.n_classes
    logger.info(
        "Training {} sub-models on {} traces ({} held out) with {} worker(s)",
        m,
        train_part.n,
        holdout.n,
        workers,
    )
    jobs = (
        delayed(train_sub_model)(
            c, train_part, evolution, derive_rng(seed, "submodel", c)
        )
        for c in range(m)
    )
    sub_models: list[SubModel] = list(Parallel(n_jobs=workers)(jobs))

    meta = build_meta_dataset(sub_models, holdout)
    weights = train_meta_learner(
        meta, stacking.reg_strength, stacking.max_iters, stacking.tol
    )
    return StackedModel(tuple(sub_models), weights, scaler, fingerprint)


def accuracy_and_loss(model: StackedModel, test_set: TraceSet) -> tuple[float, float]:
    probs = model.predict_proba(test_set.traces)
    accuracy = float(np.mean(np.argmax(probs, axis=1) == test_set.labels))
    clipped = np.clip(probs[np.arange(test_set.n), test_set.labels], LOG_EPSILON, 1.0)
    return accuracy, float(-np.mean(np.log(clipped)))


@dataclass(frozen=True)
class FoldResult:
    index: int
    n_train: int
    n_test: int
    accuracy: float
    log_loss: float
    curve: RankCurve | None = None
    tge: dict[int, int | None] | None = None

    @property
    def mean_rank_at_max(self) -> float | None:
        return None if self.curve is None else self.curve.final_rank

    def as_row(self) -> dict[str, Any]:
        return {
            "fold": self.index,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "accuracy": self.accuracy,
            "log_loss": self.log_loss,
            "mean_rank_at_max": self.mean_rank_at_max,
            "tge0": None if self.tge is None else self.tge.get(0),
        }


@dataclass(frozen=True)
class CrossValidation:
    models: tuple[StackedModel, ...]
    folds: tuple[FoldResult, ...]

    @property
    def mean_final_rank(self) -> float | None:
        """Average over folds of each fold's average rank at the largest count."""
        ranks = [f.mean_rank_at_max for f in self.folds]
        values = [r for r in ranks if r is not None]
        return math.fsum(values) / len(values) if values else None


def kfold_train(
    trace_set: TraceSet,
    k: int,
    evolution: EvolutionConfig,
    stacking: StackingConfig,
    seed: int,
    *,
    workers: int = 1,
    leakage: LeakageModelSpec | None = None,
    trace_counts: Sequence[int] | None = None,
    repetitions: int = 50,
    fingerprint: str = "",
) -> CrossValidation:
    """Train one stacked model per fold and evaluate it on the held-out fold.

    Rank curves are computed when ``leakage`` and ``trace_counts`` are given;
    counts above the fold size are dropped.

    Raises:
        InputError: If ``k`` < 2 or a class has fewer than ``k`` traces
    """
    folds = kfold_split(trace_set, k, derive_rng(seed, "folds"))
    models: list[StackedModel] = []
    results: list[FoldResult] = []
    for fold in folds:
        train = trace_set.subset(fold.train_rows)
        test = trace_set.subset(fold.test_rows)
        fold_seed = child_seed(derive_rng(seed, "fold", fold.index))
        model = train_stacked(
            train, evolution, stacking, fold_seed, workers, fingerprint
        )
        accuracy, loss = accuracy_and_loss(model, test)

        curve = None
        tge = None
        if leakage is not None and trace_counts:
            counts = [c for c in trace_counts if c <= test.n]
            if counts:
                curve = average_rank(
                    model, test, leakage, counts, repetitions, fold_seed
                )
                tge = tge_metrics(curve)
        logger.info(
            "Fold {}: accuracy {:.3f}, log loss {:.4f}", fold.index, accuracy, loss
        )
        models.append(model)
        results.append(
            FoldResult(fold.index, train.n, test.n, accuracy, loss, curve, tge)
        )
    return CrossValidation(tuple(models), tuple(results))
