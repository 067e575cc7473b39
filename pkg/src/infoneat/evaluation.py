"""Key-recovery metrics: key scores, rank, average rank and T_GE statistics."""

from __future__ import annotations

import csv
import io
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from enum import Enum
from typing import Protocol

import numpy as np
from loguru import logger
from numpy.typing import ArrayLike, NDArray

from .data import TraceSet
from .exceptions import FormatError, InputError, SizeError
from .sbox import AES_SBOX, check_sbox, hamming_weight, inverse_sbox
from .seeding import child_seed, derive_rng

SCORE_EPSILON = 1e-40
DEFAULT_REPETITIONS = 50
DEFAULT_THRESHOLDS = (0, 1, 20, 50)
CURVE_COLUMNS = ("n_traces", "mean_rank", "min_rank", "median_rank")


class LeakageKind(str, Enum):
    SBOX_ID = "sbox_id"
    SBOX_HD = "sbox_hd"
    SYNTHETIC_ID = "synthetic_id"


@dataclass(frozen=True, eq=False)
class LeakageModelSpec:
    """Maps (plaintext byte, key hypothesis) to the class a prediction scores.

    ``class_table[p, k]`` is the class of plaintext (or ciphertext) ``p``
    under key hypothesis ``k``; the key space has ``len(sbox)`` entries.
    """

    kind: LeakageKind
    sbox: NDArray[np.uint8]
    class_table: NDArray[np.int64]
    n_classes: int

    def __post_init__(self) -> None:
        size = self.sbox.shape[0]
        if self.class_table.shape != (size, size):
            raise InputError(
                f"Class table must be {size}x{size}, got {self.class_table.shape}"
            )
        if self.class_table.min() < 0 or self.class_table.max() >= self.n_classes:
            raise InputError(f"Class table entries must lie in [0, {self.n_classes})")

    @property
    def n_keys(self) -> int:
        return int(self.sbox.shape[0])

    @classmethod
    def identity(
        cls,
        sbox: Sequence[int] | NDArray[np.integer] = AES_SBOX,
        kind: LeakageKind = LeakageKind.SBOX_ID,
    ) -> LeakageModelSpec:
        """ID model: class = sbox(p ^ k)."""
        table = check_sbox(sbox)
        size = table.shape[0]
        grid = np.arange(size)[:, None] ^ np.arange(size)[None, :]
        return cls(kind, table, table[grid].astype(np.int64), size)

    @classmethod
    def hamming_distance(
        cls,
        sbox: Sequence[int] | NDArray[np.integer] = AES_SBOX,
        table: ArrayLike | None = None,
    ) -> LeakageModelSpec:
        """Last-round HD model: class = HW(InvSbox(c ^ k) ^ c).

        A config-supplied ``table`` replaces the default mapping.
        """
        box = check_sbox(sbox)
        size = box.shape[0]
        if table is not None:
            classes = np.asarray(table, dtype=np.int64)
            return cls(LeakageKind.SBOX_HD, box, classes, int(classes.max()) + 1)
        c = np.arange(size)[:, None]
        grid = c ^ np.arange(size)[None, :]
        classes = hamming_weight(inverse_sbox(box)[grid] ^ c)
        n_bits = max(1, int(size - 1).bit_length())
        return cls(LeakageKind.SBOX_HD, box, classes, n_bits + 1)

    def class_of(self, plaintexts: ArrayLike, key: int) -> NDArray[np.int64]:
        p = np.asarray(plaintexts, dtype=np.int64)
        return self.class_table[p, key]


class Predictor(Protocol):
    def predict_proba(self, traces: ArrayLike) -> NDArray[np.float64]: ...


@dataclass(frozen=True, eq=False)
class ScoreVector:
    """Log-likelihood score of every key hypothesis."""

    log_scores: NDArray[np.float64]

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.log_scores)):
            raise InputError("Scores must be finite")

    @property
    def best_key(self) -> int:
        return int(np.argmax(self.log_scores))


def _checked(
    predictions: ArrayLike, plaintexts: ArrayLike, model: LeakageModelSpec
) -> tuple[NDArray[np.float64], NDArray[np.int64]]:
    probs = np.asarray(predictions, dtype=np.float64)
    p = np.asarray(plaintexts, dtype=np.int64).reshape(-1)
    if probs.ndim != 2 or probs.shape[0] != p.shape[0]:
        raise InputError(
            f"Predictions of shape {probs.shape} for {p.shape[0]} plaintexts"
        )
    if probs.shape[1] != model.n_classes:
        raise InputError(
            f"Predictions have {probs.shape[1]} classes, "
            f"model expects {model.n_classes}"
        )
    if p.size and (p.min() < 0 or p.max() >= model.n_keys):
        raise InputError(f"Plaintext bytes must lie in [0, {model.n_keys})")
    return probs, p


def _log_contributions(
    probs: NDArray[np.float64], plaintexts: NDArray[np.int64], model: LeakageModelSpec
) -> NDArray[np.float64]:
    """N x K matrix of ln y_i[class(p_i, k)]."""
    log_probs = np.log(np.clip(probs, SCORE_EPSILON, 1.0))
    classes = model.class_table[plaintexts]
    return np.take_along_axis(log_probs, classes, axis=1)


def key_scores(
    predictions: ArrayLike, plaintexts: ArrayLike, model: LeakageModelSpec
) -> ScoreVector:
    """Sum over traces of ln(probability of the class each key implies).

    Raises:
        InputError: If prediction and plaintext counts differ, or the class
            count does not match the leakage model
    """
    probs, p = _checked(predictions, plaintexts, model)
    return ScoreVector(_log_contributions(probs, p, model).sum(axis=0))


def rank(scores: ScoreVector | ArrayLike, true_key: int) -> int:
    """Number of key hypotheses scoring strictly higher than ``true_key``."""
    if isinstance(scores, ScoreVector):
        values = scores.log_scores
    else:
        values = np.asarray(scores, dtype=np.float64)
    return int(np.count_nonzero(values > values[true_key]))


@dataclass(frozen=True, eq=False)
class RankCurve:
    """Average, minimum and median rank per number of attack traces."""

    trace_counts: NDArray[np.int64]
    avg_rank: NDArray[np.float64]
    min_rank: NDArray[np.float64]
    median_rank: NDArray[np.float64]
    n_repetitions: int

    def __post_init__(self) -> None:
        n = self.trace_counts.shape[0]
        if n == 0:
            raise InputError("Rank curve is empty")
        columns = (self.avg_rank, self.min_rank, self.median_rank)
        if any(column.shape[0] != n for column in columns):
            raise InputError("Rank curve columns differ in length")
        if np.any(np.diff(self.trace_counts) <= 0):
            raise InputError("Trace counts must be strictly increasing")

    def __len__(self) -> int:
        return int(self.trace_counts.shape[0])

    @property
    def final_rank(self) -> float:
        return float(self.avg_rank[-1])

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(CURVE_COLUMNS)
        rows = zip(self.trace_counts, self.avg_rank, self.min_rank, self.median_rank)
        for count, *values in rows:
            writer.writerow([int(count), *(repr(float(v)) for v in values)])
        return buffer.getvalue()

    @classmethod
    def from_csv(cls, text: str, n_repetitions: int = 0) -> RankCurve:
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or tuple(header) != CURVE_COLUMNS:
            raise FormatError(f"Unexpected rank curve header {header!r}", 1)
        rows: list[list[float]] = []
        for line, record in enumerate(reader, start=2):
            try:
                rows.append([float(v) for v in record])
            except ValueError as exc:
                raise FormatError(f"Malformed rank curve row: {exc}", line) from exc
        if not rows or any(len(r) != len(CURVE_COLUMNS) for r in rows):
            raise FormatError("Rank curve has no well-formed rows", 2)
        table = np.asarray(rows)
        return cls(
            table[:, 0].astype(np.int64),
            table[:, 1],
            table[:, 2],
            table[:, 3],
            n_repetitions,
        )


def average_rank(
    model: Predictor,
    attack_set: TraceSet,
    leakage: LeakageModelSpec,
    trace_counts: Sequence[int],
    repetitions: int = DEFAULT_REPETITIONS,
    rng: np.random.Generator | int = 0,
    tie_noise: float = 0.0,
) -> RankCurve:
    """Rank of the true key averaged over random attack subsets.

    Each repetition draws one permutation of the attack traces without
    replacement and scores nested prefixes of it, one per entry of
    ``trace_counts``. Repetition r uses its own generator derived from the
    base seed and r. ``tie_noise`` adds symmetric noise to the scores and is
    meant for diagnostics only.

    Raises:
        SizeError: If the attack set holds fewer traces than requested
        InputError: On a variable-key attack set or invalid counts
    """
    counts = np.asarray(sorted(set(int(c) for c in trace_counts)), dtype=np.int64)
    if counts.size == 0 or counts[0] < 1:
        raise InputError("Trace counts must be positive")
    if repetitions < 1:
        raise InputError("At least one repetition is required")
    if attack_set.n < counts[-1]:
        raise SizeError(int(counts[-1]), attack_set.n, "attack traces")
    if not attack_set.fixed_key:
        raise InputError("Rank needs a fixed-key attack set")

    true_key = int(attack_set.key[0])
    predictions = model.predict_proba(attack_set.traces)
    probs, p = _checked(predictions, attack_set.plaintexts, leakage)
    contributions = _log_contributions(probs, p, leakage)
    base_seed = rng if isinstance(rng, int) else child_seed(rng)

    ranks = np.empty((repetitions, counts.size), dtype=np.float64)
    for r in range(repetitions):
        sub = derive_rng(base_seed, "attack", r)
        order = sub.permutation(attack_set.n)[: counts[-1]]
        running = np.cumsum(contributions[order], axis=0)
        for j, n_traces in enumerate(counts):
            scores = running[n_traces - 1]
            if tie_noise > 0.0:
                scores = scores + sub.normal(0.0, tie_noise, size=scores.shape)
            ranks[r, j] = rank(scores, true_key)

    curve = RankCurve(
        counts,
        ranks.mean(axis=0),
        ranks.min(axis=0),
        np.median(ranks, axis=0),
        repetitions,
    )
    logger.debug(
        "Average rank {:.2f} with {} traces over {} attacks",
        curve.final_rank,
        int(counts[-1]),
        repetitions,
    )
    return curve


def tge_metrics(
    curve: RankCurve, thresholds: Sequence[int] = DEFAULT_THRESHOLDS
) -> dict[int, int | None]:
    """Smallest trace count reaching each average-rank threshold.

    Threshold 0 requires an average rank of exactly 0; the others use ≤.
    ``None`` marks a threshold never reached.
    """
    result: dict[int, int | None] = {}
    for threshold in thresholds:
        if threshold == 0:
            reached = curve.avg_rank == 0.0
        else:
            reached = curve.avg_rank <= threshold
        hits = np.flatnonzero(reached)
        result[threshold] = int(curve.trace_counts[hits[0]]) if hits.size else None
    return result


def tge_table_csv(metrics: Mapping[int, int | None]) -> str:
    """CSV with columns threshold, n_traces; an unreached threshold reads ``F``."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["threshold", "n_traces"])
    for threshold in sorted(metrics):
        value = metrics[threshold]
        writer.writerow([threshold, "F" if value is None else value])
    return buffer.getvalue()


def default_trace_counts(limit: int, step: int = 10) -> list[int]:
    """1, then every ``step`` traces up to ``limit``."""
    counts = [1, *range(step, limit + 1, step)]
    return sorted(set(c for c in counts if c <= limit))
