"""Trace sets: synthesis, balancing, scaling, folds and file formats.

Native format (little endian)::

    magic      8 bytes   b"INEATTRC"
    version    u16       1
    n          u32       traces
    f          u32       features per trace
    m          u16       classes
    key_len    u32       1 (fixed key) or n (per-trace keys)
    scaled     u8        0 or 1
    seed       i64       -1 when unknown
    source_len u16       then ``source_len`` bytes of UTF-8
    labels     u8[n]
    plaintexts u8[n]
    key        u8[key_len]
    traces     f32[n * f] row-major
"""

from __future__ import annotations

import csv
import io
import struct
from collections.abc import Sequence
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
from loguru import logger
from numpy.typing import ArrayLike, NDArray
from sklearn.model_selection import StratifiedKFold

from .exceptions import FormatError, InputError, SizeError
from .sbox import bit_width, check_sbox, default_sbox, hamming_weight, inverse_sbox
from .seeding import child_seed

MAGIC = b"INEATTRC"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sHIIHIBqH")


class TraceFormat(str, Enum):
    NATIVE = "native"
    CSV = "csv"
    ASCAD = "ascad_hdf5"

    @classmethod
    def from_path(cls, path: str | Path) -> TraceFormat:
        suffix = Path(path).suffix.lower()
        if suffix == ".csv":
            return cls.CSV
        if suffix in {".h5", ".hdf5"}:
            return cls.ASCAD
        return cls.NATIVE


@dataclass(frozen=True)
class TraceMeta:
    n_classes: int
    scaled: bool = False
    source: str = ""
    seed: int | None = None


@dataclass(frozen=True, eq=False)
class TraceSet:
    """Side-channel traces with labels, plaintext bytes and key bytes.

    ``key`` holds one byte for fixed-key sets or one byte per trace.
    """

    traces: NDArray[np.float32]
    labels: NDArray[np.int64]
    plaintexts: NDArray[np.uint8]
    key: NDArray[np.uint8]
    meta: TraceMeta

    def __post_init__(self) -> None:
        traces = np.ascontiguousarray(self.traces, dtype=np.float32)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        plaintexts = np.asarray(self.plaintexts, dtype=np.uint8).reshape(-1)
        key = np.atleast_1d(np.asarray(self.key, dtype=np.uint8)).reshape(-1)
        object.__setattr__(self, "traces", traces)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "plaintexts", plaintexts)
        object.__setattr__(self, "key", key)

        errors: list[str] = []
        if traces.ndim != 2:
            raise InputError(f"Traces must be a 2-D matrix, got {traces.ndim}-D")
        n = traces.shape[0]
        if labels.shape[0] != n:
            errors.append(f"{labels.shape[0]} labels for {n} traces")
        if plaintexts.shape[0] != n:
            errors.append(f"{plaintexts.shape[0]} plaintexts for {n} traces")
        if key.shape[0] not in {1, n}:
            errors.append(f"key must have 1 or {n} bytes, got {key.shape[0]}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.meta.n_classes):
            errors.append(f"labels must lie in [0, {self.meta.n_classes})")
        if not np.all(np.isfinite(traces)):
            errors.append("traces contain non-finite values")
        if self.meta.scaled and traces.size and (traces.min() < 0 or traces.max() > 1):
            errors.append("scaled traces must lie within [0, 1]")
        if errors:
            raise InputError("Inconsistent trace set: " + "; ".join(errors))

    @property
    def n(self) -> int:
        return int(self.traces.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.traces.shape[1])

    @property
    def n_classes(self) -> int:
        return self.meta.n_classes

    @property
    def fixed_key(self) -> bool:
        return self.key.shape[0] == 1

    def keys(self) -> NDArray[np.uint8]:
        """Key byte of every trace."""
        if self.fixed_key:
            return np.full(self.n, self.key[0], dtype=np.uint8)
        return self.key

    def class_counts(self) -> NDArray[np.int64]:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, rows: ArrayLike) -> TraceSet:
        idx = np.asarray(rows, dtype=np.int64)
        return TraceSet(
            self.traces[idx],
            self.labels[idx],
            self.plaintexts[idx],
            self.key if self.fixed_key else self.key[idx],
            self.meta,
        )

    def with_traces(self, traces: ArrayLike, **meta: Any) -> TraceSet:
        return TraceSet(
            np.asarray(traces, dtype=np.float32),
            self.labels,
            self.plaintexts,
            self.key,
            replace(self.meta, **meta),
        )

    def equals(self, other: TraceSet) -> bool:
        """Bit-exact equality of data and metadata."""
        return (
            self.meta == other.meta
            and np.array_equal(self.traces, other.traces)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.plaintexts, other.plaintexts)
            and np.array_equal(self.key, other.key)
        )


def concatenate(sets: Sequence[TraceSet]) -> TraceSet:
    if not sets:
        raise InputError("Nothing to concatenate")
    first = sets[0]
    fixed = all(s.fixed_key and s.key[0] == first.key[0] for s in sets)
    return TraceSet(
        np.concatenate([s.traces for s in sets]),
        np.concatenate([s.labels for s in sets]),
        np.concatenate([s.plaintexts for s in sets]),
        first.key if fixed else np.concatenate([s.keys() for s in sets]),
        first.meta,
    )


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a synthetic identity-leakage trace set."""

    n_classes: int = 16
    n_per_class: int = 150
    n_features: int = 50
    informative_indices: tuple[int, ...] = (10, 20, 30)
    # samples leaking from each informative index on, cut at the trace end
    leak_width: int = 10
    noise_sigma: float = 0.08
    desync_window: int = 0
    key: int = 0xB
    sbox: tuple[int, ...] | None = None

    @property
    def table(self) -> NDArray[np.uint8]:
        if self.sbox is not None:
            return check_sbox(self.sbox)
        return default_sbox(self.n_classes)

    @classmethod
    def keys(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def validate(self) -> list[str]:
        errors: list[str] = []
        if self.n_classes < 2 or self.n_classes > 256:
            errors.append("synth.n_classes must be in [2, 256]")
        elif self.n_classes & (self.n_classes - 1):
            errors.append("synth.n_classes must be a power of two")
        if self.n_per_class < 1:
            errors.append("synth.n_per_class must be positive")
        if self.n_features < 1:
            errors.append("synth.n_features must be positive")
        if not self.informative_indices:
            errors.append("synth.informative_indices must not be empty")
        if any(i < 0 or i >= self.n_features for i in self.informative_indices):
            errors.append("synth.informative_indices must be below n_features")
        if self.leak_width < 1:
            errors.append("synth.leak_width must be positive")
        if self.noise_sigma < 0:
            errors.append("synth.noise_sigma must be non-negative")
        if self.desync_window < 0 or 2 * self.desync_window >= self.n_features:
            errors.append("synth.desync_window must be in [0, n_features / 2)")
        if not 0 <= self.key < self.n_classes:
            errors.append("synth.key must be below n_classes")
        try:
            table = self.table
        except InputError as exc:
            errors.append(f"synth.sbox: {exc}")
        else:
            if table.shape[0] != self.n_classes:
                errors.append("synth.sbox must have n_classes entries")
        return errors


def synth_traces(
    spec: SynthSpec,
    n_total: int | None,
    rng: np.random.Generator,
    seed: int | None = None,
) -> TraceSet:
    """Generate traces leaking the Hamming weight of ``sbox(p ^ key)``.

    With ``n_total`` omitted every class gets exactly ``n_per_class`` traces;
    otherwise plaintexts are drawn uniformly. Each informative index leaks on
    itself and the ``leak_width - 1`` samples after it.

    Raises:
        InputError: If ``spec`` is invalid
    """
    errors = spec.validate()
    if errors:
        raise InputError("Invalid synth spec: " + "; ".join(errors))
    m = spec.n_classes
    table = spec.table

    if n_total is None:
        classes = np.repeat(np.arange(m, dtype=np.int64), spec.n_per_class)
        plaintexts = (inverse_sbox(table)[classes] ^ spec.key).astype(np.uint8)
        plaintexts = plaintexts[rng.permutation(plaintexts.shape[0])]
    else:
        if n_total < 1:
            raise SizeError(1, n_total, "traces")
        plaintexts = rng.integers(0, m, size=n_total).astype(np.uint8)
    labels = table[plaintexts ^ np.uint8(spec.key)].astype(np.int64)
    n = labels.shape[0]

    traces = rng.normal(0.0, spec.noise_sigma, size=(n, spec.n_features))
    signal = hamming_weight(labels) / bit_width(m)
    leaking = np.zeros(spec.n_features, dtype=bool)
    for index in spec.informative_indices:
        leaking[index : index + spec.leak_width] = True
    traces[:, leaking] += signal[:, None]

    if spec.desync_window > 0:
        shifts = rng.integers(0, spec.desync_window + 1, size=n)
        for row, shift in enumerate(shifts):
            traces[row] = np.roll(traces[row], int(shift))

    return TraceSet(
        traces.astype(np.float32),
        labels,
        plaintexts,
        np.array([spec.key], dtype=np.uint8),
        TraceMeta(m, False, "synthetic", seed),
    )


def undersample_balance(
    trace_set: TraceSet, per_class_cap: int | None = None
) -> TraceSet:
    """Keep the first min(smallest class, cap) traces of every class."""
    counts = trace_set.class_counts()
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise InputError(f"Classes without traces: {empty.tolist()}")
    keep = int(counts.min())
    if per_class_cap is not None:
        keep = min(keep, per_class_cap)
    rows = np.concatenate(
        [
            np.flatnonzero(trace_set.labels == c)[:keep]
            for c in range(trace_set.n_classes)
        ]
    )
    return trace_set.subset(np.sort(rows))


@dataclass(frozen=True, eq=False)
class FeatureScaler:
    """Per-feature min-max statistics of a training set."""

    minimum: NDArray[np.float64]
    span: NDArray[np.float64]
    clamped: int = field(default=0, compare=False)

    @classmethod
    def fit(cls, traces: ArrayLike) -> FeatureScaler:
        x = np.asarray(traces, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise InputError("Scaler needs a non-empty 2-D matrix")
        minimum = x.min(axis=0)
        return cls(minimum, x.max(axis=0) - minimum)

    def transform(self, traces: ArrayLike) -> tuple[NDArray[np.float64], int]:
        """Scale with the fitted statistics; returns the values and the clamp count.

        Constant features map to 0.
        """
        x = np.asarray(traces, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.minimum.shape[0]:
            raise InputError(
                f"Expected {self.minimum.shape[0]} features, got shape {x.shape}"
            )
        safe = np.where(self.span > 0, self.span, 1.0)
        scaled = np.where(self.span > 0, (x - self.minimum) / safe, 0.0)
        outside = int(np.count_nonzero((scaled < 0.0) | (scaled > 1.0)))
        return np.clip(scaled, 0.0, 1.0), outside

    def to_record(self) -> dict[str, list[float]]:
        return {
            "minimum": [float(v) for v in self.minimum],
            "span": [float(v) for v in self.span],
        }

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> FeatureScaler:
        try:
            minimum = np.asarray(record["minimum"], dtype=np.float64)
            span = np.asarray(record["span"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"Malformed scaler record: {exc}") from exc
        if minimum.shape != span.shape or minimum.ndim != 1:
            raise FormatError("Scaler minimum and span differ in shape")
        return cls(minimum, span)


def scale_features(
    trace_set: TraceSet, scaler: FeatureScaler | None = None
) -> tuple[TraceSet, FeatureScaler]:
    """Min-max scale to [0, 1], fitting on ``trace_set`` unless given statistics.

    Values that fall outside the training range are clamped and counted.
    """
    fitted = scaler if scaler is not None else FeatureScaler.fit(trace_set.traces)
    scaled, outside = fitted.transform(trace_set.traces)
    if outside:
        logger.warning("Clamped {} feature values outside the training range", outside)
    return trace_set.with_traces(scaled, scaled=True), replace(fitted, clamped=outside)


def shuffle(trace_set: TraceSet, rng: np.random.Generator) -> TraceSet:
    return trace_set.subset(rng.permutation(trace_set.n))


@dataclass(frozen=True)
class Fold:
    index: int
    train_rows: NDArray[np.int64]
    test_rows: NDArray[np.int64]


def kfold_split(
    trace_set: TraceSet, k: int, rng: np.random.Generator
) -> tuple[Fold, ...]:
    """Stratified, disjoint and exhaustive k-fold partition of the rows."""
    if k < 2:
        raise InputError(f"k must be at least 2, got {k}")
    counts = trace_set.class_counts()
    present = counts[counts > 0]
    if present.size and present.min() < k:
        raise SizeError(k, int(present.min()), "traces in the smallest class")
    splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=child_seed(rng))
    dummy = np.zeros((trace_set.n, 1))
    return tuple(
        Fold(i, np.sort(train).astype(np.int64), np.sort(test).astype(np.int64))
        for i, (train, test) in enumerate(splitter.split(dummy, trace_set.labels))
    )


def _encode_native(trace_set: TraceSet) -> bytes:
    source = trace_set.meta.source.encode("utf-8")
    if trace_set.n_classes > 256:
        raise InputError("Native format stores labels as single bytes")
    header = _HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        trace_set.n,
        trace_set.n_features,
        trace_set.n_classes,
        trace_set.key.shape[0],
        int(trace_set.meta.scaled),
        -1 if trace_set.meta.seed is None else trace_set.meta.seed,
        len(source),
    )
    return b"".join(
        [
            header,
            source,
            trace_set.labels.astype(np.uint8).tobytes(),
            trace_set.plaintexts.tobytes(),
            trace_set.key.tobytes(),
            trace_set.traces.astype("<f4").tobytes(),
        ]
    )


def _take(payload: bytes, offset: int, size: int, what: str) -> bytes:
    end = offset + size
    if end > len(payload):
        raise FormatError(
            f"Truncated {what}: need {size} bytes, {len(payload) - offset} left",
            offset,
        )
    return payload[offset:end]


def _decode_native(payload: bytes) -> TraceSet:
    head = _take(payload, 0, _HEADER.size, "header")
    magic, version, n, f, m, key_len, scaled, seed, source_len = _HEADER.unpack(head)
    if magic != MAGIC:
        raise FormatError("Not an infoneat trace file (bad magic)", 0)
    if version != FORMAT_VERSION:
        raise FormatError(f"Unsupported trace file version {version}", 8)
    if key_len not in {1, n}:
        raise FormatError(f"Key length {key_len} does not match {n} traces", 20)
    offset = _HEADER.size
    source = _take(payload, offset, source_len, "source tag")
    offset += source_len
    labels = np.frombuffer(_take(payload, offset, n, "labels"), dtype=np.uint8)
    offset += n
    plaintexts = np.frombuffer(_take(payload, offset, n, "plaintexts"), dtype=np.uint8)
    offset += n
    key = np.frombuffer(_take(payload, offset, key_len, "key"), dtype=np.uint8)
    offset += key_len
    raw = _take(payload, offset, 4 * n * f, "traces")
    offset += 4 * n * f
    if offset != len(payload):
        raise FormatError(f"{len(payload) - offset} trailing bytes", offset)
    traces = np.frombuffer(raw, dtype="<f4").reshape(n, f).astype(np.float32)
    try:
        return TraceSet(
            traces,
            labels.astype(np.int64),
            plaintexts.copy(),
            key.copy(),
            TraceMeta(
                m, bool(scaled), source.decode("utf-8"), None if seed < 0 else seed
            ),
        )
    except InputError as exc:
        raise FormatError(str(exc), _HEADER.size) from exc


def _encode_csv(trace_set: TraceSet) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(
        ["label", "plaintext", *(f"f{i}" for i in range(trace_set.n_features))]
    )
    for label, plaintext, row in zip(
        trace_set.labels, trace_set.plaintexts, trace_set.traces
    ):
        writer.writerow([int(label), int(plaintext), *(repr(float(v)) for v in row)])
    return buffer.getvalue()


def _decode_csv(text: str, n_classes: int | None, key: int) -> TraceSet:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if not header or header[:2] != ["label", "plaintext"] or len(header) < 3:
        raise FormatError("CSV header must be label,plaintext,f0..", 1)
    expected = [f"f{i}" for i in range(len(header) - 2)]
    if header[2:] != expected:
        raise FormatError("CSV feature columns must be named f0..f{n-1}", 1)

    labels: list[int] = []
    plaintexts: list[int] = []
    rows: list[list[float]] = []
    for line, record in enumerate(reader, start=2):
        if not record:
            continue
        if len(record) != len(header):
            raise FormatError(
                f"Row has {len(record)} fields, header has {len(header)}", line
            )
        try:
            label = int(record[0])
            plaintext = int(record[1])
            rows.append([float(v) for v in record[2:]])
        except ValueError as exc:
            raise FormatError(f"Unparsable value: {exc}", line) from exc
        if not 0 <= plaintext <= 255:
            raise FormatError(f"Plaintext {plaintext} is not a byte", line)
        if label < 0 or (n_classes is not None and label >= n_classes):
            raise FormatError(f"Label {label} is out of range", line)
        labels.append(label)
        plaintexts.append(plaintext)

    if not rows:
        raise FormatError("CSV contains no traces", 2)
    m = n_classes if n_classes is not None else max(labels) + 1
    try:
        return TraceSet(
            np.asarray(rows, dtype=np.float32),
            np.asarray(labels, dtype=np.int64),
            np.asarray(plaintexts, dtype=np.uint8),
            np.array([key], dtype=np.uint8),
            TraceMeta(m, False, "csv"),
        )
    except InputError as exc:
        raise FormatError(str(exc)) from exc


def _load_ascad(path: Path, group: str, byte: int) -> TraceSet:
    try:
        import h5py
    except ImportError as exc:
        raise ImportError(
            "ASCAD support requires h5py. Install with: pip install infoneat[ascad]"
        ) from exc

    with h5py.File(path, "r") as handle:
        if group not in handle:
            raise FormatError(f"HDF5 file has no group {group!r}")
        data = handle[group]
        traces = np.asarray(data["traces"], dtype=np.float32)
        labels = np.asarray(data["labels"], dtype=np.int64)
        metadata = data["metadata"]
        plaintexts = np.asarray(metadata["plaintext"][:, byte], dtype=np.uint8)
        keys = np.asarray(metadata["key"][:, byte], dtype=np.uint8)
    key = keys[:1] if np.all(keys == keys[0]) else keys
    meta = TraceMeta(256, False, f"ascad:{group}")
    return TraceSet(traces, labels, plaintexts, key, meta)


def save_traceset(
    trace_set: TraceSet,
    path: str | Path,
    format: TraceFormat | str | None = None,
) -> Path:
    """Write ``trace_set`` as native binary or CSV."""
    target = Path(path)
    kind = TraceFormat(format) if format is not None else TraceFormat.from_path(target)
    if kind is TraceFormat.NATIVE:
        target.write_bytes(_encode_native(trace_set))
    elif kind is TraceFormat.CSV:
        target.write_text(_encode_csv(trace_set), encoding="utf-8")
    else:
        raise InputError("ASCAD files are read-only")
    logger.debug("Wrote {} traces to {}", trace_set.n, target)
    return target


def load_traceset(
    path: str | Path,
    format: TraceFormat | str | None = None,
    *,
    n_classes: int | None = None,
    key: int = 0,
    group: str = "Profiling_traces",
    byte: int = 2,
) -> TraceSet:
    """Read a trace set, validating it completely before returning.

    Args:
        path: File to read
        format: native, csv or ascad_hdf5; inferred from the suffix when omitted
        n_classes: Class count for CSV input (default: largest label + 1)
        key: Fixed key byte for CSV input
        group: ASCAD group, ``Profiling_traces`` or ``Attack_traces``
        byte: ASCAD key byte index

    Raises:
        FileNotFoundError: If ``path`` does not exist
        FormatError: If the content is malformed
    """
    source = Path(path)
    kind = TraceFormat(format) if format is not None else TraceFormat.from_path(source)
    if kind is TraceFormat.NATIVE:
        result = _decode_native(source.read_bytes())
    elif kind is TraceFormat.CSV:
        result = _decode_csv(source.read_text(encoding="utf-8"), n_classes, key)
    else:
        result = _load_ascad(source, group, byte)
    logger.debug(
        "Loaded {} traces x {} features ({} classes) from {}",
        result.n,
        result.n_features,
        result.n_classes,
        source,
    )
    return result
