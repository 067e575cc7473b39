"""Tests for trace sets, synthesis, scaling, folds and the file codecs."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from infoneat import (
    FormatError,
    InputError,
    SizeError,
    SynthSpec,
    TraceSet,
    load_traceset,
    save_traceset,
    synth_traces,
)
from infoneat.data import (
    FeatureScaler,
    TraceFormat,
    TraceMeta,
    concatenate,
    kfold_split,
    scale_features,
    undersample_balance,
)
from infoneat.sbox import hamming_weight


def tiny_set(labels: list[int], n_classes: int = 4) -> TraceSet:
    n = len(labels)
    return TraceSet(
        np.arange(n * 2, dtype=np.float32).reshape(n, 2),
        np.asarray(labels),
        np.arange(n, dtype=np.uint8),
        np.array([3], dtype=np.uint8),
        TraceMeta(n_classes),
    )


class TestTraceSet:
    """Consistency checks at construction."""

    def test_label_out_of_range_is_rejected(self) -> None:
        with pytest.raises(InputError, match="labels"):
            tiny_set([0, 1, 4])

    def test_non_finite_traces_are_rejected(self) -> None:
        with pytest.raises(InputError, match="non-finite"):
            TraceSet(
                np.array([[np.nan]]),
                np.array([0]),
                np.array([0]),
                np.array([0]),
                TraceMeta(2),
            )

    def test_all_problems_are_reported_together(self) -> None:
        with pytest.raises(InputError) as info:
            TraceSet(
                np.zeros((3, 2)),
                np.zeros(2, dtype=np.int64),
                np.zeros(1, dtype=np.uint8),
                np.zeros(1, dtype=np.uint8),
                TraceMeta(2),
            )

        assert "labels" in str(info.value)
        assert "plaintexts" in str(info.value)

    def test_fixed_key_expands_per_trace(self) -> None:
        trace_set = tiny_set([0, 1, 2])

        assert trace_set.fixed_key
        assert trace_set.keys().tolist() == [3, 3, 3]

    def test_concatenate_keeps_a_shared_fixed_key(self) -> None:
        joined = concatenate([tiny_set([0, 1]), tiny_set([2])])

        assert joined.n == 3
        assert joined.fixed_key


class TestSynth:
    """Synthetic identity-leakage traces."""

    def test_balanced_counts(self, small_set: TraceSet) -> None:
        assert small_set.class_counts().tolist() == [20, 20, 20, 20]
        assert small_set.traces.shape == (80, 6)
        assert small_set.meta.seed == 5

    def test_labels_follow_the_sbox(
        self, small_spec: SynthSpec, small_set: TraceSet
    ) -> None:
        table = np.array(small_spec.sbox)

        expected = table[small_set.plaintexts ^ small_spec.key]

        assert np.array_equal(small_set.labels, expected)

    def test_informative_features_carry_the_hamming_weight(
        self, small_set: TraceSet
    ) -> None:
        signal = hamming_weight(small_set.labels) / 2

        assert np.allclose(small_set.traces[:, 1], signal, atol=0.15)
        assert np.allclose(small_set.traces[:, 0], 0.0, atol=0.15)

    def test_uniform_plaintexts_when_total_is_given(
        self, small_spec: SynthSpec
    ) -> None:
        trace_set = synth_traces(small_spec, 33, np.random.default_rng(0))

        assert trace_set.n == 33

    def test_same_seed_same_traces(self, small_spec: SynthSpec) -> None:
        a = synth_traces(small_spec, None, np.random.default_rng(9))
        b = synth_traces(small_spec, None, np.random.default_rng(9))

        assert a.equals(b)

    def test_desync_rolls_the_signal(self) -> None:
        spec = SynthSpec(
            n_classes=4,
            n_per_class=50,
            n_features=8,
            informative_indices=(3,),
            leak_width=1,
            noise_sigma=0.0,
            desync_window=2,
            key=0,
            sbox=(2, 0, 3, 1),
        )

        trace_set = synth_traces(spec, None, np.random.default_rng(2))

        peaks = set(np.argmax(trace_set.traces, axis=1)[trace_set.labels == 3])
        assert peaks <= {3, 4, 5}
        assert len(peaks) > 1

    def test_leakage_spans_its_width_up_to_the_trace_end(self) -> None:
        spec = SynthSpec(
            n_classes=4,
            n_per_class=10,
            n_features=12,
            informative_indices=(2, 9),
            leak_width=4,
            noise_sigma=0.0,
            key=0,
            sbox=(2, 0, 3, 1),
        )

        trace_set = synth_traces(spec, None, np.random.default_rng(4))

        signal = hamming_weight(trace_set.labels) / 2
        for column in (2, 3, 4, 5, 9, 10, 11):
            assert np.array_equal(trace_set.traces[:, column], signal)
        for column in (0, 1, 6, 7, 8):
            assert not trace_set.traces[:, column].any()

    def test_invalid_spec_lists_every_problem(self) -> None:
        spec = SynthSpec(
            n_classes=6, n_per_class=0, informative_indices=(), leak_width=0
        )

        errors = spec.validate()

        assert "synth.n_classes must be a power of two" in errors
        assert "synth.n_per_class must be positive" in errors
        assert "synth.informative_indices must not be empty" in errors
        assert "synth.leak_width must be positive" in errors

    def test_invalid_spec_is_rejected(self) -> None:
        with pytest.raises(InputError):
            synth_traces(SynthSpec(n_per_class=0), None, np.random.default_rng(0))

    def test_empty_total_is_a_size_error(self, small_spec: SynthSpec) -> None:
        with pytest.raises(SizeError):
            synth_traces(small_spec, 0, np.random.default_rng(0))


class TestBalanceAndScale:
    """Undersampling and min-max scaling."""

    def test_undersample_to_smallest_class(self) -> None:
        balanced = undersample_balance(tiny_set([0, 0, 0, 1, 1, 2, 2, 3, 3, 3]))

        assert balanced.class_counts().tolist() == [2, 2, 2, 2]

    def test_undersample_cap(self) -> None:
        balanced = undersample_balance(tiny_set([0, 0, 1, 1, 2, 2, 3, 3]), 1)

        assert balanced.n == 4

    def test_empty_class_is_rejected(self) -> None:
        with pytest.raises(InputError, match="without traces"):
            undersample_balance(tiny_set([0, 1, 2]))

    def test_scaling_fits_the_unit_interval(self, small_set: TraceSet) -> None:
        scaled, scaler = scale_features(small_set)

        assert scaled.meta.scaled
        assert scaled.traces.min() >= 0.0
        assert scaled.traces.max() <= 1.0
        assert scaler.clamped == 0

    def test_out_of_range_values_are_clamped_and_counted(self) -> None:
        scaler = FeatureScaler.fit([[0.0, 1.0], [2.0, 1.0]])

        values, outside = scaler.transform([[4.0, 5.0], [-2.0, 1.0]])

        assert values.tolist() == [[1.0, 0.0], [0.0, 0.0]]
        assert outside == 2

    def test_scaler_record_is_read_back(self) -> None:
        scaler = FeatureScaler.fit([[0.0, 1.0], [2.0, 3.0]])

        restored = FeatureScaler.from_record(scaler.to_record())

        assert np.array_equal(restored.minimum, scaler.minimum)
        assert np.array_equal(restored.span, scaler.span)

    def test_malformed_scaler_record(self) -> None:
        with pytest.raises(FormatError):
            FeatureScaler.from_record({"minimum": [0.0]})


class TestFolds:
    """Stratified k-fold partitions."""

    def test_folds_are_disjoint_and_exhaustive(
        self, small_set: TraceSet, rng: np.random.Generator
    ) -> None:
        folds = kfold_split(small_set, 4, rng)

        tested = np.concatenate([f.test_rows for f in folds])
        assert sorted(tested.tolist()) == list(range(small_set.n))
        for fold in folds:
            assert not set(fold.train_rows) & set(fold.test_rows)
            counts = small_set.subset(fold.test_rows).class_counts()
            assert counts.tolist() == [5, 5, 5, 5]

    def test_k_below_two_is_rejected(
        self, small_set: TraceSet, rng: np.random.Generator
    ) -> None:
        with pytest.raises(InputError):
            kfold_split(small_set, 1, rng)

    def test_small_class_is_a_size_error(self, rng: np.random.Generator) -> None:
        with pytest.raises(SizeError):
            kfold_split(tiny_set([0, 0, 0, 1, 1]), 3, rng)


class TestCodecs:
    """Native binary and CSV files."""

    def test_native_file_is_bit_exact(
        self, small_set: TraceSet, tmp_path: Path
    ) -> None:
        path = save_traceset(small_set, tmp_path / "train.trs")

        assert load_traceset(path).equals(small_set)

    def test_csv_keeps_float32_values(
        self, small_set: TraceSet, tmp_path: Path
    ) -> None:
        path = save_traceset(small_set, tmp_path / "train.csv")

        loaded = load_traceset(path, n_classes=4, key=1)

        assert np.array_equal(loaded.traces, small_set.traces)
        assert np.array_equal(loaded.labels, small_set.labels)
        assert loaded.meta.source == "csv"

    def test_format_follows_the_suffix(self) -> None:
        assert TraceFormat.from_path("a.csv") is TraceFormat.CSV
        assert TraceFormat.from_path("a.h5") is TraceFormat.ASCAD
        assert TraceFormat.from_path("a.bin") is TraceFormat.NATIVE

    def test_bad_magic(self, tmp_path: Path) -> None:
        path = tmp_path / "junk.trs"
        path.write_bytes(b"x" * 64)

        with pytest.raises(FormatError) as info:
            load_traceset(path)

        assert info.value.offset == 0

    def test_truncated_file(self, small_set: TraceSet, tmp_path: Path) -> None:
        path = save_traceset(small_set, tmp_path / "train.trs")
        path.write_bytes(path.read_bytes()[:-3])

        with pytest.raises(FormatError, match="Truncated"):
            load_traceset(path)

    def test_trailing_bytes(self, small_set: TraceSet, tmp_path: Path) -> None:
        path = save_traceset(small_set, tmp_path / "train.trs")
        path.write_bytes(path.read_bytes() + b"\0")

        with pytest.raises(FormatError, match="trailing"):
            load_traceset(path)

    def test_csv_bad_header(self, tmp_path: Path) -> None:
        path = tmp_path / "bad.csv"
        path.write_text("y,p,f0\n0,0,1.0\n")

        with pytest.raises(FormatError):
            load_traceset(path)

    def test_csv_ragged_row_reports_its_line(self, tmp_path: Path) -> None:
        path = tmp_path / "bad.csv"
        path.write_text("label,plaintext,f0,f1\n0,0,1.0,2.0\n1,1,3.0\n")

        with pytest.raises(FormatError) as info:
            load_traceset(path)

        assert info.value.offset == 3

    @pytest.mark.parametrize(
        ("row", "message"),
        [
            ("0,300,1.0", "not a byte"),
            ("0,-1,1.0", "not a byte"),
            ("-1,0,1.0", "out of range"),
        ],
    )
    def test_csv_out_of_range_value_reports_its_line(
        self, tmp_path: Path, row: str, message: str
    ) -> None:
        path = tmp_path / "bad.csv"
        path.write_text(f"label,plaintext,f0\n1,2,0.5\n{row}\n")

        with pytest.raises(FormatError, match=message) as info:
            load_traceset(path)

        assert info.value.offset == 3

    def test_csv_label_beyond_the_class_count(self, tmp_path: Path) -> None:
        path = tmp_path / "bad.csv"
        path.write_text("label,plaintext,f0\n4,2,0.5\n")

        with pytest.raises(FormatError, match="out of range") as info:
            load_traceset(path, n_classes=4)

        assert info.value.offset == 2

    def test_ascad_is_read_only(self, small_set: TraceSet, tmp_path: Path) -> None:
        with pytest.raises(InputError):
            save_traceset(small_set, tmp_path / "out.h5")

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(FileNotFoundError):
            load_traceset(tmp_path / "absent.trs")
