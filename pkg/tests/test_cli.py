"""Tests for the command-line interface and the commands behind it."""

from __future__ import annotations

import csv
import io
import sys
from collections.abc import Iterator
from pathlib import Path

import pytest
from click.testing import CliRunner
from loguru import logger

from infoneat import __version__, load_traceset
from infoneat.cli import cli
from infoneat.commands import trace_file_name
from infoneat.serialization import load_model

CONFIG = """\
seed = 3

[evolution]
population_size = 6
n_hidden = 3
max_generations = 4
batch_size = 20
target_species = 2

[synth]
n_classes = 4
n_per_class = 20
n_features = 6
informative_indices = [1, 4]
noise_sigma = 0.02
key = 1
sbox = [2, 0, 3, 1]

[evaluation]
trace_counts = [1, 5, 10]
repetitions = 3
attack_traces = 40
folds = 2
"""


@pytest.fixture(autouse=True)
def restore_logging() -> Iterator[None]:
    yield
    logger.remove()
    logger.add(sys.stderr)


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


@pytest.fixture
def config_file(tmp_path: Path) -> Path:
    path = tmp_path / "run.toml"
    path.write_text(CONFIG)
    return path


def run(runner: CliRunner, *args: str | Path) -> str:
    result = runner.invoke(cli, [str(a) for a in args])
    assert result.exit_code == 0, result.output
    return result.output


class TestPipeline:
    """synth, train, report, attack and crossval end to end."""

    def test_full_run(
        self, runner: CliRunner, config_file: Path, tmp_path: Path
    ) -> None:
        out = tmp_path / "run"
        common = ("--config", config_file, "--out", out)

        run(runner, "synth", *common)
        train_set = load_traceset(out / "train.traces")
        attack_set = load_traceset(out / "attack.traces")
        assert train_set.class_counts().tolist() == [20, 20, 20, 20]
        assert attack_set.n == 40

        run(runner, "train", *common)
        model = load_model(out / "model.json")
        assert model.n_classes == 4
        for c in range(4):
            assert (out / trace_file_name(c)).exists()

        run(runner, "report", *common)
        assert "No attack results yet." in (out / "report.md").read_text()

        run(runner, "attack", *common)
        rows = list(csv.DictReader(io.StringIO((out / "rank_curve.csv").read_text())))
        assert [int(r["n_traces"]) for r in rows] == [1, 5, 10]
        assert all(0.0 <= float(r["mean_rank"]) <= 3.0 for r in rows)
        assert (out / "rank_curve.svg").exists()
        assert (out / "tge.csv").read_text().startswith("threshold,n_traces\n")

        run(runner, "report", *common)
        assert "Average rank" in (out / "report.md").read_text()
        assert (out / "report.json").exists()

    def test_same_seed_same_artifacts(
        self, runner: CliRunner, config_file: Path, tmp_path: Path
    ) -> None:
        for name in ("a", "b"):
            common = ("--config", config_file, "--out", tmp_path / name)
            for command in ("synth", "train", "attack"):
                run(runner, command, *common)

        files = ["train.traces", "model.json", "rank_curve.csv", "tge.csv"]
        files += [trace_file_name(c) for c in range(4)]
        for name in files:
            a = (tmp_path / "a" / name).read_bytes()
            assert a == (tmp_path / "b" / name).read_bytes(), name

    def test_crossval(
        self, runner: CliRunner, config_file: Path, tmp_path: Path
    ) -> None:
        out = tmp_path / "cv"
        common = ("--config", config_file, "--out", out)
        run(runner, "synth", *common)

        run(runner, "crossval", *common)

        rows = list(csv.DictReader(io.StringIO((out / "folds.csv").read_text())))
        assert [r["fold"] for r in rows] == ["0", "1"]
        assert all(r["mean_rank_at_max"] for r in rows)


class TestErrors:
    """Failures exit with status 1."""

    def test_synth_without_seed(self, runner: CliRunner, tmp_path: Path) -> None:
        result = runner.invoke(cli, ["synth", "--out", str(tmp_path)])

        assert result.exit_code == 1
        assert "seed" in result.output

    def test_missing_dataset(self, runner: CliRunner, tmp_path: Path) -> None:
        result = runner.invoke(
            cli, ["train", "--seed", "1", "--out", str(tmp_path / "empty")]
        )

        assert result.exit_code == 1

    def test_missing_model_for_report(
        self, runner: CliRunner, tmp_path: Path
    ) -> None:
        result = runner.invoke(cli, ["report", "--out", str(tmp_path)])

        assert result.exit_code == 1

    def test_invalid_config(self, runner: CliRunner, tmp_path: Path) -> None:
        path = tmp_path / "bad.toml"
        path.write_text("[evolution]\npopulation = 3\n")

        result = runner.invoke(cli, ["synth", "--config", str(path)])

        assert result.exit_code == 1
        assert "evolution.population" in result.output


def test_version(runner: CliRunner) -> None:
    result = runner.invoke(cli, ["--version"])

    assert result.exit_code == 0
    assert __version__ in result.output
