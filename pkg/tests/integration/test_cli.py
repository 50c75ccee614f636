"""
Integration tests for the mixsup command line.
"""

import json

import pytest

from src.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from src.evaluation.reports import CaseDice, DiceReport, ScenarioResult, write_comparison_inputs


def _run(config_path, out_dir, *args):
    return main(["--config", str(config_path), "--output-dir", str(out_dir), *args])


@pytest.fixture
def prepared(tmp_path, tiny_run_config):
    """Output directory holding a generated dataset and fold plans."""
    out = tmp_path / "out"
    assert _run(tiny_run_config, out, "gen-data") == EXIT_OK
    assert _run(tiny_run_config, out, "folds") == EXIT_OK
    return out


class TestGenDataAndFolds:
    """Test dataset and fold plan generation."""

    def test_outputs(self, prepared):
        """Test manifest, slices, volume list, fold plans and resolved configs exist."""
        dataset = prepared / "dataset"
        records = (dataset / "manifest.jsonl").read_text().splitlines()
        assert len(records) == 8 * 10
        assert len(list((dataset / "slices").glob("*.msvd"))) == 80
        volumes = json.loads((dataset / "volumes.json").read_text())
        assert len(volumes["tumor_volume_ids"]) == 8
        folds = json.loads((prepared / "folds.json").read_text())["folds"]
        assert [f["fold_id"] for f in folds] == [1, 2]
        assert (prepared / "resolved_config.json").exists()
        assert (dataset / "resolved_config.json").exists()

    def test_same_seed_same_dataset(self, tmp_path, tiny_run_config):
        """Test regenerating with the same seed reproduces the manifest and slices."""
        for name in ("a", "b"):
            assert _run(tiny_run_config, tmp_path / name, "--seed", "4", "gen-data") == EXIT_OK
        a, b = tmp_path / "a" / "dataset", tmp_path / "b" / "dataset"
        assert (a / "manifest.jsonl").read_bytes() == (b / "manifest.jsonl").read_bytes()
        blob = "slices/vol0003_s005.msvd"
        assert (a / blob).read_bytes() == (b / blob).read_bytes()


class TestTrainAndEval:
    """Test training and scoring through the CLI."""

    def test_train_then_eval(self, prepared, tiny_run_config, capsys):
        """Test a mixed run writes checkpoints that eval can score."""
        code = _run(tiny_run_config, prepared, "--watch", "train", "--mode", "mixed", "--fold", "1")
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "[TRACE] kind=sample" in out
        assert "train: mode=mixed fold=1 iterations=2" in out

        run_dir = prepared / "train_mixed_fold1"
        checkpoint = run_dir / "checkpoints" / "ckpt_000002.msup"
        assert checkpoint.exists()
        assert len((run_dir / "loss_log.csv").read_text().splitlines()) == 3

        code = _run(tiny_run_config, prepared, "eval", "--checkpoint", str(checkpoint), "--fold", "1")
        assert code == EXIT_OK
        report = DiceReport.read(prepared / "eval_fold1" / "dice_report.json")
        assert report.regions == ["whole_tumor"]
        assert len(report.cases) == 2

    def test_standard_train_directory(self, prepared, tiny_run_config):
        """Test standard runs land in their own directory."""
        assert _run(tiny_run_config, prepared, "train", "--mode", "standard", "--fold", "2") == EXIT_OK
        assert (prepared / "train_standard_fold2" / "loss_log.csv").exists()


class TestCompare:
    """Test the comparison command."""

    def test_compare_scenario_files(self, tmp_path, tiny_run_config):
        """Test tables are written from saved scenario results."""
        def report(method, score):
            return DiceReport(method=method, fold_id=1, regions=["whole_tumor"],
                              cases=[CaseDice(volume_id=0, scores={"whole_tumor": score})])

        path = write_comparison_inputs(
            tmp_path / "scenario.json",
            [ScenarioResult(label="2FA+4WA", fa_count=2,
                            standard=[report("standard", 0.5)], mixed=[report("mixed", 0.75)])],
        )
        out = tmp_path / "cmp"
        assert _run(tiny_run_config, out, "compare", str(path)) == EXIT_OK
        assert "25.00" in (out / "comparison.txt").read_text()


class TestExitCodes:
    """Test error-to-exit-code mapping."""

    def test_unknown_command(self):
        """Test argparse failures are usage errors."""
        assert main(["bogus"]) == EXIT_USAGE

    def test_invalid_config(self, tmp_path):
        """Test an out-of-range loss weight is a configuration error."""
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"loss": {"a": 2.0}}))
        assert main(["--config", str(path), "--output-dir", str(tmp_path), "folds"]) == EXIT_USAGE

    def test_missing_dataset(self, tmp_path, tiny_run_config):
        """Test training without a dataset is a data error."""
        assert _run(tiny_run_config, tmp_path / "empty", "train") == EXIT_DATA

    def test_missing_scenario_file(self, tmp_path, tiny_run_config):
        """Test comparing a missing file is a data error."""
        assert _run(tiny_run_config, tmp_path, "compare", str(tmp_path / "nope.json")) == EXIT_DATA

    def test_missing_checkpoint(self, prepared, tiny_run_config):
        """Test eval with a missing checkpoint is a data error."""
        code = _run(tiny_run_config, prepared, "eval", "--checkpoint", str(prepared / "x.msup"))
        assert code == EXIT_DATA


@pytest.mark.slow
class TestLongCommands:
    """Slow end-to-end commands."""

    def test_gradcheck_command(self, tmp_path, tiny_run_config):
        """Test the gradient check suite passes and writes its report."""
        assert _run(tiny_run_config, tmp_path, "gradcheck", "--max-checks", "4") == EXIT_OK
        payload = json.loads((tmp_path / "gradcheck_report.json").read_text())
        assert payload["passed"] is True

    def test_crossval_command(self, prepared, tiny_run_config):
        """Test both methods are trained and compared on every fold."""
        assert _run(tiny_run_config, prepared, "crossval") == EXIT_OK
        scenario_dir = prepared / "crossval_fa2"
        assert (scenario_dir / "scenario.json").exists()
        assert (scenario_dir / "fold2" / "mixed" / "dice_report.json").exists()
        assert (scenario_dir / "comparison_trend.csv").exists()
