"""
Unit tests for Dice scoring, fold reports and scenario comparison.
"""

import json
import math

import numpy as np
import pytest

from src.errors import EvaluationError
from src.evaluation.dice import REGIONS, dice, dice_binary, get_region
from src.evaluation.reports import (
    CaseDice,
    DiceReport,
    EvalCase,
    ScenarioResult,
    compare_scenarios,
    evaluate_fold,
    load_test_cases,
    read_comparison_inputs,
    write_comparison_inputs,
)


def _report(method, fold_id, scores, region="whole_tumor"):
    return DiceReport(
        method=method,
        fold_id=fold_id,
        regions=[region],
        cases=[CaseDice(volume_id=i, scores={region: s}) for i, s in enumerate(scores)],
    )


class TestDice:
    """Test the overlap score."""

    def test_half_overlap(self):
        """Test two 2-pixel masks sharing one pixel score 0.5."""
        pred = np.array([1, 1, 0, 0], dtype=bool)
        truth = np.array([0, 1, 1, 0], dtype=bool)
        assert dice_binary(pred, truth) == pytest.approx(0.5)

    def test_both_empty(self):
        """Test empty prediction and truth count as perfect agreement."""
        assert dice_binary(np.zeros(4), np.zeros(4)) == 1.0

    def test_region_grouping(self):
        """Test tumor core ignores edema."""
        pred = np.array([[1, 2], [0, 3]])
        truth = np.array([[1, 1], [0, 3]])
        assert dice(pred, truth, REGIONS["whole_tumor"]) == pytest.approx(1.0)
        assert dice(pred, truth, REGIONS["tumor_core"]) == pytest.approx(0.8)
        assert dice(pred, truth, REGIONS["enhancing_core"]) == pytest.approx(1.0)

    def test_matches_set_count_oracle(self, rng):
        """Test dice equals 2|A&B| / (|A| + |B|) on 10^4 random 16x16 pairs and every region."""

        def oracle(pred, truth, classes):
            a = {(int(i), int(j)) for i, j in zip(*np.nonzero(np.isin(pred, list(classes))))}
            b = {(int(i), int(j)) for i, j in zip(*np.nonzero(np.isin(truth, list(classes))))}
            if not a and not b:
                return 1.0
            return 2.0 * len(a & b) / (len(a) + len(b))

        for _ in range(10_000):
            density = rng.uniform(0.0, 1.0)
            pred = np.where(rng.random((16, 16)) < density, rng.integers(1, 4, (16, 16)), 0)
            truth = np.where(rng.random((16, 16)) < density, rng.integers(1, 4, (16, 16)), 0)
            for region in REGIONS.values():
                assert dice(pred, truth, region) == oracle(pred, truth, region.classes)

    def test_shape_mismatch(self):
        """Test unequal shapes raise EvaluationError."""
        with pytest.raises(EvaluationError):
            dice(np.zeros((2, 2)), np.zeros((3, 3)), REGIONS["whole_tumor"])

    def test_unknown_region(self):
        """Test a typo in a region name is reported."""
        with pytest.raises(EvaluationError):
            get_region("core")


class TestEvaluateFold:
    """Test per-volume scoring."""

    def test_perfect_predictor(self):
        """Test a predictor returning the truth scores 1 everywhere."""
        truth = np.zeros((2, 4, 4), dtype=np.uint8)
        truth[0, 1:3, 1:3] = 3
        truth[1, 0, 0] = 2
        case = EvalCase(volume_id=7, images=np.zeros((2, 1, 4, 4)), truth=truth)
        report = evaluate_fold(lambda images: truth, [case], num_classes=4, method="mixed", fold_id=2)
        assert report.regions == ["whole_tumor", "tumor_core", "enhancing_core"]
        assert report.means() == {"whole_tumor": 1.0, "tumor_core": 1.0, "enhancing_core": 1.0}

    def test_binary_prediction_uses_target_region(self):
        """Test binary label 1 is compared against the trained region."""
        truth = np.array([[[0, 2], [1, 3]]], dtype=np.uint8)
        pred = np.array([[[0, 0], [1, 1]]])
        case = EvalCase(volume_id=0, images=np.zeros((1, 1, 2, 2)), truth=truth)
        report = evaluate_fold(lambda images: pred, [case], num_classes=2, target_region="tumor_core")
        assert report.mean("tumor_core") == pytest.approx(1.0)
        with pytest.raises(EvaluationError):
            evaluate_fold(lambda images: pred, [case], ["whole_tumor"], num_classes=2,
                          target_region="tumor_core")

    def test_truth_cropped_to_prediction(self):
        """Test valid-padding predictions score against the centered truth window."""
        truth = np.zeros((1, 6, 6), dtype=np.uint8)
        truth[0, 2:4, 2:4] = 1
        case = EvalCase(volume_id=0, images=np.zeros((1, 1, 6, 6)), truth=truth)
        pred = np.ones((1, 2, 2), dtype=np.int64)
        report = evaluate_fold(lambda images: pred, [case], num_classes=2)
        assert report.mean("whole_tumor") == pytest.approx(1.0)

    def test_empty_truth_flagged(self):
        """Test cases without the region are counted."""
        case = EvalCase(volume_id=0, images=np.zeros((1, 1, 2, 2)), truth=np.zeros((1, 2, 2)))
        report = evaluate_fold(lambda images: np.zeros((1, 2, 2)), [case], num_classes=2)
        assert report.empty_truth_counts() == {"whole_tumor": 1}
        assert report.mean("whole_tumor") == 1.0

    def test_no_cases(self):
        """Test scoring nothing is an error."""
        with pytest.raises(EvaluationError):
            evaluate_fold(lambda images: images, [], num_classes=2)

    def test_load_cases_from_fold(self, small_fold, memory_dataset):
        """Test test slices regroup into volumes in slice order."""
        _, store = memory_dataset
        cases = load_test_cases(small_fold.test, store)
        assert [c.volume_id for c in cases] == [0, 1]
        assert cases[0].images.shape == (10, 2, 16, 16)
        assert cases[0].truth.shape == (10, 16, 16)
        assert cases[0].truth.max() > 0

    def test_load_cases_rejects_weak(self, small_fold, memory_dataset):
        """Test weak slices have no ground truth to score."""
        _, store = memory_dataset
        weak = [r for r in small_fold.wa if r.has_tumor]
        with pytest.raises(EvaluationError):
            load_test_cases(weak, store)


class TestReports:
    """Test report files and comparison tables."""

    def test_report_files(self, tmp_path):
        """Test json/csv/txt outputs and a JSON round trip."""
        report = _report("standard", 1, [0.5, 1.0])
        paths = report.write(tmp_path)
        assert [p.suffix for p in paths] == [".json", ".csv", ".txt"]
        assert DiceReport.read(paths[0]) == report
        assert paths[1].read_text().splitlines()[-1] == "mean,0.750000"
        assert "75.00" in paths[2].read_text()

    def test_score_range_checked(self):
        """Test Dice outside [0, 1] is rejected."""
        with pytest.raises(ValueError):
            CaseDice(volume_id=0, scores={"whole_tumor": 1.5})

    def test_nan_detected(self):
        """Test NaN scores are flagged."""
        assert _report("mixed", 1, [float("nan")]).has_nan

    def test_comparison_tables(self, tmp_path):
        """Test pooled means, per-fold deltas and the trend ordering."""
        wide = ScenarioResult(
            label="8FA+4WA",
            fa_count=8,
            standard=[_report("standard", 1, [0.6]), _report("standard", 2, [0.8])],
            mixed=[_report("mixed", 1, [0.7]), _report("mixed", 2, [0.8])],
        )
        narrow = ScenarioResult(
            label="2FA+10WA",
            fa_count=2,
            standard=[_report("standard", 1, [0.2, 0.4])],
            mixed=[_report("mixed", 1, [0.5, 0.7])],
        )
        report = compare_scenarios([wide, narrow])
        assert report.mean_rows[0] == {"scenario": "8FA+4WA", "method": "standard",
                                       "whole_tumor": pytest.approx(70.0)}
        delta = [r for r in report.fold_rows if r["method"] == "delta" and r["scenario"] == "8FA+4WA"][0]
        assert delta["fold1"] == pytest.approx(10.0)
        assert delta["fold2"] == pytest.approx(0.0)
        assert [r["fa_count"] for r in report.trend_rows] == [2, 8]
        assert report.trend_rows[0]["gap"] == pytest.approx(30.0)
        assert not report.has_nan

        names = [p.name for p in report.write(tmp_path)]
        assert "comparison_means.csv" in names
        assert "Scenario trend" in (tmp_path / "comparison.txt").read_text()

    def test_fold_mismatch(self):
        """Test standard and mixed must cover the same folds."""
        scenario = ScenarioResult(label="x", fa_count=1,
                                  standard=[_report("standard", 1, [0.5])],
                                  mixed=[_report("mixed", 2, [0.5])])
        with pytest.raises(EvaluationError):
            compare_scenarios([scenario])

    def test_scenario_file(self, tmp_path):
        """Test scenario inputs persist for later comparison."""
        scenario = ScenarioResult(label="x", fa_count=1,
                                  standard=[_report("standard", 1, [0.5])],
                                  mixed=[_report("mixed", 1, [0.6])])
        path = write_comparison_inputs(tmp_path / "scenario.json", [scenario])
        assert read_comparison_inputs(path) == [scenario]
        with pytest.raises(EvaluationError):
            read_comparison_inputs(tmp_path / "missing.json")
