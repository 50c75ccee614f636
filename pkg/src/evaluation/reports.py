"""
Per-fold Dice reports and scenario comparisons.

Test cases are whole volumes: per-slice predictions are stacked back into a
volume before scoring, so one case is one patient. Tables show Dice on the
0-100 scale; reports store the 0-1 values.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field, field_validator

from src.evaluation.dice import REGION_ORDER, dice_binary, get_region
from src.errors import EvaluationError
from src.training.sampling import AnnotationType, SliceRecord


Predictor = Callable[[np.ndarray], np.ndarray]


@dataclass
class EvalCase:
    """One test volume: slices [D, C, H, W] and labels [D, H, W]."""
    volume_id: int
    images: np.ndarray
    truth: np.ndarray


def load_test_cases(records: Sequence[SliceRecord], store) -> list[EvalCase]:
    """
    Group test slices by volume and stack them in slice order.

    Raises:
        EvaluationError: If a slice has no usable ground truth
    """
    by_volume: dict[int, list[SliceRecord]] = defaultdict(list)
    for record in records:
        by_volume[record.volume_id].append(record)

    cases = []
    for vid in sorted(by_volume):
        images, truths = [], []
        for record in sorted(by_volume[vid], key=lambda r: r.slice_index):
            image, mask = store.read(record.data_path)
            if record.annotation_type == AnnotationType.NEGATIVE:
                mask = np.zeros(image.shape[1:], dtype=np.uint8)
            elif record.annotation_type == AnnotationType.WEAK or mask is None:
                raise EvaluationError(
                    f"test slice {record.data_path} has no ground-truth mask"
                )
            images.append(image)
            truths.append(mask)
        cases.append(EvalCase(volume_id=vid, images=np.stack(images), truth=np.stack(truths)))
    return cases


class CaseDice(BaseModel):
    volume_id: int
    scores: dict[str, float]
    empty_truth: dict[str, bool] = Field(default_factory=dict)

    @field_validator("scores")
    @classmethod
    def _unit_range(cls, v: dict[str, float]) -> dict[str, float]:
        for region, score in v.items():
            if not math.isnan(score) and not 0.0 <= score <= 1.0:
                raise ValueError(f"Dice for {region} outside [0, 1]: {score}")
        return v


class DiceReport(BaseModel):
    """Dice of every test case of one fold for one trained model."""

    method: str = ""
    scenario: str = ""
    fold_id: int = 0
    regions: list[str]
    cases: list[CaseDice] = Field(default_factory=list)

    def mean(self, region: str) -> float:
        """Unweighted mean over cases."""
        if not self.cases:
            return float("nan")
        return float(np.mean([c.scores[region] for c in self.cases]))

    def means(self) -> dict[str, float]:
        return {region: self.mean(region) for region in self.regions}

    def empty_truth_counts(self) -> dict[str, int]:
        return {r: sum(1 for c in self.cases if c.empty_truth.get(r, False)) for r in self.regions}

    @property
    def has_nan(self) -> bool:
        return any(math.isnan(s) for c in self.cases for s in c.scores.values())

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["volume_id"] + self.regions)
        for case in self.cases:
            writer.writerow([case.volume_id] + [f"{case.scores[r]:.6f}" for r in self.regions])
        writer.writerow(["mean"] + [f"{self.mean(r):.6f}" for r in self.regions])
        return buffer.getvalue()

    def to_text(self) -> str:
        header = f"{'case':>8} " + " ".join(f"{r:>15}" for r in self.regions)
        lines = [
            f"Dice (x100) method={self.method or '-'} scenario={self.scenario or '-'} "
            f"fold={self.fold_id}",
            header,
            "-" * len(header),
        ]
        for case in self.cases:
            lines.append(
                f"{case.volume_id:>8} " + " ".join(f"{100 * case.scores[r]:>15.2f}" for r in self.regions)
            )
        lines.append("-" * len(header))
        lines.append(f"{'mean':>8} " + " ".join(f"{100 * self.mean(r):>15.2f}" for r in self.regions))
        counts = self.empty_truth_counts()
        lines.append(f"{'empty':>8} " + " ".join(f"{counts[r]:>15d}" for r in self.regions))
        return "\n".join(lines) + "\n"

    def write(self, directory: Path | str, stem: str = "dice_report") -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = [directory / f"{stem}.json", directory / f"{stem}.csv", directory / f"{stem}.txt"]
        paths[0].write_text(self.model_dump_json(indent=2) + "\n", encoding="utf-8")
        paths[1].write_text(self.to_csv(), encoding="utf-8")
        paths[2].write_text(self.to_text(), encoding="utf-8")
        return paths

    @classmethod
    def read(cls, path: Path | str) -> "DiceReport":
        path = Path(path)
        if not path.exists():
            raise EvaluationError(f"Report not found: {path}")
        return cls.model_validate_json(path.read_text(encoding="utf-8"))


def _center_crop(labels: np.ndarray, height: int, width: int) -> np.ndarray:
    h, w = labels.shape[-2:]
    if (h, w) == (height, width):
        return labels
    if height > h or width > w:
        raise EvaluationError(f"Prediction {height}x{width} larger than truth {h}x{w}")
    top, left = (h - height) // 2, (w - width) // 2
    return labels[..., top:top + height, left:left + width]


def evaluate_fold(
    model: Any,
    cases: Sequence[EvalCase],
    regions: Optional[Sequence[str]] = None,
    *,
    num_classes: Optional[int] = None,
    target_region: Optional[str] = None,
    method: str = "",
    scenario: str = "",
    fold_id: int = 0,
) -> DiceReport:
    """
    Score a model on whole test volumes.

    Args:
        model: A Model, or a callable mapping [D, C, H, W] slices to label maps
        cases: Test volumes with ground truth
        regions: Regions to score; binary models default to their own target
            region, multiclass models to all three
        num_classes / target_region: Needed only for plain callables
        method / scenario / fold_id: Report labels

    Raises:
        EvaluationError: On empty input, missing masks or inconsistent shapes
    """
    if not cases:
        raise EvaluationError("evaluate_fold needs at least one test case")
    config = getattr(model, "config", None)
    if config is not None:
        num_classes = num_classes or config.num_classes
        target_region = target_region or config.target_region
        predict = model.predict_mask
    else:
        predict = model
    num_classes = num_classes or 4
    target_region = target_region or "whole_tumor"
    binary = num_classes == 2
    if regions is None:
        regions = [target_region] if binary else list(REGION_ORDER)
    if binary and any(r != target_region for r in regions):
        raise EvaluationError(f"binary model trained for {target_region} cannot score {list(regions)}")
    specs = [get_region(r) for r in regions]

    report = DiceReport(method=method, scenario=scenario, fold_id=fold_id, regions=list(regions))
    for case in cases:
        if case.truth is None:
            raise EvaluationError(f"case {case.volume_id} has no ground truth")
        pred = np.asarray(predict(case.images))
        if pred.ndim != 3 or pred.shape[0] != case.truth.shape[0]:
            raise EvaluationError(
                f"case {case.volume_id}: prediction {pred.shape} vs truth {case.truth.shape}"
            )
        truth = _center_crop(case.truth, pred.shape[1], pred.shape[2])
        scores, empty = {}, {}
        for spec in specs:
            pred_region = pred == 1 if binary else spec.binarize(pred)
            truth_region = spec.binarize(truth)
            scores[spec.name] = dice_binary(pred_region, truth_region)
            empty[spec.name] = not bool(truth_region.any())
        report.cases.append(CaseDice(volume_id=case.volume_id, scores=scores, empty_truth=empty))
    return report


# ---------------------------------------------------------------------------
# Scenario comparison
# ---------------------------------------------------------------------------


class ScenarioResult(BaseModel):
    """Standard and mixed fold reports for one FA/WA split."""
    label: str
    fa_count: int
    standard: list[DiceReport]
    mixed: list[DiceReport]


def _pooled_mean(reports: Sequence[DiceReport], region: str) -> float:
    scores = [c.scores[region] for r in reports for c in r.cases]
    return float(np.mean(scores)) if scores else float("nan")


@dataclass
class ComparisonReport:
    """Mean, per-fold and trend tables (Dice x100)."""
    regions: list[str]
    mean_rows: list[dict[str, Any]] = field(default_factory=list)
    fold_rows: list[dict[str, Any]] = field(default_factory=list)
    trend_rows: list[dict[str, Any]] = field(default_factory=list)

    @property
    def has_nan(self) -> bool:
        rows = self.mean_rows + self.fold_rows + self.trend_rows
        return any(isinstance(v, float) and math.isnan(v) for row in rows for v in row.values())

    @staticmethod
    def _csv(rows: list[dict[str, Any]]) -> str:
        if not rows:
            return ""
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=list(rows[0].keys()), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: f"{v:.4f}" if isinstance(v, float) else v for k, v in row.items()})
        return buffer.getvalue()

    @staticmethod
    def _table(rows: list[dict[str, Any]]) -> str:
        if not rows:
            return "(empty)\n"
        keys = list(rows[0].keys())
        cells = [[f"{row[k]:.2f}" if isinstance(row[k], float) else str(row[k]) for k in keys]
                 for row in rows]
        widths = [max(len(k), *(len(c[i]) for c in cells)) for i, k in enumerate(keys)]
        lines = ["  ".join(k.rjust(w) for k, w in zip(keys, widths))]
        lines.append("  ".join("-" * w for w in widths))
        lines += ["  ".join(c.rjust(w) for c, w in zip(cell_row, widths)) for cell_row in cells]
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        return (
            "Mean Dice (x100)\n" + self._table(self.mean_rows)
            + "\nPer-fold Dice (x100)\n" + self._table(self.fold_rows)
            + "\nScenario trend (x100)\n" + self._table(self.trend_rows)
        )

    def write(self, directory: Path | str) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        outputs = {
            "comparison.txt": self.to_text(),
            "comparison_means.csv": self._csv(self.mean_rows),
            "comparison_folds.csv": self._csv(self.fold_rows),
            "comparison_trend.csv": self._csv(self.trend_rows),
        }
        paths = []
        for name, content in outputs.items():
            path = directory / name
            path.write_text(content, encoding="utf-8")
            paths.append(path)
        return paths


def compare_scenarios(scenarios: Sequence[ScenarioResult]) -> ComparisonReport:
    """
    Side-by-side standard vs mixed tables.

    Raises:
        EvaluationError: If the methods disagree on folds or regions
    """
    if not scenarios:
        raise EvaluationError("compare_scenarios needs at least one scenario")
    regions = list(scenarios[0].standard[0].regions) if scenarios[0].standard else []
    report = ComparisonReport(regions=regions)

    for scenario in scenarios:
        std_folds = [r.fold_id for r in scenario.standard]
        mix_folds = [r.fold_id for r in scenario.mixed]
        if not std_folds or std_folds != mix_folds:
            raise EvaluationError(
                f"scenario {scenario.label}: fold mismatch standard={std_folds} mixed={mix_folds}"
            )
        for std, mix in zip(scenario.standard, scenario.mixed):
            if std.regions != regions or mix.regions != regions:
                raise EvaluationError(f"scenario {scenario.label}: region mismatch in fold {std.fold_id}")

        for method, reports in (("standard", scenario.standard), ("mixed", scenario.mixed)):
            row: dict[str, Any] = {"scenario": scenario.label, "method": method}
            for region in regions:
                row[region] = 100.0 * _pooled_mean(reports, region)
            report.mean_rows.append(row)

        for region in regions:
            std_row: dict[str, Any] = {"scenario": scenario.label, "region": region, "method": "standard"}
            mix_row: dict[str, Any] = {"scenario": scenario.label, "region": region, "method": "mixed"}
            delta_row: dict[str, Any] = {"scenario": scenario.label, "region": region, "method": "delta"}
            for std, mix in zip(scenario.standard, scenario.mixed):
                key = f"fold{std.fold_id}"
                std_row[key] = 100.0 * std.mean(region)
                mix_row[key] = 100.0 * mix.mean(region)
                delta_row[key] = mix_row[key] - std_row[key]
            std_row["mean"] = 100.0 * _pooled_mean(scenario.standard, region)
            mix_row["mean"] = 100.0 * _pooled_mean(scenario.mixed, region)
            delta_row["mean"] = mix_row["mean"] - std_row["mean"]
            report.fold_rows += [std_row, mix_row, delta_row]

    for region in regions:
        for scenario in sorted(scenarios, key=lambda s: s.fa_count):
            std_mean = 100.0 * _pooled_mean(scenario.standard, region)
            mix_mean = 100.0 * _pooled_mean(scenario.mixed, region)
            report.trend_rows.append({
                "region": region,
                "fa_count": scenario.fa_count,
                "standard": std_mean,
                "mixed": mix_mean,
                "gap": mix_mean - std_mean,
            })
    return report


def write_comparison_inputs(path: Path | str, scenarios: Sequence[ScenarioResult]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps([s.model_dump(mode="json") for s in scenarios], indent=2) + "\n",
        encoding="utf-8",
    )
    return path


def read_comparison_inputs(path: Path | str) -> list[ScenarioResult]:
    path = Path(path)
    if not path.exists():
        raise EvaluationError(f"Scenario file not found: {path}")
    try:
        return [ScenarioResult.model_validate(entry) for entry in json.loads(path.read_text())]
    except (json.JSONDecodeError, ValueError) as e:
        raise EvaluationError(f"Invalid scenario file {path}: {e}")
