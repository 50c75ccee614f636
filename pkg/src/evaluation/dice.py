"""
Dice overlap and tumor region groupings.

Label convention: 0 non-tumor, 1 non-enhancing core, 2 edema, 3 enhancing core.
Regions: whole_tumor {1, 2, 3}, tumor_core {1, 3}, enhancing_core {3}.

DSC = 2|P & T| / (|P| + |T|); two empty sets score 1.0.
"""

from __future__ import annotations

import numpy as np
from pydantic import BaseModel, ConfigDict

from src.errors import EvaluationError


class RegionSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    classes: frozenset[int]

    def binarize(self, labels: np.ndarray) -> np.ndarray:
        return np.isin(np.asarray(labels), sorted(self.classes))


REGIONS: dict[str, RegionSpec] = {
    "whole_tumor": RegionSpec(name="whole_tumor", classes=frozenset({1, 2, 3})),
    "tumor_core": RegionSpec(name="tumor_core", classes=frozenset({1, 3})),
    "enhancing_core": RegionSpec(name="enhancing_core", classes=frozenset({3})),
}
REGION_ORDER = ("whole_tumor", "tumor_core", "enhancing_core")


def get_region(name: str) -> RegionSpec:
    if name not in REGIONS:
        raise EvaluationError(f"Unknown region '{name}'. Available: {', '.join(REGION_ORDER)}")
    return REGIONS[name]


def binarize(labels: np.ndarray, region: RegionSpec) -> np.ndarray:
    return region.binarize(labels)


def dice_binary(pred: np.ndarray, truth: np.ndarray) -> float:
    """Dice of two boolean masks of equal shape."""
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise EvaluationError(f"Shape mismatch: prediction {pred.shape} vs truth {truth.shape}")
    denom = int(pred.sum()) + int(truth.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(pred, truth).sum()) / denom


def dice(pred: np.ndarray, truth: np.ndarray, region: RegionSpec) -> float:
    """
    Dice score of two label maps restricted to a region.

    Args:
        pred: Predicted labels
        truth: Ground-truth labels, same shape
        region: Classes counted as foreground

    Returns:
        Score in [0, 1]

    Raises:
        EvaluationError: On shape mismatch
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise EvaluationError(f"Shape mismatch: prediction {pred.shape} vs truth {truth.shape}")
    return dice_binary(region.binarize(pred), region.binarize(truth))
