"""
Circular cross-validation fold planner.

Volume ids are permuted once by seed; fold k (1-based) takes positions
[(k-1)T, kT-1] as test, the next F positions modulo N as fully annotated,
and everything else as weakly annotated.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.errors import DataError


class FoldPlan(BaseModel):
    model_config = ConfigDict(frozen=True)

    fold_id: int = Field(ge=1)
    test_ids: tuple[int, ...]
    fa_ids: tuple[int, ...]
    wa_ids: tuple[int, ...]

    @model_validator(mode="after")
    def _disjoint_sorted(self) -> "FoldPlan":
        sets = (self.test_ids, self.fa_ids, self.wa_ids)
        for ids in sets:
            if list(ids) != sorted(set(ids)):
                raise ValueError("fold id lists must be sorted and unique")
        union = set().union(*map(set, sets))
        if len(union) != sum(len(ids) for ids in sets):
            raise ValueError("test, fa and wa ids must be disjoint")
        return self

    @property
    def all_ids(self) -> list[int]:
        return sorted(set(self.test_ids) | set(self.fa_ids) | set(self.wa_ids))


def plan_folds(
    n: int,
    t: int,
    f: int,
    num_folds: int,
    permutation_seed: Optional[int] = None,
) -> list[FoldPlan]:
    """
    Plan circular folds.

    Args:
        n: Number of volumes (ids 0..n-1)
        t: Test volumes per fold
        f: Fully annotated volumes per fold
        num_folds: Number of folds
        permutation_seed: Seed for the id permutation; None keeps the identity

    Returns:
        One FoldPlan per fold, fold_id starting at 1

    Raises:
        DataError: If the sizes are infeasible
    """
    if n < 1 or t < 1 or f < 0 or num_folds < 1:
        raise DataError(f"invalid fold sizes N={n}, T={t}, F={f}, folds={num_folds}")
    if num_folds * t > n:
        raise DataError(f"{num_folds} folds of {t} test volumes exceed N={n}")
    if f > n - t:
        raise DataError(f"F={f} exceeds the {n - t} non-test volumes")

    if permutation_seed is None:
        order = np.arange(n)
    else:
        order = np.random.default_rng(permutation_seed).permutation(n)

    plans = []
    for k in range(1, num_folds + 1):
        test_pos = set(range((k - 1) * t, k * t))
        fa_pos = {(k * t + i) % n for i in range(f)}
        wa_pos = set(range(n)) - test_pos - fa_pos
        plans.append(
            FoldPlan(
                fold_id=k,
                test_ids=tuple(sorted(int(order[p]) for p in test_pos)),
                fa_ids=tuple(sorted(int(order[p]) for p in fa_pos)),
                wa_ids=tuple(sorted(int(order[p]) for p in wa_pos)),
            )
        )
    return plans


def write_fold_plans(path: Path | str, plans: list[FoldPlan]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"folds": [plan.model_dump(mode="json") for plan in plans]}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_fold_plans(path: Path | str) -> list[FoldPlan]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Fold plan file not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
        return [FoldPlan.model_validate(entry) for entry in payload["folds"]]
    except (json.JSONDecodeError, KeyError, TypeError, ValidationError) as e:
        raise DataError(f"Invalid fold plan file {path}: {e}")


def get_fold(plans: list[FoldPlan], fold_id: int) -> FoldPlan:
    for plan in plans:
        if plan.fold_id == fold_id:
            return plan
    raise DataError(f"Fold {fold_id} not found (have {[p.fold_id for p in plans]})")
