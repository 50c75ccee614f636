"""
Shared test fixtures for unit and integration tests.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from src.data.folds import FoldPlan
from src.data.preprocessing import assign_roles, build_dataset
from src.data.storage import MemorySliceStore
from src.network.config import ModelConfig
from src.simulations.phantoms import GeneratorConfig
from src.training.sampling import AnnotationType, BatchComposition, SliceRecord


@pytest.fixture
def small_model_config() -> ModelConfig:
    """Toy binary model on 16x16 slices."""
    return ModelConfig.toy(input_size=(16, 16))


@pytest.fixture
def small_generator() -> GeneratorConfig:
    """Six tumor volumes of 2 x 10 x 16 x 16 voxels."""
    return GeneratorConfig(num_volumes=6, tumor_fraction=1.0, dims=(2, 10, 16, 16), seed=3)


@pytest.fixture
def small_composition() -> BatchComposition:
    return BatchComposition(k=2, m=1, n=2)


@pytest.fixture
def memory_dataset(small_generator):
    """(summary, store) for the small generator, slices held in memory."""
    store = MemorySliceStore()
    summary = build_dataset(small_generator, store)
    return summary, store


@pytest.fixture
def small_fold(memory_dataset):
    """Fold 1: volumes 0-1 test, 2-3 fully annotated, 4-5 weakly annotated."""
    summary, _ = memory_dataset
    plan = FoldPlan(fold_id=1, test_ids=(0, 1), fa_ids=(2, 3), wa_ids=(4, 5))
    return assign_roles(summary.records, plan)


def make_record(volume_id, slice_index, annotation, presence=(False, False, False)) -> SliceRecord:
    return SliceRecord(
        volume_id=volume_id,
        slice_index=slice_index,
        data_path=f"slices/vol{volume_id:04d}_s{slice_index:03d}.msvd",
        annotation_type=AnnotationType(annotation),
        subclass_presence=presence,
    )


@pytest.fixture
def record_factory():
    return make_record


@pytest.fixture
def tiny_run_config(tmp_path) -> Path:
    """JSON config for fast CLI runs."""
    config = {
        "data": {"num_volumes": 8, "tumor_fraction": 1.0, "dims": [2, 10, 16, 16]},
        "model": {"input_size": [16, 16]},
        "composition": {"k": 2, "m": 1, "n": 1},
        "optimizer": {"batches_per_iteration": 1},
        "training": {"iterations": 2, "checkpoint_every": 1, "keep_checkpoints": 3},
        "folds": {"num_folds": 2, "test_per_fold": 2, "fa_per_fold": 2},
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    return path


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
