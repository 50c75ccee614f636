"""
Unit tests for dataset indexing, global labels and batch sampling.
"""

import numpy as np
import pytest
from pydantic import ValidationError

from src.data.storage import MemorySliceStore
from src.errors import SamplingError
from src.training.sampling import (
    AnnotationType,
    BatchComposition,
    BatchSampler,
    derive_global_labels,
    index_dataset,
    read_manifest,
    sample_batch,
    training_mask,
    write_manifest,
)


def _store_for(records, size=4):
    """Memory store with a constant image and a matching mask per record."""
    store = MemorySliceStore()
    for record in records:
        mask = None
        if record.annotation_type == AnnotationType.FULL:
            mask = np.zeros((size, size), dtype=np.uint8)
            for subclass, present in enumerate(record.subclass_presence, start=1):
                if present:
                    mask[subclass - 1, :] = subclass
        store.write(record.data_path, np.full((2, size, size), float(record.volume_id)), mask)
    return store


@pytest.fixture
def mixed_records(record_factory):
    records = [record_factory(0, z, "full", (True, True, True)) for z in range(3)]
    records += [record_factory(1, z, "negative") for z in range(3)]
    records += [record_factory(2, z, "weak", (False, True, False)) for z in range(3)]
    return records


class TestSliceRecord:
    """Test manifest record validation."""

    def test_negative_cannot_have_tumor(self, record_factory):
        """Test a negative slice with presence flags is invalid."""
        with pytest.raises(ValidationError):
            record_factory(0, 0, "negative", (True, False, False))

    def test_positive_needs_tumor(self, record_factory):
        """Test a full slice without presence flags is invalid."""
        with pytest.raises(ValidationError):
            record_factory(0, 0, "full")

    def test_manifest_file(self, tmp_path, mixed_records):
        """Test manifest JSON lines read back to equal records."""
        path = write_manifest(tmp_path / "manifest.jsonl", mixed_records)
        assert read_manifest(path) == mixed_records
        assert len(path.read_text().splitlines()) == len(mixed_records)


class TestIndex:
    """Test pool construction."""

    def test_pools_by_type(self, mixed_records):
        """Test positions are grouped per annotation type."""
        index = index_dataset(mixed_records)
        assert index.pool(AnnotationType.FULL) == (0, 1, 2)
        assert index.pool(AnnotationType.NEGATIVE) == (3, 4, 5)
        assert index.subclass_pool(AnnotationType.WEAK, 2) == (6, 7, 8)
        assert index.subclass_pool(AnnotationType.WEAK, 1) == ()

    def test_empty_required_pool(self, record_factory):
        """Test a composition needing weak slices fails on a pool without them."""
        records = [record_factory(0, 0, "full", (True, False, False)),
                   record_factory(0, 1, "negative")]
        with pytest.raises(SamplingError, match="weak"):
            index_dataset(records, BatchComposition(k=1, m=1, n=1))

    def test_empty_records(self):
        """Test indexing nothing fails."""
        with pytest.raises(SamplingError):
            index_dataset([])


class TestGlobalLabels:
    """Test image-level labels from masks and records."""

    def test_binary_regions(self):
        """Test an edema-only mask is whole tumor but not tumor core."""
        mask = np.array([[0, 2], [2, 0]])
        assert derive_global_labels(mask, 2, "whole_tumor").tolist() == [1]
        assert derive_global_labels(mask, 2, "tumor_core").tolist() == [0]

    def test_multiclass_presence(self):
        """Test one label per subclass."""
        mask = np.array([[0, 2], [2, 0]])
        assert derive_global_labels(mask, 4).tolist() == [0, 1, 0]

    def test_from_record(self, record_factory):
        """Test weak records use their stored presence flags."""
        record = record_factory(0, 0, "weak", (False, False, True))
        assert derive_global_labels(record, 4).tolist() == [0, 0, 1]
        assert derive_global_labels(record, 2, "enhancing_core").tolist() == [1]

    def test_binary_training_mask(self):
        """Test binary targets collapse the region classes to 1."""
        mask = np.array([[0, 1], [2, 3]])
        np.testing.assert_array_equal(training_mask(mask, 2, "tumor_core"), [[0, 1], [0, 1]])


class TestBatchSampler:
    """Test batch composition, loading and determinism."""

    def test_layout_and_labels(self, mixed_records):
        """Test supervised slots come first and negatives carry zero masks."""
        comp = BatchComposition(k=2, m=1, n=2)
        sampler = BatchSampler(index_dataset(mixed_records), comp, seed=0,
                               store=_store_for(mixed_records))
        batch = sampler.sample()
        assert batch.images.shape == (5, 2, 4, 4)
        assert batch.masks.shape == (3, 4, 4)
        assert batch.global_labels.shape == (5, 1)
        assert batch.global_labels[:, 0].tolist() == [1, 1, 0, 1, 1]
        assert batch.masks[2].sum() == 0
        assert [r.annotation_type.value for r in batch.records] == [
            "full", "full", "negative", "weak", "weak"
        ]
        assert sampler.access_log == {"full": 2, "negative": 1, "weak": 2}

    def test_same_seed_same_batches(self, mixed_records):
        """Test draws are a function of the seed."""
        index = index_dataset(mixed_records)
        comp = BatchComposition(k=2, m=1, n=2)
        a = BatchSampler(index, comp, seed=5)
        b = BatchSampler(index, comp, seed=5)
        assert [a.draw().indices for _ in range(4)] == [b.draw().indices for _ in range(4)]

    def test_standard_mode_never_reads_weak(self, mixed_records):
        """Test standard mode drops the weak slots."""
        sampler = BatchSampler(index_dataset(mixed_records), BatchComposition(k=2, m=1, n=3),
                               seed=1, store=_store_for(mixed_records), mode="standard")
        for _ in range(5):
            batch = sampler.sample()
            assert batch.size == 3
        assert "weak" not in sampler.access_log

    def test_multiclass_batches_cover_subclasses(self, record_factory):
        """Test every subclass appears even when one is rare."""
        records = [record_factory(0, z, "full", (False, True, False)) for z in range(40)]
        records.append(record_factory(1, 0, "full", (True, False, True)))
        records += [record_factory(2, z, "negative") for z in range(5)]
        records += [record_factory(3, z, "weak", (False, True, False)) for z in range(40)]
        index = index_dataset(records)
        sampler = BatchSampler(index, BatchComposition(k=2, m=1, n=2), seed=11, num_classes=4)
        for _ in range(20):
            draw = sampler.draw()
            seen = np.zeros(3, dtype=bool)
            for pos in draw.full + draw.weak:
                seen |= np.array(records[pos].subclass_presence)
            assert seen.all()

    def test_missing_subclass_pool(self, record_factory):
        """Test multiclass sampling fails when a subclass never occurs."""
        records = [record_factory(0, 0, "full", (True, True, False)),
                   record_factory(0, 1, "negative")]
        with pytest.raises(SamplingError, match="subclass 3"):
            BatchSampler(index_dataset(records), BatchComposition(k=1, m=1, n=0), seed=0,
                         num_classes=4)

    def test_multiclass_masks_keep_labels(self, mixed_records):
        """Test multiclass batches keep raw labels in the masks."""
        batch = sample_batch(index_dataset(mixed_records), BatchComposition(k=1, m=1, n=1), 3,
                             multiclass=True, store=_store_for(mixed_records))
        assert set(np.unique(batch.masks[0])) == {0, 1, 2, 3}
        assert batch.global_labels.shape == (3, 3)


class TestSamplerContract:
    """Test composition, subclass presence and pool uniformity over many draws."""

    DRAWS = 10_000

    def test_composition_and_uniform_pools(self, mixed_records):
        """Test every batch is exactly k/m/n and pool frequencies stay within 3 sigma."""
        comp = BatchComposition(k=2, m=1, n=2)
        index = index_dataset(mixed_records)
        sampler = BatchSampler(index, comp, seed=21)
        counts = np.zeros(len(mixed_records), dtype=np.int64)
        for _ in range(self.DRAWS):
            draw = sampler.draw()
            assert (len(draw.full), len(draw.negative), len(draw.weak)) == (2, 1, 2)
            assert set(draw.full) <= set(index.pool(AnnotationType.FULL))
            assert set(draw.negative) <= set(index.pool(AnnotationType.NEGATIVE))
            assert set(draw.weak) <= set(index.pool(AnnotationType.WEAK))
            np.add.at(counts, draw.indices, 1)

        for annotation, slots in ((AnnotationType.FULL, 2), (AnnotationType.NEGATIVE, 1),
                                  (AnnotationType.WEAK, 2)):
            pool = index.pool(annotation)
            trials = self.DRAWS * slots
            p = 1.0 / len(pool)
            sigma = np.sqrt(trials * p * (1.0 - p))
            for pos in pool:
                assert abs(counts[pos] - trials * p) <= 3.0 * sigma

    def test_multiclass_presence_never_violated(self, record_factory):
        """Test no multiclass batch misses a subclass."""
        records = [record_factory(0, z, "full", (True, False, False)) for z in range(3)]
        records += [record_factory(1, z, "full", (False, True, False)) for z in range(3)]
        records.append(record_factory(2, 0, "full", (False, False, True)))
        records += [record_factory(3, z, "negative") for z in range(2)]
        records += [record_factory(4, z, "weak", (False, True, False)) for z in range(3)]
        records.append(record_factory(5, 0, "weak", (True, True, True)))
        sampler = BatchSampler(index_dataset(records), BatchComposition(k=2, m=1, n=2), seed=8,
                               num_classes=4)
        for _ in range(self.DRAWS):
            draw = sampler.draw()
            assert (len(draw.full), len(draw.negative), len(draw.weak)) == (2, 1, 2)
            seen = np.zeros(3, dtype=bool)
            for pos in draw.full + draw.weak:
                seen |= np.array(records[pos].subclass_presence)
            assert seen.all()
