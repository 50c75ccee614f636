"""
Unit tests for phantom generation, preprocessing, slice storage and fold planning.
"""

import numpy as np
import pytest

from src.data.folds import FoldPlan, get_fold, plan_folds, read_fold_plans, write_fold_plans
from src.data.preprocessing import (
    assign_roles,
    build_dataset,
    extract_slices,
    normalize_intensity,
    slice_path,
)
from src.data.storage import DirectorySliceStore, MemorySliceStore, decode_blob, encode_blob
from src.errors import DataError
from src.simulations.phantoms import GeneratorConfig, Volume, generate_volume, tumor_volume_ids
from src.training.sampling import AnnotationType


class TestPhantoms:
    """Test synthetic volume generation."""

    def test_tumor_count(self):
        """Test 20 volumes at fraction 0.8 give 16 tumor volumes."""
        config = GeneratorConfig(num_volumes=20, tumor_fraction=0.8)
        assert config.num_tumor_volumes == 16
        assert len(tumor_volume_ids(config)) == 16

    def test_deterministic(self):
        """Test a volume depends only on (seed, id)."""
        config = GeneratorConfig(num_volumes=3, tumor_fraction=1.0, seed=9)
        a, b = generate_volume(config, 1), generate_volume(config, 1)
        np.testing.assert_array_equal(a.voxels, b.voxels)
        np.testing.assert_array_equal(a.mask, b.mask)

    def test_background_and_classes(self):
        """Test zero background and all three tumor classes in a tumor volume."""
        config = GeneratorConfig(num_volumes=2, tumor_fraction=1.0, seed=4)
        volume = generate_volume(config, 0)
        assert volume.voxels[:, 0, 0, 0].tolist() == [0.0, 0.0]
        assert set(np.unique(volume.mask)) == {0, 1, 2, 3}
        assert (volume.voxels[:, volume.mask > 0] >= 1.0).all()

    def test_regions_nested_around_center(self):
        """Test labels step inward edema -> enhancing rim -> core toward the center."""
        config = GeneratorConfig(num_volumes=1, tumor_fraction=1.0, seed=2)
        volume = generate_volume(config, 0)
        depth_rank = {0: 0, 2: 1, 3: 2, 1: 3}
        center = np.array(volume.tumor_center)
        assert volume.mask[tuple(center)] == 1
        for point in np.argwhere(volume.mask > 0):
            inner = point + np.sign(center - point)
            assert depth_rank[int(volume.mask[tuple(inner)])] >= depth_rank[int(volume.mask[tuple(point)])]

    def test_tumor_free_volume(self):
        """Test a zero tumor fraction gives empty masks."""
        config = GeneratorConfig(num_volumes=2, tumor_fraction=0.0)
        assert not generate_volume(config, 1).has_tumor

    def test_volume_id_range(self):
        """Test ids outside [0, N) raise DataError."""
        with pytest.raises(DataError):
            generate_volume(GeneratorConfig(num_volumes=2), 2)


class TestPreprocessing:
    """Test normalization and slice extraction."""

    def test_median_normalization(self):
        """Test [0, 1, 2, 3, 4] normalizes to [0, 40, 80, 120, 160]."""
        voxels = np.array([0.0, 1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 1, 5)
        volume = Volume(voxels=voxels, mask=np.zeros((1, 1, 5), dtype=np.uint8), volume_id=0)
        out = normalize_intensity(volume)
        np.testing.assert_allclose(out.voxels.reshape(-1), [0, 40, 80, 120, 160])

    def test_all_zero_channel(self):
        """Test a channel with no tissue raises DataError."""
        volume = Volume(voxels=np.zeros((1, 1, 2, 2)), mask=np.zeros((1, 2, 2), dtype=np.uint8),
                        volume_id=3)
        with pytest.raises(DataError):
            normalize_intensity(volume)

    def test_roles_set_annotation(self):
        """Test fa keeps masks, wa keeps presence only, tumor-free slices are negative."""
        config = GeneratorConfig(num_volumes=1, tumor_fraction=1.0, dims=(2, 10, 16, 16), seed=1)
        volume = generate_volume(config, 0)
        fa = extract_slices(volume, "fa")
        wa = extract_slices(volume, "wa")
        assert len(fa) == 10
        for f, w in zip(fa, wa):
            if f.record.has_tumor:
                assert f.record.annotation_type == AnnotationType.FULL and f.mask is not None
                assert w.record.annotation_type == AnnotationType.WEAK and w.mask is None
            else:
                assert f.record.annotation_type == AnnotationType.NEGATIVE and f.mask is None
        assert fa[0].record.data_path == slice_path(0, 0)

    def test_negative_role_on_tumor_volume(self):
        """Test labelling a tumor volume negative is an error."""
        config = GeneratorConfig(num_volumes=1, tumor_fraction=1.0, dims=(2, 8, 16, 16))
        with pytest.raises(DataError):
            extract_slices(generate_volume(config, 0), "negative")

    def test_build_dataset_counts(self, memory_dataset, small_generator):
        """Test every slice of every volume lands in the store."""
        summary, store = memory_dataset
        counts = summary.counts()
        assert counts["slices"] == small_generator.num_volumes * small_generator.dims[1]
        assert counts["weak"] == 0
        assert counts["full"] > 0 and counts["negative"] > 0
        assert len(store) == counts["slices"]

    def test_assign_roles(self, small_fold):
        """Test fold re-labelling by volume role."""
        assert {r.volume_id for r in small_fold.test} == {0, 1}
        assert {r.annotation_type for r in small_fold.wa} == {AnnotationType.WEAK, AnnotationType.NEGATIVE}
        assert all(r.annotation_type != AnnotationType.WEAK for r in small_fold.fa)
        assert all(r.volume_id in (2, 3) for r in small_fold.training("standard"))

    def test_assign_roles_unknown_volume(self, memory_dataset):
        """Test a record outside the plan raises DataError."""
        summary, _ = memory_dataset
        plan = FoldPlan(fold_id=1, test_ids=(0,), fa_ids=(1,), wa_ids=(2,))
        with pytest.raises(DataError):
            assign_roles(summary.records, plan)


class TestStorage:
    """Test MSVD blobs and slice stores."""

    def test_blob_with_mask(self):
        """Test values and mask decode back; float32 is the default precision."""
        values = np.arange(8, dtype=float).reshape(2, 2, 2)
        mask = np.array([[0, 3], [1, 2]])
        decoded, decoded_mask = decode_blob(encode_blob(values, mask))
        assert decoded.dtype == np.float32
        np.testing.assert_array_equal(decoded, values)
        np.testing.assert_array_equal(decoded_mask, mask)

    def test_truncated_blob(self):
        """Test a cut payload raises DataError."""
        data = encode_blob(np.ones((1, 2, 2)))
        with pytest.raises(DataError):
            decode_blob(data[:-3])

    def test_directory_store(self, tmp_path):
        """Test slices written to disk read back without a mask."""
        store = DirectorySliceStore(tmp_path)
        store.write("slices/a.msvd", np.ones((2, 3, 3)), None)
        image, mask = store.read("slices/a.msvd")
        assert image.shape == (2, 3, 3)
        assert mask is None
        with pytest.raises(DataError):
            store.read("slices/missing.msvd")

    def test_memory_store_missing(self):
        """Test an unknown path raises DataError."""
        with pytest.raises(DataError):
            MemorySliceStore().read("nope")


class TestFolds:
    """Test circular fold planning."""

    def test_identity_folds(self):
        """Test N=285, T=57, F=5: fold 1 and the wrap-around of fold 5."""
        plans = plan_folds(285, 57, 5, 5)
        assert plans[0].test_ids == tuple(range(57))
        assert plans[0].fa_ids == tuple(range(57, 62))
        assert plans[4].test_ids == tuple(range(228, 285))
        assert plans[4].fa_ids == (0, 1, 2, 3, 4)
        for plan in plans:
            assert len(plan.wa_ids) == 285 - 57 - 5
            assert plan.all_ids == list(range(285))

    @pytest.mark.parametrize("fa_count", [5, 15, 30])
    def test_partition_sizes(self, fa_count):
        """Test every fold partitions all volumes."""
        for plan in plan_folds(285, 57, fa_count, 5, permutation_seed=1):
            assert len(plan.fa_ids) == fa_count
            assert len(plan.wa_ids) == 285 - 57 - fa_count
            assert len(plan.all_ids) == 285

    def test_test_sets_disjoint_across_folds(self):
        """Test each volume is tested at most once."""
        plans = plan_folds(20, 4, 4, 5, permutation_seed=3)
        tested = [v for plan in plans for v in plan.test_ids]
        assert sorted(tested) == list(range(20))

    def test_infeasible(self):
        """Test impossible sizes raise DataError."""
        with pytest.raises(DataError):
            plan_folds(10, 3, 2, 4)
        with pytest.raises(DataError):
            plan_folds(10, 3, 8, 1)

    def test_plan_file(self, tmp_path):
        """Test fold plans persist and fold lookup works."""
        plans = plan_folds(20, 4, 4, 5, permutation_seed=0)
        path = write_fold_plans(tmp_path / "folds.json", plans)
        loaded = read_fold_plans(path)
        assert loaded == plans
        assert get_fold(loaded, 3).fold_id == 3
        with pytest.raises(DataError):
            get_fold(loaded, 9)
