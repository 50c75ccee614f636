"""
Volume preprocessing and slice extraction.

- normalize_intensity: per channel, divide by the median of non-zero voxels
  and multiply by a fixed constant
- extract_slices: one record per axial slice, annotation type set by the
  volume's role (fa / wa / negative)
- assign_roles: re-label an extracted manifest for one cross-validation fold
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

from src.data.folds import FoldPlan
from src.errors import DataError
from src.simulations.phantoms import GeneratorConfig, Volume, generate_volume
from src.training.sampling import AnnotationType, NUM_SUBCLASSES, SliceRecord


DEFAULT_SCALE = 100.0

Role = Literal["fa", "wa", "negative"]


def normalize_intensity(volume: Volume, scale_constant: float = DEFAULT_SCALE) -> Volume:
    """
    Median-of-non-zero normalization, channel by channel.

    Raises:
        DataError: If a channel has no non-zero voxel
    """
    voxels = np.asarray(volume.voxels, dtype=np.float64)
    out = np.empty_like(voxels)
    for ch in range(voxels.shape[0]):
        channel = voxels[ch]
        nonzero = channel[channel != 0]
        if nonzero.size == 0:
            raise DataError(f"volume {volume.volume_id}: channel {ch} is all zero")
        out[ch] = channel / np.median(nonzero) * scale_constant
    return Volume(
        voxels=out,
        mask=volume.mask,
        volume_id=volume.volume_id,
        tumor_center=volume.tumor_center,
        tumor_radii=volume.tumor_radii,
    )


def slice_path(volume_id: int, slice_index: int) -> str:
    return f"slices/vol{volume_id:04d}_s{slice_index:03d}.msvd"


def subclass_presence(mask: np.ndarray) -> tuple[bool, bool, bool]:
    return tuple(bool((mask == c).any()) for c in range(1, NUM_SUBCLASSES + 1))


def annotation_for(role: Role, has_tumor: bool) -> AnnotationType:
    """Per-slice annotation rule shared by extraction and fold re-labelling."""
    if not has_tumor:
        return AnnotationType.NEGATIVE
    if role == "fa":
        return AnnotationType.FULL
    if role == "wa":
        return AnnotationType.WEAK
    raise DataError("negative role assigned to a slice that contains tumor")


@dataclass
class SliceData:
    """An extracted slice: manifest record plus its pixel data."""
    record: SliceRecord
    image: np.ndarray
    mask: Optional[np.ndarray]


def extract_slices(volume: Volume, plan_role: Role) -> list[SliceData]:
    """
    Cut a volume into axial slices.

    fa volumes keep masks on tumor slices; wa volumes keep only presence
    labels. Tumor-free slices are negative in every role and carry no stored
    mask (their mask is the zero matrix).

    Raises:
        DataError: If plan_role is "negative" but the volume contains tumor
    """
    if plan_role not in ("fa", "wa", "negative"):
        raise DataError(f"Unknown slice role {plan_role!r}")
    slices = []
    for z in range(volume.depth):
        mask = volume.mask[z]
        presence = subclass_presence(mask)
        annotation = annotation_for(plan_role, any(presence))
        record = SliceRecord(
            volume_id=volume.volume_id,
            slice_index=z,
            data_path=slice_path(volume.volume_id, z),
            annotation_type=annotation,
            subclass_presence=presence,
        )
        slices.append(
            SliceData(
                record=record,
                image=volume.voxels[:, z].copy(),
                mask=mask.copy() if annotation == AnnotationType.FULL else None,
            )
        )
    return slices


@dataclass
class DatasetSummary:
    records: list[SliceRecord]
    tumor_volume_ids: list[int]
    negative_volume_ids: list[int]

    def counts(self) -> dict[str, int]:
        by_type = {a.value: 0 for a in AnnotationType}
        for record in self.records:
            by_type[record.annotation_type.value] += 1
        return {
            "volumes": len(self.tumor_volume_ids) + len(self.negative_volume_ids),
            "tumor_volumes": len(self.tumor_volume_ids),
            "negative_volumes": len(self.negative_volume_ids),
            "slices": len(self.records),
            **by_type,
        }


def build_dataset(config: GeneratorConfig, store, scale_constant: float = DEFAULT_SCALE) -> DatasetSummary:
    """
    Generate, normalize and slice every volume; slices go to `store`.

    All volumes are extracted with the fa role (tumor-free ones with the
    negative role); folds re-label them later with assign_roles.
    """
    records: list[SliceRecord] = []
    tumor_ids, negative_ids = [], []
    for vid in range(config.num_volumes):
        volume = normalize_intensity(generate_volume(config, vid), scale_constant)
        role: Role = "fa" if volume.has_tumor else "negative"
        (tumor_ids if volume.has_tumor else negative_ids).append(vid)
        for piece in extract_slices(volume, role):
            store.write(piece.record.data_path, piece.image, piece.mask)
            records.append(piece.record)
    return DatasetSummary(records=records, tumor_volume_ids=tumor_ids, negative_volume_ids=negative_ids)


@dataclass
class FoldRecords:
    """Manifest records split for one fold."""
    fold_id: int
    fa: list[SliceRecord] = field(default_factory=list)
    wa: list[SliceRecord] = field(default_factory=list)
    test: list[SliceRecord] = field(default_factory=list)

    def training(self, mode: Literal["standard", "mixed"]) -> list[SliceRecord]:
        """Standard training sees FA volumes only; mixed adds the weak volumes."""
        return list(self.fa) if mode == "standard" else list(self.fa) + list(self.wa)


def assign_roles(records: Sequence[SliceRecord], plan: FoldPlan) -> FoldRecords:
    """
    Re-label an all-fa manifest for one fold.

    FA volumes keep full annotation, WA volumes turn tumor slices weak, test
    volumes are returned untouched for evaluation.

    Raises:
        DataError: If a record's volume is not covered by the plan
    """
    fa_ids, wa_ids, test_ids = set(plan.fa_ids), set(plan.wa_ids), set(plan.test_ids)
    result = FoldRecords(fold_id=plan.fold_id)
    for record in records:
        vid = record.volume_id
        if vid in test_ids:
            result.test.append(record)
        elif vid in fa_ids:
            result.fa.append(record.with_annotation(annotation_for("fa", record.has_tumor)))
        elif vid in wa_ids:
            result.wa.append(record.with_annotation(annotation_for("wa", record.has_tumor)))
        else:
            raise DataError(f"volume {vid} is not part of fold {plan.fold_id}")
    return result
