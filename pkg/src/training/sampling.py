"""
Dataset indexing and batch sampling for mixed supervision.

Three annotation types of training slices:
- full: tumor present, pixel mask available
- negative: no tumor (mask is the zero matrix)
- weak: tumor present, only slice-level presence labels

A batch holds k full + m negative + n weak slices, supervised ones first.
In multiclass mode every tumor subclass must appear at least once per batch:
the sampler rejection-samples up to MAX_PRESENCE_ATTEMPTS times, then patches
slots (last weak first, then last full) with slices from the rarest missing
subclass pool.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Literal, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.engine.tensor import Tensor
from src.errors import SamplingError
from src.evaluation.dice import REGIONS


MAX_PRESENCE_ATTEMPTS = 100
NUM_SUBCLASSES = 3
SUBCLASS_NAMES = {1: "non-enhancing core", 2: "edema", 3: "enhancing core"}


class AnnotationType(str, Enum):
    FULL = "full"
    NEGATIVE = "negative"
    WEAK = "weak"


class SliceRecord(BaseModel):
    """One axial slice in the manifest."""

    model_config = ConfigDict(frozen=True)

    volume_id: int = Field(ge=0)
    slice_index: int = Field(ge=0)
    data_path: str
    annotation_type: AnnotationType
    subclass_presence: tuple[bool, bool, bool] = (False, False, False)

    @model_validator(mode="after")
    def _consistent(self) -> "SliceRecord":
        has_tumor = any(self.subclass_presence)
        if self.annotation_type == AnnotationType.NEGATIVE and has_tumor:
            raise ValueError("negative slices cannot carry subclass presence")
        if self.annotation_type != AnnotationType.NEGATIVE and not has_tumor:
            raise ValueError(f"{self.annotation_type.value} slices must contain tumor")
        return self

    @property
    def has_tumor(self) -> bool:
        return any(self.subclass_presence)

    def with_annotation(self, annotation: AnnotationType) -> "SliceRecord":
        return self.model_copy(update={"annotation_type": annotation})


class BatchComposition(BaseModel):
    """Slots per batch: k full positives, m negatives, n weak positives."""

    model_config = ConfigDict(frozen=True)

    k: int = Field(default=4, ge=1)
    m: int = Field(default=2, ge=0)
    n: int = Field(default=4, ge=0)

    @property
    def size(self) -> int:
        return self.k + self.m + self.n

    @property
    def supervised(self) -> int:
        return self.k + self.m


@dataclass
class BatchDraw:
    """Record indices chosen for one batch, in slot order (full, negative, weak)."""
    full: list[int]
    negative: list[int]
    weak: list[int]
    patched: int = 0

    @property
    def indices(self) -> list[int]:
        return self.full + self.negative + self.weak


@dataclass
class Batch:
    """
    Loaded batch. Supervised images occupy positions [0, k+m).

    masks covers the supervised images; global_labels covers every image
    with one column per classification branch.
    """
    images: Tensor
    masks: np.ndarray
    global_labels: np.ndarray
    composition: BatchComposition
    records: list[SliceRecord]

    @property
    def num_supervised(self) -> int:
        return self.composition.supervised

    @property
    def size(self) -> int:
        return self.images.shape[0]


@dataclass(frozen=True)
class DatasetIndex:
    """Immutable per-type pools of record positions, plus per-subclass pools."""
    records: tuple[SliceRecord, ...]
    pools: dict[AnnotationType, tuple[int, ...]]
    subclass_pools: dict[tuple[AnnotationType, int], tuple[int, ...]] = field(default_factory=dict)

    def pool(self, annotation: AnnotationType) -> tuple[int, ...]:
        return self.pools.get(annotation, ())

    def subclass_pool(self, annotation: AnnotationType, subclass: int) -> tuple[int, ...]:
        return self.subclass_pools.get((annotation, subclass), ())

    def require(self, comp: BatchComposition, multiclass: bool = False) -> None:
        """
        Check that the pools can serve a composition.

        Raises:
            SamplingError: Naming the first empty required pool
        """
        needed = [(AnnotationType.FULL, comp.k), (AnnotationType.NEGATIVE, comp.m),
                  (AnnotationType.WEAK, comp.n)]
        for annotation, count in needed:
            if count > 0 and not self.pool(annotation):
                raise SamplingError(f"{annotation.value} pool empty (composition needs {count})")
        if multiclass:
            for subclass in range(1, NUM_SUBCLASSES + 1):
                available = len(self.subclass_pool(AnnotationType.FULL, subclass))
                if comp.n > 0:
                    available += len(self.subclass_pool(AnnotationType.WEAK, subclass))
                if available == 0:
                    raise SamplingError(
                        f"subclass {subclass} ({SUBCLASS_NAMES[subclass]}) pool empty"
                    )


def index_dataset(
    records: Sequence[SliceRecord],
    comp: Optional[BatchComposition] = None,
    multiclass: bool = False,
) -> DatasetIndex:
    """
    Split records into annotation pools and per-subclass positive pools.

    Args:
        records: Manifest records (order defines record positions)
        comp: When given, every pool it needs must be non-empty
        multiclass: Also require a non-empty pool per tumor subclass

    Raises:
        SamplingError: On an empty record list or an empty required pool
    """
    if not records:
        raise SamplingError("Cannot index an empty record list")
    pools: dict[AnnotationType, list[int]] = {a: [] for a in AnnotationType}
    subclass_pools: dict[tuple[AnnotationType, int], list[int]] = {}
    for pos, record in enumerate(records):
        pools[record.annotation_type].append(pos)
        for subclass, present in enumerate(record.subclass_presence, start=1):
            if present:
                subclass_pools.setdefault((record.annotation_type, subclass), []).append(pos)

    index = DatasetIndex(
        records=tuple(records),
        pools={a: tuple(p) for a, p in pools.items()},
        subclass_pools={key: tuple(p) for key, p in subclass_pools.items()},
    )
    if comp is not None:
        index.require(comp, multiclass)
    return index


def derive_global_labels(
    source: Union[SliceRecord, np.ndarray],
    num_classes: int,
    target_region: str = "whole_tumor",
) -> np.ndarray:
    """
    Image-level labels, one per classification branch.

    Args:
        source: A label mask, or a record whose stored presence flags are used
        num_classes: 2 collapses to one label for target_region; otherwise
            one label per tumor subclass 1..K-1
        target_region: Region used by binary models

    Returns:
        int64 array of 0/1 labels
    """
    if isinstance(source, SliceRecord):
        presence = np.array(source.subclass_presence, dtype=bool)
    else:
        mask = np.asarray(source)
        presence = np.array(
            [(mask == c).any() for c in range(1, NUM_SUBCLASSES + 1)], dtype=bool
        )
    if num_classes == 2:
        classes = sorted(REGIONS[target_region].classes)
        return np.array([int(presence[[c - 1 for c in classes]].any())], dtype=np.int64)
    return presence[: num_classes - 1].astype(np.int64)


def training_mask(mask: np.ndarray, num_classes: int, target_region: str = "whole_tumor") -> np.ndarray:
    """Segmentation target: region membership for binary models, raw labels otherwise."""
    if num_classes == 2:
        return REGIONS[target_region].binarize(mask).astype(np.int64)
    return np.asarray(mask, dtype=np.int64)


class BatchSampler:
    """
    Draws batches from a DatasetIndex with a private random stream.

    Sampling is uniform with replacement within each pool, so one slice may
    fill several slots of the same batch. In standard mode the weak pool is
    never touched (n is forced to 0).
    """

    def __init__(
        self,
        index: DatasetIndex,
        comp: BatchComposition,
        seed: int,
        *,
        store=None,
        num_classes: int = 2,
        target_region: str = "whole_tumor",
        mode: Literal["standard", "mixed"] = "mixed",
        dtype: str = "float64",
    ):
        if num_classes not in (2, NUM_SUBCLASSES + 1):
            raise SamplingError(f"num_classes must be 2 or {NUM_SUBCLASSES + 1}, got {num_classes}")
        if mode == "standard":
            comp = BatchComposition(k=comp.k, m=comp.m, n=0)
        self.index = index
        self.comp = comp
        self.store = store
        self.num_classes = num_classes
        self.multiclass = num_classes > 2
        self.target_region = target_region
        self.mode = mode
        self.dtype = dtype
        self.rng = np.random.default_rng(seed)
        self.access_log: Counter[str] = Counter()
        index.require(comp, self.multiclass)

    # -- drawing ----------------------------------------------------------

    def _draw_from(self, pool: tuple[int, ...], count: int) -> list[int]:
        if count == 0:
            return []
        picks = self.rng.integers(0, len(pool), size=count)
        return [pool[i] for i in picks]

    def _missing_subclasses(self, draw: BatchDraw) -> list[int]:
        seen = np.zeros(NUM_SUBCLASSES, dtype=bool)
        for pos in draw.full + draw.weak:
            seen |= np.array(self.index.records[pos].subclass_presence, dtype=bool)
        return [c + 1 for c in range(NUM_SUBCLASSES) if not seen[c]]

    def _patch(self, draw: BatchDraw) -> None:
        """Overwrite slots from the back (weak, then full) with rarest-missing-subclass slices."""
        slots = [(AnnotationType.WEAK, i) for i in reversed(range(len(draw.weak)))]
        slots += [(AnnotationType.FULL, i) for i in reversed(range(len(draw.full)))]
        while True:
            missing = self._missing_subclasses(draw)
            if not missing:
                return
            candidates = []
            for subclass in missing:
                for annotation, _ in slots:
                    pool = self.index.subclass_pool(annotation, subclass)
                    if pool:
                        candidates.append((len(pool), subclass))
                        break
            if not slots or not candidates:
                raise SamplingError(f"Cannot place subclasses {missing} in a batch of {self.comp}")
            _, rarest = min(candidates)
            for pos, (annotation, slot) in enumerate(slots):
                pool = self.index.subclass_pool(annotation, rarest)
                if pool:
                    target = draw.weak if annotation == AnnotationType.WEAK else draw.full
                    target[slot] = pool[int(self.rng.integers(0, len(pool)))]
                    draw.patched += 1
                    del slots[pos]
                    break

    def draw(self) -> BatchDraw:
        """Choose record positions for one batch without loading any data."""
        comp = self.comp
        for _ in range(MAX_PRESENCE_ATTEMPTS):
            draw = BatchDraw(
                full=self._draw_from(self.index.pool(AnnotationType.FULL), comp.k),
                negative=self._draw_from(self.index.pool(AnnotationType.NEGATIVE), comp.m),
                weak=self._draw_from(self.index.pool(AnnotationType.WEAK), comp.n),
            )
            if not self.multiclass or not self._missing_subclasses(draw):
                return draw
        self._patch(draw)
        return draw

    # -- loading ----------------------------------------------------------

    def load(self, draw: BatchDraw) -> Batch:
        """Read the drawn slices and build images, masks and global labels."""
        if self.store is None:
            raise SamplingError("BatchSampler has no slice store to load from")
        images, masks, labels, records = [], [], [], []
        for pos in draw.indices:
            record = self.index.records[pos]
            self.access_log[record.annotation_type.value] += 1
            image, mask = self.store.read(record.data_path)
            if record.annotation_type == AnnotationType.FULL:
                if mask is None:
                    raise SamplingError(f"full slice {record.data_path} has no stored mask")
                masks.append(training_mask(mask, self.num_classes, self.target_region))
                labels.append(derive_global_labels(mask, self.num_classes, self.target_region))
            elif record.annotation_type == AnnotationType.NEGATIVE:
                masks.append(np.zeros(image.shape[1:], dtype=np.int64))
                labels.append(np.zeros(1 if self.num_classes == 2 else self.num_classes - 1,
                                       dtype=np.int64))
            else:
                labels.append(derive_global_labels(record, self.num_classes, self.target_region))
            images.append(image)
            records.append(record)

        return Batch(
            images=Tensor(np.stack(images), dtype=self.dtype),
            masks=np.stack(masks),
            global_labels=np.stack(labels),
            composition=self.comp,
            records=records,
        )

    def sample(self) -> Batch:
        return self.load(self.draw())


def sample_batch(
    index: DatasetIndex,
    comp: BatchComposition,
    rng_seed: int,
    multiclass: bool,
    *,
    store=None,
    target_region: str = "whole_tumor",
) -> Batch:
    """One batch from a fresh sampler seeded with rng_seed."""
    sampler = BatchSampler(
        index,
        comp,
        rng_seed,
        store=store,
        num_classes=NUM_SUBCLASSES + 1 if multiclass else 2,
        target_region=target_region,
    )
    return sampler.sample()


# ---------------------------------------------------------------------------
# Manifest I/O
# ---------------------------------------------------------------------------


def write_manifest(path: Path | str, records: Iterable[SliceRecord]) -> Path:
    """JSON lines, one record per line, fields in declared order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(record.model_dump_json())
            fh.write("\n")
    return path


def read_manifest(path: Path | str) -> list[SliceRecord]:
    path = Path(path)
    if not path.exists():
        raise SamplingError(f"Manifest not found: {path}")
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(SliceRecord.model_validate(json.loads(line)))
            except (json.JSONDecodeError, ValueError) as e:
                raise SamplingError(f"{path}:{lineno}: invalid manifest record: {e}")
    return records
