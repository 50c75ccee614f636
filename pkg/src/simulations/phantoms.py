"""
Synthetic multi-channel brain phantoms with nested tumors.

Each volume is a [C, D, H, W] stack of axial slices. The brain is an
ellipsoid of healthy tissue (voxels outside it are exactly 0). Tumor volumes
add an ellipsoidal lesion whose normalized radius d sets the class:
- d <= CORE_RADIUS: non-enhancing core (1)
- d <= RIM_RADIUS: enhancing rim (3)
- d <= 1: edema halo (2)

Channels mimic T1, T1+contrast, T2 and FLAIR; the enhancing rim is brightest
in the contrast channel. Everything is deterministic in (seed, volume_id).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.errors import DataError


CORE_RADIUS = 0.35
RIM_RADIUS = 0.65
BRAIN_SEMI_AXES = (0.45, 0.42, 0.42)
MIN_TUMOR_RADIUS = 0.15
MAX_TUMOR_RADIUS = 0.22
MAX_CENTER_OFFSET = 0.08

CHANNEL_NAMES = ("T1", "T1c", "T2", "FLAIR")

# Mean intensity per class (0 healthy, 1 core, 2 edema, 3 enhancing) per channel.
DEFAULT_INTENSITY_PROFILE: dict[int, tuple[float, float, float, float]] = {
    0: (100.0, 100.0, 100.0, 100.0),
    1: (60.0, 85.0, 150.0, 140.0),
    2: (80.0, 110.0, 165.0, 175.0),
    3: (70.0, 190.0, 135.0, 150.0),
}


class GeneratorConfig(BaseModel):
    """Synthetic dataset recipe."""

    model_config = ConfigDict(frozen=True)

    num_volumes: int = Field(default=20, ge=1)
    tumor_fraction: float = Field(default=0.8, ge=0.0, le=1.0)
    dims: tuple[int, int, int, int] = (2, 16, 32, 32)
    noise_sigma: float = Field(default=5.0, ge=0.0)
    intensity_profile: dict[int, tuple[float, ...]] = Field(
        default_factory=lambda: dict(DEFAULT_INTENSITY_PROFILE)
    )
    seed: int = 0

    @field_validator("dims")
    @classmethod
    def _dims(cls, v: tuple[int, int, int, int]) -> tuple[int, int, int, int]:
        c, d, h, w = v
        if not 1 <= c <= len(CHANNEL_NAMES):
            raise ValueError(f"channel count must be in [1, {len(CHANNEL_NAMES)}], got {c}")
        if min(d, h, w) < 8:
            raise ValueError(f"spatial dims must be >= 8 per axis, got {(d, h, w)}")
        return v

    @model_validator(mode="after")
    def _profile(self) -> "GeneratorConfig":
        if set(self.intensity_profile) != {0, 1, 2, 3}:
            raise ValueError("intensity_profile needs entries for classes 0, 1, 2 and 3")
        channels = self.dims[0]
        for label, means in self.intensity_profile.items():
            if len(means) < channels:
                raise ValueError(f"class {label} profile has {len(means)} channels, need {channels}")
            if min(means[:channels]) <= 0:
                raise ValueError(f"class {label} intensities must be positive")
        return self

    @property
    def num_tumor_volumes(self) -> int:
        return int(np.floor(self.tumor_fraction * self.num_volumes + 0.5))


@dataclass
class Volume:
    """One synthetic case."""
    voxels: np.ndarray
    mask: np.ndarray
    volume_id: int
    tumor_center: Optional[tuple[int, int, int]] = None
    tumor_radii: Optional[tuple[float, float, float]] = None

    @property
    def has_tumor(self) -> bool:
        return bool(self.mask.any())

    @property
    def depth(self) -> int:
        return self.mask.shape[0]


def tumor_volume_ids(config: GeneratorConfig) -> set[int]:
    """Volumes carrying a tumor: the first round(f * N) ids of a seeded permutation."""
    order = np.random.default_rng(config.seed).permutation(config.num_volumes)
    return {int(v) for v in order[: config.num_tumor_volumes]}


def _normalized_distance(shape: tuple[int, int, int], center, radii) -> np.ndarray:
    zz, yy, xx = np.ogrid[: shape[0], : shape[1], : shape[2]]
    return np.sqrt(
        ((zz - center[0]) / radii[0]) ** 2
        + ((yy - center[1]) / radii[1]) ** 2
        + ((xx - center[2]) / radii[2]) ** 2
    )


def generate_volume(config: GeneratorConfig, volume_id: int) -> Volume:
    """
    Build one phantom.

    Args:
        config: Dataset recipe
        volume_id: Index in [0, num_volumes)

    Returns:
        Volume with float64 voxels and uint8 labels

    Raises:
        DataError: If volume_id is out of range
    """
    if not 0 <= volume_id < config.num_volumes:
        raise DataError(f"volume_id {volume_id} outside [0, {config.num_volumes})")
    c, d, h, w = config.dims
    spatial = (d, h, w)
    rng = np.random.default_rng([config.seed, volume_id])

    brain_center = tuple((s - 1) / 2.0 for s in spatial)
    brain_radii = tuple(a * s for a, s in zip(BRAIN_SEMI_AXES, spatial))
    brain = _normalized_distance(spatial, brain_center, brain_radii) <= 1.0

    mask = np.zeros(spatial, dtype=np.uint8)
    center = radii = None
    if volume_id in tumor_volume_ids(config):
        radii = tuple(
            float(rng.uniform(MIN_TUMOR_RADIUS, MAX_TUMOR_RADIUS) * s) for s in spatial
        )
        center = tuple(
            int(round((s - 1) / 2.0 + rng.uniform(-MAX_CENTER_OFFSET, MAX_CENTER_OFFSET) * s))
            for s in spatial
        )
        dist = _normalized_distance(spatial, center, radii)
        lesion = (dist <= 1.0) & brain
        mask[lesion] = 2
        mask[lesion & (dist <= RIM_RADIUS)] = 3
        mask[lesion & (dist <= CORE_RADIUS)] = 1

    profile = np.array(
        [config.intensity_profile[label][:c] for label in range(4)], dtype=np.float64
    )
    means = profile[mask]
    voxels = np.moveaxis(means, -1, 0)
    voxels = voxels + rng.normal(0.0, config.noise_sigma, size=voxels.shape)
    # Tissue stays strictly positive so the background is the only zero.
    voxels = np.where(brain[None], np.maximum(voxels, 1.0), 0.0)

    return Volume(
        voxels=voxels,
        mask=mask,
        volume_id=volume_id,
        tumor_center=center,
        tumor_radii=radii,
    )


def generate_dataset(config: GeneratorConfig) -> list[Volume]:
    return [generate_volume(config, vid) for vid in range(config.num_volumes)]
