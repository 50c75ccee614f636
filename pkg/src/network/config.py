"""
Architecture configuration for the joint segmentation/classification network.

Layer schedule (both padding modes):
- encoder level l: two 3x3 conv+BN+ReLU at width base*2^l, then 2x2/2 max-pool
- bottleneck: two 3x3 conv+BN+ReLU at width base*2^depth
- decoder level l: nearest x2 upsample, 2x2 up-conv+BN+ReLU to width base*2^l,
  concat with the (center-cropped) encoder skip, two 3x3 conv+BN+ReLU
- head: 1x1 conv to K classes (no BN, no ReLU)

The last decoder conv is the classification-branch tap. With valid padding,
a 300x300 input, depth 4 and base width 64, the tap is 64x101x101.
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.errors import ModelConfigError


RegionName = Literal["whole_tumor", "tumor_core", "enhancing_core"]


class BranchConfig(BaseModel):
    """Image-level classification branch: mean-pool, one conv, 7 FC layers."""

    model_config = ConfigDict(frozen=True)

    pool_kernel: tuple[int, int] = (8, 8)
    pool_stride: tuple[int, int] = (8, 8)
    branch_conv_out: int = Field(default=32, ge=1)
    fc_widths: tuple[int, ...] = (256, 128, 64, 64, 64, 32, 2)
    skip_from: int = 1
    skip_to: int = 5

    @field_validator("pool_kernel", "pool_stride")
    @classmethod
    def _positive_pair(cls, v: tuple[int, int]) -> tuple[int, int]:
        if min(v) < 1:
            raise ValueError(f"pooling sizes must be >= 1, got {v}")
        return v

    @field_validator("fc_widths")
    @classmethod
    def _seven_layers(cls, v: tuple[int, ...]) -> tuple[int, ...]:
        if len(v) != 7:
            raise ValueError(f"classification branch needs exactly 7 FC layers, got {len(v)}")
        if v[-1] != 2:
            raise ValueError(f"final FC width must be 2 (absent/present), got {v[-1]}")
        if min(v) < 1:
            raise ValueError("FC widths must be >= 1")
        return v

    @model_validator(mode="after")
    def _skip_range(self) -> "BranchConfig":
        if not 1 <= self.skip_from <= self.skip_to < len(self.fc_widths):
            raise ValueError(
                f"skip connection {self.skip_from}->{self.skip_to} must satisfy "
                f"1 <= skip_from <= skip_to < {len(self.fc_widths)}"
            )
        return self

    def fc_input_widths(self, flat_input: int) -> list[int]:
        """Input width of each FC layer; the layer after skip_to also sees skip_from's output."""
        widths = [flat_input]
        for i in range(1, len(self.fc_widths)):
            width = self.fc_widths[i - 1]
            if i == self.skip_to:
                width += self.fc_widths[self.skip_from - 1]
            widths.append(width)
        return widths


class ModelConfig(BaseModel):
    """Full architecture description."""

    model_config = ConfigDict(frozen=True)

    input_channels: int = Field(default=4, ge=1)
    input_size: tuple[int, int] = (32, 32)
    depth: int = Field(default=2, ge=1)
    base_width: int = Field(default=8, ge=1)
    num_classes: int = Field(default=2, ge=2)
    padding_mode: Literal["same", "valid"] = "same"
    branch: BranchConfig = BranchConfig()
    num_branches: Optional[int] = None
    target_region: RegionName = "whole_tumor"
    dtype: Literal["float64", "float32"] = "float64"
    bn_eps: float = Field(default=1e-5, gt=0)
    bn_momentum: float = Field(default=0.9, ge=0, lt=1)

    @model_validator(mode="after")
    def _consistent(self) -> "ModelConfig":
        expected = 1 if self.num_classes == 2 else self.num_classes - 1
        if self.num_branches is None:
            object.__setattr__(self, "num_branches", expected)
        elif self.num_branches != expected:
            raise ValueError(
                f"num_branches must be {expected} for {self.num_classes} classes, "
                f"got {self.num_branches}"
            )
        h, w = self.input_size
        if self.padding_mode == "same":
            factor = 2 ** self.depth
            if h % factor or w % factor:
                raise ValueError(
                    f"input size {self.input_size} must be divisible by 2^depth={factor} "
                    "with same padding"
                )
        try:
            tap = self.tap_size()
        except ModelConfigError as e:
            raise ValueError(str(e))
        kh, kw = self.branch.pool_kernel
        if kh > tap[0] or kw > tap[1]:
            raise ValueError(f"branch pool kernel {self.branch.pool_kernel} larger than tap {tap}")
        return self

    def widths(self) -> list[int]:
        """Channel width per level, bottleneck last."""
        return [self.base_width * 2 ** level for level in range(self.depth + 1)]

    def _conv(self, size: tuple[int, int], kernel: int) -> tuple[int, int]:
        if self.padding_mode == "same":
            return size
        out = (size[0] - kernel + 1, size[1] - kernel + 1)
        if min(out) < 1:
            raise ModelConfigError(f"valid {kernel}x{kernel} conv collapses a {size} feature map")
        return out

    def level_sizes(self) -> tuple[list[tuple[int, int]], tuple[int, int], list[tuple[int, int]]]:
        """
        Spatial sizes through the network.

        Returns:
            (encoder skip sizes per level, bottleneck size, decoder output sizes
            from deepest to shallowest level)
        """
        size = tuple(self.input_size)
        skips: list[tuple[int, int]] = []
        for _ in range(self.depth):
            size = self._conv(self._conv(size, 3), 3)
            skips.append(size)
            if min(size) < 2:
                raise ModelConfigError(f"feature map {size} too small to pool")
            size = (size[0] // 2, size[1] // 2)
        bottleneck = self._conv(self._conv(size, 3), 3)
        size = bottleneck
        decoder: list[tuple[int, int]] = []
        for level in reversed(range(self.depth)):
            size = self._conv((size[0] * 2, size[1] * 2), 2)
            skip = skips[level]
            if size[0] > skip[0] or size[1] > skip[1]:
                raise ModelConfigError(f"upsampled map {size} exceeds skip {skip} at level {level}")
            size = self._conv(self._conv(size, 3), 3)
            decoder.append(size)
        return skips, bottleneck, decoder

    def tap_size(self) -> tuple[int, int]:
        """Spatial size of the second-to-last segmentation layer (branch input)."""
        return self.level_sizes()[2][-1]

    def branch_feature_size(self) -> tuple[int, int]:
        """Spatial size after the branch mean-pool (valid convention)."""
        th, tw = self.tap_size()
        (kh, kw), (sh, sw) = self.branch.pool_kernel, self.branch.pool_stride
        return (th - kh) // sh + 1, (tw - kw) // sw + 1

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        """Desk-scale binary model: 2 channels, 32x32, depth 2, base 8."""
        defaults = dict(
            input_channels=2,
            input_size=(32, 32),
            depth=2,
            base_width=8,
            num_classes=2,
            branch=BranchConfig(
                pool_kernel=(4, 4),
                pool_stride=(4, 4),
                branch_conv_out=8,
                fc_widths=(32, 16, 16, 16, 16, 8, 2),
            ),
        )
        defaults.update(overrides)
        return cls(**defaults)

    @classmethod
    def gradcheck(cls, **overrides) -> "ModelConfig":
        """Tiny model small enough for exhaustive finite differences."""
        defaults = dict(
            input_channels=2,
            input_size=(8, 8),
            depth=1,
            base_width=2,
            num_classes=2,
            branch=BranchConfig(
                pool_kernel=(2, 2),
                pool_stride=(2, 2),
                branch_conv_out=2,
                fc_widths=(4, 3, 3, 3, 3, 3, 2),
            ),
        )
        defaults.update(overrides)
        return cls(**defaults)

    @classmethod
    def full_scale(cls, **overrides) -> "ModelConfig":
        """300x300 shape-trace preset (valid padding) whose tap is 64x101x101."""
        defaults = dict(
            input_channels=4,
            input_size=(300, 300),
            depth=4,
            base_width=64,
            num_classes=2,
            padding_mode="valid",
            branch=BranchConfig(),
        )
        defaults.update(overrides)
        return cls(**defaults)
