"""
Mixed-supervision losses.

- Segmentation: weighted pixelwise cross-entropy on the k+m supervised images.
  Pixel weights are recomputed for every batch: each class c gets a total
  budget t_c (renormalized over the classes present in the batch) shared
  equally by its N_c pixels, so all weights sum to 1.
- Classification: mean cross-entropy of every branch over the whole batch,
  averaged across branches.
- Total: a * Loss_s + (1 - a) * Loss_c.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, TYPE_CHECKING

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.engine import ops
from src.engine.tensor import Tensor
from src.errors import LossError

if TYPE_CHECKING:
    from src.network.model import ForwardOutput
    from src.training.sampling import Batch


WEIGHT_SUM_TOLERANCE = 1e-9


class LossConfig(BaseModel):
    """Loss mixing weight and per-class pixel budgets."""

    model_config = ConfigDict(frozen=True)

    a: float = Field(default=0.7, ge=0.0, le=1.0)
    target_weights: tuple[float, ...] = (0.7, 0.3)
    per_pixel_mean: bool = False

    @model_validator(mode="after")
    def _valid_targets(self) -> "LossConfig":
        t = self.target_weights
        if len(t) < 2:
            raise ValueError(f"need at least 2 target weights, got {len(t)}")
        if min(t) < 0:
            raise ValueError(f"target weights must be >= 0, got {t}")
        if abs(sum(t) - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise ValueError(f"target weights must sum to 1, got {sum(t)!r}")
        return self

    @property
    def num_classes(self) -> int:
        return len(self.target_weights)

    @classmethod
    def for_classes(cls, num_classes: int, **overrides) -> "LossConfig":
        """Defaults: binary a=0.7, t=(0.7, 0.3); four classes a=0.3, t=(0.7, 0.1, 0.1, 0.1)."""
        if num_classes == 2:
            defaults = dict(a=0.7, target_weights=(0.7, 0.3))
        elif num_classes == 4:
            defaults = dict(a=0.3, target_weights=(0.7, 0.1, 0.1, 0.1))
        else:
            rest = 0.3 / (num_classes - 1)
            defaults = dict(a=0.3, target_weights=(0.7,) + (rest,) * (num_classes - 1))
        defaults.update(overrides)
        return cls(**defaults)


@dataclass
class PixelWeights:
    """Per-pixel weights aligned with the supervised masks."""
    weights: np.ndarray
    class_counts: np.ndarray
    effective_targets: np.ndarray

    @property
    def total(self) -> float:
        return float(self.weights.sum())


@dataclass
class LossBreakdown:
    loss_s: Tensor
    loss_c: Tensor
    total: Tensor

    def values(self) -> dict[str, float]:
        return {"loss_s": self.loss_s.item(), "loss_c": self.loss_c.item(), "total": self.total.item()}


def crop_masks(masks: np.ndarray, height: int, width: int) -> np.ndarray:
    """Center-crop [M, H, W] masks to the logits' spatial size (valid padding)."""
    h, w = masks.shape[-2:]
    if (h, w) == (height, width):
        return masks
    if height > h or width > w:
        raise LossError(f"Cannot crop masks of size {h}x{w} to {height}x{width}")
    top, left = (h - height) // 2, (w - width) // 2
    return masks[..., top:top + height, left:left + width]


def compute_pixel_weights(masks: np.ndarray, config: LossConfig) -> PixelWeights:
    """
    Batch-dependent pixel weights.

    Args:
        masks: Integer label maps [M, H, W] of the supervised images
        config: Supplies the per-class targets t_c

    Returns:
        PixelWeights where every class-c pixel weighs t~_c / N_c

    Raises:
        LossError: If the mask set is empty or holds labels outside [0, K)
    """
    masks = np.asarray(masks)
    if masks.size == 0:
        raise LossError("Cannot compute pixel weights for an empty mask set")
    k = config.num_classes
    if masks.min() < 0 or masks.max() >= k:
        raise LossError(f"mask labels must lie in [0, {k}), got range [{masks.min()}, {masks.max()}]")

    counts = np.bincount(masks.reshape(-1).astype(np.int64), minlength=k)
    targets = np.asarray(config.target_weights, dtype=np.float64)
    present = counts > 0
    budget = targets[present].sum()
    if budget <= 0:
        raise LossError("All classes present in the batch have zero target weight")
    effective = np.where(present, targets / budget, 0.0)
    per_pixel = np.divide(effective, counts, out=np.zeros(k), where=present)
    return PixelWeights(
        weights=per_pixel[masks],
        class_counts=counts,
        effective_targets=effective,
    )


def segmentation_loss(
    seg_logits: Tensor,
    masks: np.ndarray,
    weights: PixelWeights,
    *,
    per_pixel_mean: bool = False,
) -> Tensor:
    """
    Loss_s = -sum_i sum_xy w(x, y) * log p_l(x, y).

    Args:
        seg_logits: [M, K, H, W] logits of the supervised images
        masks: [M, H, W] labels (already cropped to the logits' size)
        weights: Computed from the same masks
        per_pixel_mean: Additionally divide by the number of supervised pixels

    Raises:
        LossError: If shapes disagree
    """
    masks = np.asarray(masks)
    if seg_logits.ndim != 4:
        raise LossError(f"seg_logits must be [M, K, H, W], got {seg_logits.shape}")
    expected = (seg_logits.shape[0],) + seg_logits.shape[2:]
    if masks.shape != expected or weights.weights.shape != expected:
        raise LossError(
            f"masks {masks.shape} / weights {weights.weights.shape} do not match logits {expected}"
        )
    log_p = ops.log_softmax(seg_logits, axis=1)
    picked = ops.pick(log_p, masks.astype(np.int64), axis=1)
    factor = -1.0 / masks.size if per_pixel_mean else -1.0
    return ops.scale(ops.weighted_sum(picked, weights.weights), factor)


def classification_loss(class_logits: Sequence[Tensor], global_labels: np.ndarray) -> Tensor:
    """
    Mean over branches of the per-branch mean cross-entropy.

    Args:
        class_logits: One [N, 2] tensor per branch
        global_labels: [N, num_branches] array of 0/1 labels

    Raises:
        LossError: On labels outside {0, 1} or a branch/label count mismatch
    """
    labels = np.asarray(global_labels)
    if labels.ndim == 1:
        labels = labels[:, None]
    if labels.shape[1] != len(class_logits):
        raise LossError(f"{labels.shape[1]} label columns for {len(class_logits)} branches")
    if not np.isin(labels, (0, 1)).all():
        raise LossError("global labels must be 0 or 1")
    if not class_logits:
        raise LossError("classification_loss needs at least one branch")

    losses = [
        ops.cross_entropy_from_logits(logits, labels[:, b].astype(np.int64))
        for b, logits in enumerate(class_logits)
    ]
    total = losses[0]
    for loss in losses[1:]:
        total = ops.add(total, loss)
    return ops.scale(total, 1.0 / len(losses))


def total_loss(loss_s: Tensor, loss_c: Tensor, a: float) -> Tensor:
    """
    Convex combination a * loss_s + (1 - a) * loss_c.

    a == 1 and a == 0 return the active component unchanged in value.

    Raises:
        LossError: If a is outside [0, 1]
    """
    if not 0.0 <= a <= 1.0:
        raise LossError(f"a must lie in [0, 1], got {a}")
    if a == 1.0:
        return ops.scale(loss_s, 1.0)
    if a == 0.0:
        return ops.scale(loss_c, 1.0)
    return ops.add(ops.scale(loss_s, a), ops.scale(loss_c, 1.0 - a))


def compute_losses(output: "ForwardOutput", batch: "Batch", config: LossConfig) -> LossBreakdown:
    """
    All losses for one forward pass over a sampled batch.

    Supervised images occupy the first k+m positions of the batch; their
    masks are cropped to the logits' size before weighting.
    """
    supervised = batch.num_supervised
    seg_logits = output.seg_logits
    if seg_logits.shape[1] != config.num_classes:
        raise LossError(
            f"model has {seg_logits.shape[1]} classes but loss targets {config.num_classes}"
        )
    if supervised < seg_logits.shape[0]:
        seg_logits = ops.slice_axis(seg_logits, 0, 0, supervised)
    masks = crop_masks(batch.masks, seg_logits.shape[2], seg_logits.shape[3])
    weights = compute_pixel_weights(masks, config)
    loss_s = segmentation_loss(seg_logits, masks, weights, per_pixel_mean=config.per_pixel_mean)
    loss_c = classification_loss(output.class_logits, batch.global_labels)
    return LossBreakdown(loss_s=loss_s, loss_c=loss_c, total=total_loss(loss_s, loss_c, config.a))
