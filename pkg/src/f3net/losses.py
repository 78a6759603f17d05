"""Combined Dice + cross-entropy segmentation objective.

The total loss is ``lambda1 * dice_loss + lambda2 * ce_loss``; Dice is
computed as soft Dice on foreground probabilities during training and as
hard Dice on binarized predictions at evaluation time (see metrics).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import InvalidLabelError, ShapeError

DICE_EPS = 1e-5


@dataclass(frozen=True)
class LossWeights:
    """Nonnegative weights for the Dice and cross-entropy terms."""

    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or self.lambda1 + self.lambda2 <= 0:
            raise ShapeError(
                f"loss weights must be nonnegative with a positive sum, got "
                f"({self.lambda1}, {self.lambda2})"
            )


def dice_loss(probs: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Soft Dice loss ``1 - (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps)``.

    Sums run over every element, so a perfectly empty prediction of an
    empty target scores a loss of 0.
    """
    if probs.shape != target.shape:
        raise ShapeError(f"probs shape {tuple(probs.shape)} != target shape {tuple(target.shape)}")
    target = target.to(probs.dtype)
    intersection = (probs * target).sum()
    denom = probs.sum() + target.sum()
    return 1.0 - (2.0 * intersection + DICE_EPS) / (denom + DICE_EPS)


def ce_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean voxel-wise cross entropy of class logits against index labels.

    Accepts (C, *spatial) with (*spatial) targets, or batched
    (B, C, *spatial) with (B, *spatial) targets.
    """
    if logits.dim() == target.dim() + 1 and logits.shape[1:] == target.shape:
        logits = logits.unsqueeze(0)
        target = target.unsqueeze(0)
    if logits.dim() != target.dim() + 1 or logits.shape[0] != target.shape[0] \
            or logits.shape[2:] != target.shape[1:]:
        raise ShapeError(
            f"logits shape {tuple(logits.shape)} inconsistent with target {tuple(target.shape)}"
        )
    target = target.long()
    num_classes = logits.shape[1]
    if target.numel() and (target.min() < 0 or target.max() >= num_classes):
        raise InvalidLabelError(
            f"target labels must lie in [0, {num_classes - 1}], got "
            f"[{int(target.min())}, {int(target.max())}]"
        )
    return F.cross_entropy(logits, target)


def foreground_probability(logits: torch.Tensor, batched: bool | None = None) -> torch.Tensor:
    """Softmax probability of any non-background class.

    For two classes this is the softmax probability of class 1.
    """
    if batched is None:
        batched = logits.dim() == 5
    class_dim = 1 if batched else 0
    probs = torch.softmax(logits, dim=class_dim)
    background = probs.select(class_dim, 0)
    return 1.0 - background


def combined_loss(logits: torch.Tensor, target: torch.Tensor, w: LossWeights) -> torch.Tensor:
    """``lambda1 * dice_loss(softmax foreground, target>0) + lambda2 * ce_loss``."""
    batched = logits.dim() == target.dim() + 1 and logits.dim() == 5
    ce = ce_loss(logits, target)
    fg = foreground_probability(logits, batched=batched)
    dice = dice_loss(fg, (target > 0).to(fg.dtype))
    return w.lambda1 * dice + w.lambda2 * ce
