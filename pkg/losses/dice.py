"""Soft dice loss over selected classes."""

from typing import Iterable, Optional

import torch
import torch.nn.functional as F

DICE_EPS = 1e-6


def one_hot(labels: torch.Tensor, num_classes: int) -> torch.Tensor:
    """(B, H, W) integer labels -> (B, C, H, W) float one-hot."""
    return F.one_hot(labels.long(), num_classes).permute(0, 3, 1, 2).to(torch.float32)


def foreground_classes(num_classes: int) -> list:
    return list(range(1, num_classes))


def dice_loss(
    pred: torch.Tensor,
    target: torch.Tensor,
    class_set: Optional[Iterable[int]] = None,
    flat: bool = False,
    eps: float = DICE_EPS,
) -> torch.Tensor:
    """
    1 - mean soft dice over class_set, summed over batch and pixels.

    Args:
        pred: (B, C, H, W) probabilities
        target: (B, C, H, W) one-hot target
        class_set: Classes to score (defaults to every foreground class)
        flat: Pool the selected classes into one dice instead of averaging per class

    Returns:
        Scalar loss in [0, 1]
    """
    if pred.shape != target.shape:
        raise ValueError(f"pred shape {tuple(pred.shape)} != target shape {tuple(target.shape)}")
    classes = foreground_classes(pred.shape[1]) if class_set is None else sorted(set(class_set))
    if not classes:
        raise ValueError("dice_loss needs a non-empty class_set")
    if classes[0] < 0 or classes[-1] >= pred.shape[1]:
        raise ValueError(f"class_set {classes} outside [0, {pred.shape[1] - 1}]")

    target = target.to(pred.dtype)
    p = pred[:, classes]
    y = target[:, classes]

    if flat:
        dsc = (2 * (y * p).sum() + eps) / ((y * y).sum() + (p * p).sum() + eps)
        return 1 - dsc

    dims = (0, 2, 3)
    dsc = (2 * (y * p).sum(dims) + eps) / ((y * y).sum(dims) + (p * p).sum(dims) + eps)
    return 1 - dsc.mean()
