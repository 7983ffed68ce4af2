"""Iterative mask refinement, pseudo-labels and the self-learning loss."""

from dataclasses import dataclass
from typing import Iterable, Optional

import torch

from losses.dice import dice_loss, one_hot
from pamr.affinity import AffinityField, PamrConfig, compute_affinity, shift


@dataclass
class RefinedMask:
    soft: torch.Tensor  # o_re, (B, C, H, W)
    hard: torch.Tensor  # y_re, one-hot of the argmax


def propagate(mask: torch.Tensor, affinity: AffinityField) -> torch.Tensor:
    """One step: every pixel becomes the affinity-weighted mean of its neighbours."""
    out = torch.zeros_like(mask)
    for k, offset in enumerate(affinity.offsets):
        out = out + affinity.weights[:, k:k + 1] * shift(mask, offset)
    return out


@torch.no_grad()
def refine(mask: torch.Tensor, image, cfg: PamrConfig) -> RefinedMask:
    """
    Refine a soft mask for cfg.iterations steps with affinities computed once.

    Args:
        mask: (B, C, H, W) soft mask
        image: SliceBatch or (B, C_img, H, W) tensor
    """
    images = image.images if hasattr(image, "images") else image
    if images.shape[0] != mask.shape[0] or images.shape[2:] != mask.shape[2:]:
        raise ValueError(f"Mask {tuple(mask.shape)} and image {tuple(images.shape)} are not compatible")

    affinity = compute_affinity(images.detach(), cfg)
    refined = mask.detach()
    for _ in range(cfg.iterations):
        refined = propagate(refined, affinity)
    return RefinedMask(refined, to_pseudo_label(refined))


def to_pseudo_label(pred: torch.Tensor) -> torch.Tensor:
    """Argmax one-hot (ties go to the lowest class id), detached."""
    return one_hot(pred.detach().argmax(dim=1), pred.shape[1])


def pamr_loss(
    pred: torch.Tensor,
    image,
    cfg: PamrConfig,
    class_set: Optional[Iterable[int]] = None,
    flat: bool = False,
) -> torch.Tensor:
    """Dice between pred and the pseudo-label of its refined (detached) copy."""
    target = refine(pred.detach(), image, cfg).hard
    return dice_loss(pred, target, class_set, flat=flat)
