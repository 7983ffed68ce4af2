"""Feature-map statistics loss between batch and stored running statistics."""

from typing import List

import torch

from segnet.stats import LayerStats


def fms_loss(batch_stats: List[LayerStats], running_stats: List[LayerStats]) -> torch.Tensor:
    """
    Sum over layers of ||mean_batch - mean_running||_2 + ||var_batch - var_running||_2.

    Gradients flow through batch_stats only.
    """
    if len(batch_stats) != len(running_stats):
        raise ValueError(f"Misaligned statistics: {len(batch_stats)} batch vs {len(running_stats)} running layers")
    if not batch_stats:
        raise ValueError("fms_loss needs at least one layer")

    total = batch_stats[0].mean.new_zeros(())
    for current, stored in zip(batch_stats, running_stats):
        if current.layer_id != stored.layer_id or current.mean.shape != stored.mean.shape:
            raise ValueError(
                f"Misaligned layer: {current.layer_id} {tuple(current.mean.shape)} "
                f"vs {stored.layer_id} {tuple(stored.mean.shape)}"
            )
        total = total + torch.linalg.vector_norm(current.mean - stored.mean.detach())
        total = total + torch.linalg.vector_norm(current.var - stored.var.detach())
    return total
