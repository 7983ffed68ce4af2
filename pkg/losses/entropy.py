import torch

LOG_CLAMP = 1e-12


def entropy_loss(pred: torch.Tensor) -> torch.Tensor:
    """Mean per-pixel Shannon entropy (natural log) of a (B, C, H, W) probability map."""
    return -(pred * torch.log(pred.clamp_min(LOG_CLAMP))).sum(dim=1).mean()
